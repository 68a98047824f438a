"""FCRL training loss and its exact gradient.

The trainer minimises::

    total = label_loss + beta * rate - beta * lam * contrastive

where ``label_loss`` is the binary cross-entropy of the predictor,
``rate`` the closed-form KL(q(z|x) || N(0, I)) averaged over rows, and
``contrastive`` the within-group contrastive lower bound on I(x : z | c).
``rate - contrastive`` is therefore an upper estimate of I(z : c).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import model as M
from .numeric import NumericError, Rng, log_softplus, logsumexp, softplus_log_grad


@dataclass
class LossBreakdown:
    label_loss: float
    rate: float
    contrastive: float
    total: float
    beta: float
    lam: float

    def as_dict(self) -> dict:
        return asdict(self)


def label_loss(probs, y) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def rate_term(mu, sigma) -> float:
    """Mean over rows of 1/2 sum_k (mu^2 + sigma^2 - 1 - 2 log sigma)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    kl = 0.5 * (mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma))
    return float(np.mean(np.sum(kl, axis=1)))


def group_indices(c) -> list[np.ndarray]:
    c = np.asarray(c, dtype=np.int64)
    return [np.flatnonzero(c == g) for g in np.unique(c)]


def contrastive_from_log_scores(log_scores: np.ndarray) -> np.ndarray:
    """Per-row bound terms for one group.

    ``log_scores[i, j]`` is f(z_j, x_i, c); row i's positive pair sits on the
    diagonal and is part of its own denominator.
    """
    m = log_scores.shape[0]
    return np.diag(log_scores) - (logsumexp(log_scores, axis=1) - np.log(m))


def contrastive_term(exp_scores_fn: Callable[[np.ndarray, np.ndarray, int], np.ndarray], Z, X, c) -> float:
    """Mean over the batch of the within-group contrastive bound.

    Args:
        exp_scores_fn: ``fn(Z_group, X_group, g)`` returning the (m, m) matrix
            whose [i, j] entry is exp{f(z_j, x_i, g)}.
        Z, X: aligned representation and input rows.
        c: group id per row.
    """
    Z = np.asarray(Z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    c = np.asarray(c, dtype=np.int64)
    if Z.shape[0] == 0:
        raise ValueError("empty batch")
    total = 0.0
    for idx in group_indices(c):
        scores = np.asarray(exp_scores_fn(Z[idx], X[idx], int(c[idx[0]])), dtype=np.float64)
        total += float(np.sum(contrastive_from_log_scores(np.log(scores))))
    return total / Z.shape[0]


def model_score_matrix(params) -> Callable[[np.ndarray, np.ndarray, int], np.ndarray]:
    """exp-score matrix builder backed by a model's scorer parameters."""

    def fn(Zg, Xg, g):
        E, _ = M.embed(params, Xg)
        return np.exp(_log_score_matrix(params, Zg @ params["W_z"].T, E, g))

    return fn


def _log_score_matrix(params, Zpp, E, g) -> np.ndarray:
    return log_softplus((E @ params["W_c"][g]) @ Zpp.T)


def model_contrastive(params, Z, X, c) -> float:
    """Contrastive term using the model's scorer, computed in log space."""
    E, _ = M.embed(params, X)
    Zpp = Z @ params["W_z"].T
    c = np.asarray(c, dtype=np.int64)
    total = 0.0
    for idx in group_indices(c):
        L = _log_score_matrix(params, Zpp[idx], E[idx], int(c[idx[0]]))
        total += float(np.sum(contrastive_from_log_scores(L)))
    return total / Z.shape[0]


def total_loss(model: M.FcrlModel, X, y, c, beta: float, lam: float = 2.0,
               rng: Rng | None = None, noise=None, need_grad: bool = True):
    """Loss breakdown and gradients for one batch.

    Returns ``(LossBreakdown, grads)`` where ``grads`` maps every parameter
    name to d total / d parameter (``None`` when ``need_grad`` is false).

    Raises:
        NumericError: if any term is non-finite, naming the term.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if lam <= 0:
        raise ValueError("lam must be positive")
    P = model.params
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    c = np.asarray(c, dtype=np.int64).reshape(-1)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")

    mu, sigma, enc = M.encode(P, X)
    Z, eps = M.reparameterize(mu, sigma, rng, noise=noise)
    probs, pc = M.predict(P, Z, c, model.K, model.conditional)
    l_label = label_loss(probs, y)
    l_rate = rate_term(mu, sigma)

    E, ec = M.embed(P, X)
    Zpp = Z @ P["W_z"].T
    groups = group_indices(c)
    contrast_sum = 0.0
    group_cache = []
    for idx in groups:
        g = int(c[idx[0]])
        A = E[idx] @ P["W_c"][g]
        S = A @ Zpp[idx].T
        L = log_softplus(S)
        lse = logsumexp(L, axis=1)
        contrast_sum += float(np.sum(np.diag(L) - lse + np.log(len(idx))))
        group_cache.append((idx, g, A, S, L, lse))
    l_contrast = contrast_sum / n

    total = l_label + beta * l_rate - beta * lam * l_contrast
    for name, value in (("label_loss", l_label), ("rate", l_rate), ("contrastive", l_contrast)):
        if not np.isfinite(value):
            raise NumericError(f"non-finite {name}: {value}")
    breakdown = LossBreakdown(l_label, l_rate, l_contrast, float(total), float(beta), float(lam))
    if not need_grad:
        return breakdown, None

    grads = {k: np.zeros_like(v) for k, v in P.items()}

    # label path: d BCE / d logit = (p - y) / n where the clamp is inactive
    dlogit = np.where(pc["active"], (probs - y) / n, 0.0)[:, None]
    grads["pred_W2"] = pc["H"].T @ dlogit
    grads["pred_b2"] = dlogit.sum(axis=0)
    dHp = (dlogit @ P["pred_W2"].T) * (pc["pre"] > 0)
    grads["pred_W1"] = pc["U"].T @ dHp
    grads["pred_b1"] = dHp.sum(axis=0)
    dZ = (dHp @ P["pred_W1"].T)[:, : model.d]

    # contrastive path, scaled by -beta * lam
    coef = -beta * lam / n
    dE = np.zeros_like(E)
    dZpp = np.zeros_like(Zpp)
    if coef != 0.0:
        for idx, g, A, S, L, lse in group_cache:
            soft = np.exp(L - lse[:, None])
            dL = coef * (np.eye(len(idx)) - soft)
            dS = dL * softplus_log_grad(S)
            Zg = Zpp[idx]
            dA = dS @ Zg
            dZpp[idx] += dS.T @ A
            grads["W_c"][g] += E[idx].T @ dA
            dE[idx] += dA @ P["W_c"][g].T
    grads["W_z"] = dZpp.T @ Z
    dZ = dZ + dZpp @ P["W_z"]
    grads["emb_W2"] = ec["H"].T @ dE
    grads["emb_b2"] = dE.sum(axis=0)
    dHe = (dE @ P["emb_W2"].T) * (ec["pre"] > 0)
    grads["emb_W1"] = X.T @ dHe
    grads["emb_b1"] = dHe.sum(axis=0)

    # encoder: through Z = mu + eps * sigma and through the rate term
    dmu = dZ + beta * mu / n
    dsigma = dZ * eps + beta * (sigma - 1.0 / sigma) / n
    dls = dsigma * sigma * enc["sigma_active"]
    grads["enc_Wmu"] = enc["H"].T @ dmu
    grads["enc_bmu"] = dmu.sum(axis=0)
    grads["enc_Wls"] = enc["H"].T @ dls
    grads["enc_bls"] = dls.sum(axis=0)
    dH = (dmu @ P["enc_Wmu"].T + dls @ P["enc_Wls"].T) * (enc["pre"] > 0)
    grads["enc_W1"] = X.T @ dH
    grads["enc_b1"] = dH.sum(axis=0)
    return breakdown, grads

"""Mutual-information lower bounds implied by statistical parity.

For a binary group attribute with P(c=1) = pi, any decision rule acting on z
with parity gap Delta satisfies

    I(z : c) >= g(pi, Delta) = (1 - pi) f(pi Delta) + pi f((1 - pi) Delta)

where f is Toussaint's lower bound on KL divergence in terms of variational
distance. For K groups the bound becomes f(min_k pi_k * Delta).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .evaluate import ProbeSpec, evaluate
from .model import FcrlModel
from .numeric import AdamState, Rng, adam_step
from .objective import model_contrastive, rate_term, total_loss
from . import model as M

VIOLATION_SLACK = -0.05
SCORER_PARAMS = ("emb_W1", "emb_b1", "emb_W2", "emb_b2", "W_z", "W_c")


class DomainError(ValueError):
    pass


def f_lower(V):
    """max(log((2+V)/(2-V)) - 2V/(2+V), V^2/2 + V^4/36 + V^6/288) for V in [0, 2)."""
    V = np.asarray(V, dtype=np.float64)
    if np.any(V < 0) or np.any(V >= 2):
        raise DomainError("variational distance must lie in [0, 2)")
    log_branch = np.log((2.0 + V) / (2.0 - V)) - 2.0 * V / (2.0 + V)
    poly_branch = V**2 / 2.0 + V**4 / 36.0 + V**6 / 288.0
    out = np.maximum(log_branch, poly_branch)
    return float(out) if out.ndim == 0 else out


def g_bound(pi, delta):
    if not 0.0 < pi < 1.0:
        raise DomainError("pi must lie in (0, 1)")
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta < 0) or np.any(delta > 1):
        raise DomainError("delta must lie in [0, 1]")
    out = (1.0 - pi) * f_lower(pi * delta) + pi * f_lower((1.0 - pi) * delta)
    return float(out) if np.ndim(out) == 0 else out


def multinomial_bound(priors: Sequence[float], delta):
    priors = np.asarray(priors, dtype=np.float64)
    if priors.size < 2 or np.any(priors <= 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise DomainError("priors must be a positive probability vector with at least two entries")
    return f_lower(priors.min() * np.asarray(delta, dtype=np.float64))


def parity_bound(priors: Sequence[float], delta) -> float:
    """g for two groups, the min-prior form otherwise."""
    priors = np.asarray(priors, dtype=np.float64)
    if priors.size == 2:
        return g_bound(float(priors[1]), delta)
    return multinomial_bound(priors, delta)


def discrete_mi(joint) -> float:
    """Exact mutual information (nats) of a 2-D joint probability table."""
    joint = np.asarray(joint, dtype=np.float64)
    joint = joint / joint.sum()
    outer = joint.sum(axis=1, keepdims=True) @ joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))


def mi_upper_estimate(model: FcrlModel, dataset: Dataset, seed: int = 0, n_passes: int = 1,
                      batch_size: int = 64, params: dict | None = None) -> tuple[float, float]:
    """Mean and standard error of rate - contrastive (unit weights) over full passes.

    Each pass shuffles the data, splits it into batches of ``batch_size``,
    draws fresh reparameterisation noise and averages the per-row terms over
    the whole split. ``params`` substitutes scorer weights (e.g. a refit).
    """
    P = dict(model.params)
    if params:
        P.update(params)
    mu, sigma, _ = M.encode(P, dataset.X)
    rate = rate_term(mu, sigma)
    values = []
    for k in range(n_passes):
        rng = Rng(seed).spawn(k)
        order = rng.permutation(dataset.n)
        Z, _ = M.reparameterize(mu, sigma, rng)
        contrast = 0.0
        for start in range(0, dataset.n, batch_size):
            idx = order[start : start + batch_size]
            contrast += model_contrastive(P, Z[idx], dataset.X[idx], dataset.c[idx]) * idx.size
        values.append(rate - contrast / dataset.n)
    values = np.asarray(values)
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), stderr


def refit_scorer(model: FcrlModel, dataset: Dataset, epochs: int = 5, batch_size: int = 64,
                 lr: float = 1e-3, seed: int = 0) -> dict:
    """Train only the scorer weights, encoder frozen, to tighten the contrastive bound."""
    work = model.copy()
    adam = AdamState(lr=lr)
    for epoch in range(epochs):
        rng = Rng(seed).spawn(10_000 + epoch)
        order = rng.permutation(dataset.n)
        for start in range(0, dataset.n, batch_size):
            idx = order[start : start + batch_size]
            _, grads = total_loss(work, dataset.X[idx], dataset.y[idx], dataset.c[idx], beta=1.0, lam=1.0, rng=rng)
            sub = {k: grads[k] for k in SCORER_PARAMS}
            params, adam = adam_step({k: work.params[k] for k in SCORER_PARAMS}, sub, adam)
            work.params.update(params)
    return {k: work.params[k] for k in SCORER_PARAMS}


@dataclass
class BoundRow:
    checkpoint: str
    probe: str
    delta_dp: float
    g_value: float
    mi_upper: float
    mi_upper_refit: float | None = None

    @property
    def slack(self) -> float:
        return self.mi_upper - self.g_value

    @property
    def flag(self) -> bool:
        return self.slack < VIOLATION_SLACK


@dataclass
class BoundReport:
    priors: list[float]
    rows: list[BoundRow] = field(default_factory=list)

    @property
    def violations(self) -> list[BoundRow]:
        return [r for r in self.rows if r.flag]


def bound_check(models: dict[str, FcrlModel], train: Dataset, test: Dataset, specs: Sequence[ProbeSpec],
                seed: int = 0, n_passes: int = 1, refit_epochs: int = 0,
                results: dict | None = None) -> BoundReport:
    """Compare each probe's parity-implied MI floor with the model's MI upper estimate.

    The MI estimate uses the training split; parity is the worst case over
    probe seeds on the test split. ``results`` may supply precomputed
    ``{(checkpoint, probe_kind): EvalResult}`` entries to skip refitting.
    """
    priors = [float(v) for v in train.group_priors()]
    report = BoundReport(priors)
    for name, model in models.items():
        mi, _ = mi_upper_estimate(model, train, seed, n_passes)
        mi_refit = None
        if refit_epochs:
            mi_refit, _ = mi_upper_estimate(model, train, seed, n_passes,
                                            params=refit_scorer(model, train, refit_epochs, seed=seed))
        for spec in specs:
            res = (results or {}).get((name, spec.kind))
            if res is None:
                res = evaluate(model, train, test, spec, "y")
            dp = res.max_delta_dp
            report.rows.append(BoundRow(name, spec.kind, dp, parity_bound(priors, dp), mi, mi_refit))
    return report


def write_bound_report(report: BoundReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["checkpoint", "probe", "delta_dp", "g_value", "mi_upper", "mi_upper_refit", "slack", "flag"])
        for r in report.rows:
            writer.writerow([r.checkpoint, r.probe, repr(r.delta_dp), repr(r.g_value), repr(r.mi_upper),
                             "" if r.mi_upper_refit is None else repr(r.mi_upper_refit), repr(r.slack), int(r.flag)])

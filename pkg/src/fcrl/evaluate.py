"""Downstream evaluation of representations.

Representations of both splits are (optionally) standard-scaled with training
statistics, a probe classifier is fit on the training split only, and
accuracy and statistical parity are measured on the test split. Repeating the
fit over several seeds gives the mean accuracy and the worst-case parity.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, apply_scaler, fit_scaler
from .model import FcrlModel, representations
from .numeric import AdamState, Rng, adam_step, glorot_uniform, logsumexp, one_hot, relu

log = logging.getLogger(__name__)


class MetricError(ValueError):
    """A fairness metric is undefined for the given inputs."""


class ConvergenceWarning(UserWarning):
    pass


def delta_dp(predictions, c, K: int | None = None) -> float:
    """Largest gap in positive-prediction rate between any two groups.

    Groups are ``0..K-1`` when ``K`` is given (each must be non-empty),
    otherwise the distinct values of ``c``.
    """
    pred = np.asarray(predictions).reshape(-1)
    c = np.asarray(c).reshape(-1)
    if pred.shape != c.shape:
        raise MetricError(f"predictions ({pred.shape[0]}) and groups ({c.shape[0]}) differ in length")
    groups = range(K) if K is not None else np.unique(c)
    rates = []
    for g in groups:
        mask = c == g
        if not mask.any():
            raise MetricError(f"group {g} has no members")
        rates.append(float(np.mean(pred[mask] == 1)))
    return float(max(rates) - min(rates))


@dataclass
class ProbeSpec:
    kind: str = "mlp1"
    hidden: int = 50
    max_epochs: int = 1000
    patience: int = 10
    seeds: int = 5
    preprocess: str = "standard_scale"
    lr: float = 1e-3
    batch_size: int = 200
    validation_fraction: float = 0.2
    tol: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("logreg", "mlp1"):
            raise ValueError(f"unknown probe kind {self.kind!r}")
        if self.preprocess not in ("standard_scale", "none"):
            raise ValueError(f"unknown preprocess {self.preprocess!r}")
        if self.seeds < 1 or self.patience < 1:
            raise ValueError("seeds and patience must be >= 1")

    @property
    def label(self) -> str:
        return f"{self.kind}"


class LogisticProbe:
    """Softmax regression fit by full-batch gradient descent.

    The step size is 1/L, with L the Lipschitz constant of the mean
    cross-entropy gradient (bounded by the top eigenvalue of the augmented
    design's second-moment matrix), so descent is stable on any input scale.
    """

    def __init__(self, n_classes: int, max_iter: int = 1000, tol: float = 1e-6, l2: float = 1e-4):
        self.n_classes = n_classes
        self.max_iter = max_iter
        self.tol = tol
        self.l2 = l2
        self.converged = False

    def fit(self, X, targets, seed: int = 0):
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape
        A = np.hstack([X, np.ones((n, 1))])
        Y = one_hot(targets, self.n_classes)
        lipschitz = 0.5 * np.linalg.eigvalsh(A.T @ A / n)[-1] + self.l2
        step = 1.0 / lipschitz
        W = np.zeros((p + 1, self.n_classes))
        for it in range(self.max_iter):
            logits = A @ W
            prob = np.exp(logits - logsumexp(logits, axis=1)[:, None])
            grad = A.T @ (prob - Y) / n
            grad[:-1] += self.l2 * W[:-1]
            W -= step * grad
            if np.max(np.abs(grad)) < self.tol:
                self.converged = True
                break
        self.W = W
        self.iterations = it + 1
        if not self.converged:
            warnings.warn(f"logistic probe stopped after {self.max_iter} iterations", ConvergenceWarning)
        return self

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.argmax(X @ self.W[:-1] + self.W[-1], axis=1)


class MlpProbe:
    """One hidden ReLU layer and a softmax head, trained with mini-batch Adam.

    The last ``validation_fraction`` of a seeded shuffle of the training rows
    is held out; training stops once validation accuracy has not improved by
    ``tol`` for ``patience`` epochs and the best weights are restored.
    """

    def __init__(self, n_classes: int, spec: ProbeSpec):
        self.n_classes = n_classes
        self.spec = spec
        self.converged = False

    def _forward(self, params, X):
        pre = X @ params["W1"] + params["b1"]
        H = relu(pre)
        return H @ params["W2"] + params["b2"], pre, H

    def fit(self, X, targets, seed: int = 0):
        spec = self.spec
        X = np.asarray(X, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.int64)
        rng = Rng(seed)
        n, p = X.shape
        order = rng.permutation(n)
        n_val = int(round(n * spec.validation_fraction)) if n >= 10 else 0
        fit_idx, val_idx = order[: n - n_val], order[n - n_val :]
        if n_val == 0:
            val_idx = fit_idx
        params = {
            "W1": glorot_uniform(rng, p, spec.hidden),
            "b1": np.zeros(spec.hidden),
            "W2": glorot_uniform(rng, spec.hidden, self.n_classes),
            "b2": np.zeros(self.n_classes),
        }
        adam = AdamState(lr=spec.lr)
        best, best_params, stale = -np.inf, params, 0
        Y = one_hot(targets, self.n_classes)
        for epoch in range(spec.max_epochs):
            perm = fit_idx[rng.permutation(fit_idx.size)]
            for start in range(0, perm.size, spec.batch_size):
                b = perm[start : start + spec.batch_size]
                logits, pre, H = self._forward(params, X[b])
                prob = np.exp(logits - logsumexp(logits, axis=1)[:, None])
                dlogits = (prob - Y[b]) / b.size
                dH = (dlogits @ params["W2"].T) * (pre > 0)
                grads = {"W1": X[b].T @ dH, "b1": dH.sum(axis=0),
                         "W2": H.T @ dlogits, "b2": dlogits.sum(axis=0)}
                params, adam = adam_step(params, grads, adam)
            val_acc = float(np.mean(self._predict(params, X[val_idx]) == targets[val_idx]))
            if val_acc > best + spec.tol:
                best, best_params, stale = val_acc, {k: v.copy() for k, v in params.items()}, 0
            else:
                stale += 1
                if stale >= spec.patience:
                    self.converged = True
                    break
        self.epochs = epoch + 1
        self.params = best_params
        if not self.converged:
            warnings.warn(f"mlp probe hit max_epochs={spec.max_epochs}", ConvergenceWarning)
        return self

    def _predict(self, params, X):
        return np.argmax(self._forward(params, X)[0], axis=1)

    def predict(self, X) -> np.ndarray:
        return self._predict(self.params, np.asarray(X, dtype=np.float64))


def fit_probe(Z, targets, spec: ProbeSpec, seed: int = 0, n_classes: int | None = None):
    targets = np.asarray(targets, dtype=np.int64)
    n_classes = n_classes or max(2, int(targets.max()) + 1)
    if spec.kind == "logreg":
        return LogisticProbe(n_classes, max_iter=spec.max_epochs).fit(Z, targets, seed)
    return MlpProbe(n_classes, spec).fit(Z, targets, seed)


@dataclass
class EvalResult:
    target: str
    spec: ProbeSpec
    per_seed: list[tuple[float, float]] = field(default_factory=list)
    majority: float = 0.0
    converged: list[bool] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return float(np.mean([a for a, _ in self.per_seed]))

    @property
    def max_delta_dp(self) -> float:
        return float(max(d for _, d in self.per_seed))

    @property
    def mean_delta_dp(self) -> float:
        return float(np.mean([d for _, d in self.per_seed]))


def preprocess_pair(Z_train, Z_test, preprocess: str):
    if preprocess == "none":
        return np.asarray(Z_train, dtype=np.float64), np.asarray(Z_test, dtype=np.float64)
    scaler = fit_scaler(Z_train)
    return apply_scaler(scaler, Z_train), apply_scaler(scaler, Z_test)


def _score_probe(Ztr, Zte, train: Dataset, test: Dataset, spec: ProbeSpec, target: str, seed: int,
                 n_classes: int) -> tuple[float, float, bool]:
    t_train = train.y if target == "y" else train.c
    t_test = test.y if target == "y" else test.c
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        probe = fit_probe(Ztr, t_train, spec, seed=seed, n_classes=n_classes)
    if caught:
        log.warning("seed %d: %s", seed, caught[-1].message)
    pred = probe.predict(Zte)
    return float(np.mean(pred == t_test)), delta_dp(pred, test.c, test.K), probe.converged


def _new_result(train: Dataset, test: Dataset, spec: ProbeSpec, target: str) -> tuple[EvalResult, int]:
    if target not in ("y", "c"):
        raise ValueError("target must be 'y' or 'c'")
    t_test = test.y if target == "y" else test.c
    n_classes = 2 if target == "y" else max(train.K, test.K)
    return EvalResult(target, spec, majority=float(np.bincount(t_test).max() / t_test.size)), n_classes


def evaluate_representations(Z_train, Z_test, train: Dataset, test: Dataset, spec: ProbeSpec,
                             target: str = "y") -> EvalResult:
    """Fit ``spec.seeds`` probes on fixed train representations and score the test split.

    Parity is always measured across the groups ``c`` of the test split.
    """
    result, n_classes = _new_result(train, test, spec, target)
    Ztr, Zte = preprocess_pair(Z_train, Z_test, spec.preprocess)
    for seed in range(spec.seeds):
        acc, dp, ok = _score_probe(Ztr, Zte, train, test, spec, target, seed, n_classes)
        result.per_seed.append((acc, dp))
        result.converged.append(ok)
    return result


def evaluate(model: FcrlModel | None, train: Dataset, test: Dataset, spec: ProbeSpec, target: str = "y",
             mean_mode: bool = False, seed: int = 0) -> EvalResult:
    """Encode both splits with ``model`` and evaluate probes on the representations.

    By default every probe seed gets its own draw z ~ q(z|x) for both splits
    (noise keyed on ``(seed, probe seed)``); ``mean_mode`` feeds mu instead.
    With ``model=None`` the probes run on the raw features.
    """
    if model is None:
        return evaluate_representations(train.X, test.X, train, test, spec, target)
    if model.p != train.p or model.p != test.p:
        raise ValueError(f"model expects {model.p} features, data has {train.p}/{test.p}")
    if mean_mode:
        return evaluate_representations(representations(model, train.X), representations(model, test.X),
                                        train, test, spec, target)
    result, n_classes = _new_result(train, test, spec, target)
    for s in range(spec.seeds):
        rng = Rng(seed).spawn(s)
        Ztr, Zte = preprocess_pair(representations(model, train.X, rng, False),
                                   representations(model, test.X, rng, False), spec.preprocess)
        acc, dp, ok = _score_probe(Ztr, Zte, train, test, spec, target, s, n_classes)
        result.per_seed.append((acc, dp))
        result.converged.append(ok)
    return result


def leakage_probe(model: FcrlModel | None, train: Dataset, test: Dataset, spec: ProbeSpec,
                  mean_mode: bool = False) -> tuple[EvalResult, EvalResult]:
    """Predict c from z without and with standard scaling."""
    return (evaluate(model, train, test, replace(spec, preprocess="none"), "c", mean_mode),
            evaluate(model, train, test, replace(spec, preprocess="standard_scale"), "c", mean_mode))


RESULT_COLUMNS = ["checkpoint", "target", "probe", "preprocess", "seed", "accuracy", "delta_dp", "aggregate"]


def result_rows(result: EvalResult, checkpoint: str = "", beta: float | None = None) -> list[dict]:
    base = {"checkpoint": checkpoint, "target": result.target, "probe": result.spec.kind,
            "preprocess": result.spec.preprocess}
    if beta is not None:
        base["beta"] = beta
    rows = [dict(base, seed=s, accuracy=a, delta_dp=d, aggregate=0) for s, (a, d) in enumerate(result.per_seed)]
    rows.append(dict(base, seed="all", accuracy=result.accuracy, delta_dp=result.max_delta_dp, aggregate=1))
    return rows


def write_results(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = RESULT_COLUMNS + (["beta"] if any("beta" in r for r in rows) else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, columns, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})

"""Mini-batch training, beta sweeps and checkpoints."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as M
from .data import Dataset
from .numeric import AdamState, NumericError, Rng, adam_step
from .objective import total_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training aborted on a non-finite loss."""


@dataclass
class TrainConfig:
    beta: float = 0.1
    lam: float = 2.0
    d: int = 8
    hidden: int = 50
    predictor_hidden: int = 50
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    objective: str = "O2"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.objective not in ("O1", "O2"):
            raise ValueError("objective must be O1 or O2")


def default_beta_grid() -> list[float]:
    """0.005 to 0.05 in steps of 0.005, then 0.05 to 1.0 in steps of 0.05."""
    fine = [round(0.005 * k, 3) for k in range(1, 11)]
    coarse = [round(0.05 * k, 2) for k in range(2, 21)]
    return fine + coarse


def log_beta_grid(points: int, low: float = 0.005, high: float = 1.0) -> list[float]:
    if points == 1:
        return [low]
    return [float(v) for v in np.geomspace(low, high, points)]


@dataclass
class SweepConfig:
    betas: list[float] = field(default_factory=default_beta_grid)
    warm_start: bool = False
    finetune_epochs: int = 20

    def __post_init__(self):
        if not self.betas:
            raise ValueError("beta grid is empty")
        if any(b < a for a, b in zip(self.betas, self.betas[1:])):
            raise ValueError("beta grid must be sorted ascending")
        if self.warm_start and self.finetune_epochs < 1:
            raise ValueError("finetune_epochs must be >= 1 for warm-start sweeps")


@dataclass
class TrainResult:
    model: M.FcrlModel
    trace: list[dict]
    adam: AdamState
    epochs_completed: int
    config: TrainConfig


def _epoch_rng(seed: int, epoch: int) -> Rng:
    return Rng(seed).spawn(epoch)


def train(dataset: Dataset, config: TrainConfig, init: M.FcrlModel | None = None,
          adam: AdamState | None = None, start_epoch: int = 0, epochs: int | None = None) -> TrainResult:
    """Train (or continue training) an FCRL model.

    Epoch ``e`` (counted from the start of the run, including ``start_epoch``)
    draws its shuffle and reparameterisation noise from a stream keyed on
    ``(seed, e)``, so resuming from a checkpoint reproduces an uninterrupted
    run exactly.
    """
    n_epochs = config.epochs if epochs is None else epochs
    model = init.copy() if init is not None else M.init_model(
        dataset.p, config.d, config.hidden, dataset.K, config.objective, config.predictor_hidden, config.seed)
    if model.p != dataset.p or model.K < dataset.K:
        raise ValueError(f"model dims (p={model.p}, K={model.K}) do not fit data (p={dataset.p}, K={dataset.K})")
    adam = adam if adam is not None else AdamState(lr=config.lr)
    trace = []
    for epoch in range(start_epoch, start_epoch + n_epochs):
        rng = _epoch_rng(config.seed, epoch)
        order = rng.permutation(dataset.n)
        sums = np.zeros(4)
        batches = 0
        for b, start in enumerate(range(0, dataset.n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            try:
                loss, grads = total_loss(model, dataset.X[idx], dataset.y[idx], dataset.c[idx],
                                         config.beta, config.lam, rng=rng)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}, beta {config.beta}: {exc}") from exc
            model.params, adam = adam_step(model.params, grads, adam)
            sums += (loss.label_loss, loss.rate, loss.contrastive, loss.total)
            batches += 1
        mean = sums / batches
        trace.append({"epoch": epoch + 1, "label_loss": float(mean[0]), "rate": float(mean[1]),
                      "contrastive": float(mean[2]), "total": float(mean[3])})
        log.debug("beta=%g epoch %d: %s", config.beta, epoch + 1, trace[-1])
    return TrainResult(model, trace, adam, start_epoch + n_epochs, config)


def write_trace(trace: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "label_loss", "rate", "contrastive", "total"])
        for row in trace:
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in ("label_loss", "rate", "contrastive", "total")])


def _adam_to_dict(adam: AdamState) -> dict:
    pack = lambda d: {k: {"shape": list(v.shape), "data": [float(x) for x in v.reshape(-1)]} for k, v in sorted(d.items())}
    return {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
            "step": adam.step, "m": pack(adam.m), "v": pack(adam.v)}


def _adam_from_dict(doc: dict) -> AdamState:
    unpack = lambda d: {k: np.array(a["data"], dtype=np.float64).reshape(a["shape"]) for k, a in d.items()}
    return AdamState(doc["lr"], doc["beta1"], doc["beta2"], doc["eps"], doc["step"], unpack(doc["m"]), unpack(doc["v"]))


def save_checkpoint(result_or_model, path) -> None:
    """Write a model (or a TrainResult, including optimizer state) as JSON."""
    if isinstance(result_or_model, TrainResult):
        r = result_or_model
        extra = {"config": asdict(r.config), "epochs_completed": r.epochs_completed, "adam": _adam_to_dict(r.adam)}
        M.save_model(r.model, path, extra)
    else:
        M.save_model(result_or_model, path)


def load_checkpoint(path) -> M.FcrlModel:
    return M.load_model(path)[0]


def load_training_state(path) -> TrainResult:
    model, extra = M.load_model(path)
    try:
        config = TrainConfig(**extra["config"])
        return TrainResult(model, [], _adam_from_dict(extra["adam"]), extra["epochs_completed"], config)
    except (KeyError, TypeError) as exc:
        raise M.CheckpointError(f"checkpoint carries no training state: {exc}") from exc


def resume(path, dataset: Dataset, epochs: int) -> TrainResult:
    state = load_training_state(path)
    return train(dataset, state.config, init=state.model, adam=state.adam,
                 start_epoch=state.epochs_completed, epochs=epochs)


@dataclass
class SweepEntry:
    beta: float
    result: TrainResult
    epochs: int


@dataclass
class SweepResult:
    entries: list[SweepEntry]

    @property
    def total_epochs(self) -> int:
        return sum(e.epochs for e in self.entries)

    @property
    def models(self) -> list[M.FcrlModel]:
        return [e.result.model for e in self.entries]


def _train_one(args):
    dataset, config = args
    return train(dataset, config)


def sweep(dataset: Dataset, base: TrainConfig, sweep_config: SweepConfig, jobs: int = 1) -> SweepResult:
    """Train one model per beta.

    Cold mode trains every beta from scratch for ``base.epochs``. Warm mode
    trains the first beta for ``base.epochs`` and then fine-tunes each next
    beta from the previous model for ``finetune_epochs`` with a fresh
    optimizer.
    """
    entries = []
    if not sweep_config.warm_start:
        configs = [replace(base, beta=b) for b in sweep_config.betas]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_train_one, [(dataset, cfg) for cfg in configs]))
        else:
            results = []
            for cfg in configs:
                try:
                    results.append(train(dataset, cfg))
                except TrainingError as exc:
                    raise TrainingError(f"beta {cfg.beta}: {exc}") from exc
        return SweepResult([SweepEntry(cfg.beta, r, cfg.epochs) for cfg, r in zip(configs, results)])

    previous = None
    elapsed = 0
    for k, b in enumerate(sweep_config.betas):
        cfg = replace(base, beta=b)
        n_epochs = base.epochs if k == 0 else sweep_config.finetune_epochs
        try:
            result = train(dataset, cfg, init=previous, start_epoch=elapsed, epochs=n_epochs)
        except TrainingError as exc:
            raise TrainingError(f"beta {b}: {exc}") from exc
        entries.append(SweepEntry(b, result, n_epochs))
        previous = result.model
        elapsed += n_epochs
    return SweepResult(entries)

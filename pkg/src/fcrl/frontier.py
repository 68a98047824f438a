"""Parity-accuracy frontiers and the area-over-curve (AOPAC) metric.

The raw area is the region of (parity threshold, accuracy) pairs a method can
satisfy: between adjacent Pareto points the achievable accuracy is that of the
lower-parity point. It is normalised by the same area under the best frontier
reachable by relabelling the true test labels (a small linear program solved
exactly here).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NORMALIZER_GRID = 200


class FrontierError(ValueError):
    pass


@dataclass(frozen=True)
class TradeoffPoint:
    beta: float
    accuracy: float
    parity: float
    tag: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.accuracy) and np.isfinite(self.parity)):
            raise FrontierError("trade-off point must be finite")
        if self.parity > 1.0:
            raise FrontierError(f"parity {self.parity} exceeds 1")


def pareto_front(points: Iterable[TradeoffPoint], max_parity: float | None = None) -> list[TradeoffPoint]:
    """Non-dominated points sorted by parity, then accuracy.

    Points above ``max_parity`` are dropped first. A point is dominated when
    another has no higher parity and no lower accuracy, and is strictly
    better in one of the two. Exact duplicates keep their first occurrence.
    """
    pts = [p for p in points if max_parity is None or p.parity <= max_parity]
    seen: set[tuple[float, float]] = set()
    unique = []
    for p in pts:
        key = (p.parity, p.accuracy)
        if key not in seen:
            seen.add(key)
            unique.append(p)
    front = [
        p for p in unique
        if not any(q.parity <= p.parity and q.accuracy >= p.accuracy
                   and (q.parity < p.parity or q.accuracy > p.accuracy) for q in unique)
    ]
    return sorted(front, key=lambda p: (p.parity, p.accuracy))


def _validate_table(p_y1_c, p_c) -> tuple[np.ndarray, np.ndarray]:
    p_y1_c = np.asarray(p_y1_c, dtype=np.float64)
    p_c = np.asarray(p_c, dtype=np.float64)
    if p_y1_c.shape != p_c.shape or p_c.ndim != 1 or p_c.size < 2:
        raise FrontierError("need matching 1-D vectors P(y=1, c=i) and P(c=i) for at least two groups")
    if np.any(p_c <= 0) or abs(p_c.sum() - 1.0) > 1e-9:
        raise FrontierError("P(c=i) must be positive and sum to 1")
    if np.any(p_y1_c < 0) or np.any(p_y1_c > p_c + 1e-12):
        raise FrontierError("need 0 <= P(y=1, c=i) <= P(c=i)")
    return p_y1_c, p_c


def lp_frontier(p_y1_c, p_c, delta: float) -> float:
    """Least relabelling mass that brings every pairwise positive-rate gap to <= delta.

    Flipping mass delta_i in group i moves its positive rate r_i to
    t_i = r_i - delta_i / P(c=i) at cost P(c=i) |r_i - t_i|; the bounds on
    delta_i are exactly t_i in [0, 1]. All t_i must fit in a window
    [a, a + delta], and for a fixed window each group moves to its nearest
    point, so the cost is a convex piecewise-linear function of a whose
    kinks sit at r_i and r_i - delta. Evaluating those kinks (clipped to the
    feasible range of a) gives the exact optimum.
    """
    p_y1_c, p_c = _validate_table(p_y1_c, p_c)
    if not 0.0 <= delta <= 1.0:
        raise FrontierError("delta must lie in [0, 1]")
    rates = p_y1_c / p_c
    hi = 1.0 - delta
    candidates = np.clip(np.concatenate([rates, rates - delta, [0.0, hi]]), 0.0, hi)
    lo_edge = candidates[:, None]
    dist = np.maximum(lo_edge - rates[None, :], 0.0) + np.maximum(rates[None, :] - (lo_edge + delta), 0.0)
    return float(np.min(dist @ p_c))


@dataclass
class FrontierSpec:
    delta_data: float
    baseline: float
    p_y1_c: np.ndarray
    p_c: np.ndarray
    grid: int = NORMALIZER_GRID

    def __post_init__(self):
        self.p_y1_c, self.p_c = _validate_table(self.p_y1_c, self.p_c)
        if not 0.0 <= self.delta_data <= 1.0:
            raise FrontierError("delta_data must lie in [0, 1]")

    @classmethod
    def from_labels(cls, y, c, K: int | None = None, grid: int = NORMALIZER_GRID) -> "FrontierSpec":
        """Data parity, majority baseline and joint table from true test labels."""
        y = np.asarray(y, dtype=np.int64)
        c = np.asarray(c, dtype=np.int64)
        K = K or int(c.max()) + 1
        n = y.size
        p_c = np.bincount(c, minlength=K) / n
        p_y1_c = np.bincount(c, weights=y, minlength=K) / n
        rates = p_y1_c / p_c
        baseline = float(np.bincount(y, minlength=2).max() / n)
        return cls(float(rates.max() - rates.min()), baseline, p_y1_c, p_c, grid)

    def optimal_accuracy(self, deltas) -> np.ndarray:
        return np.array([1.0 - lp_frontier(self.p_y1_c, self.p_c, float(d)) for d in np.atleast_1d(deltas)])


@dataclass
class AopacResult:
    raw_area: float
    normalized_area: float | None
    normalizer: float | None
    pareto_points: list[TradeoffPoint] = field(default_factory=list)
    discarded: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "raw_area": self.raw_area,
            "normalized_area": self.normalized_area,
            "normalizer": self.normalizer,
            "pareto_points": [asdict(p) for p in self.pareto_points],
            "discarded": self.discarded,
        }, indent=2, sort_keys=True)


def step_area(parities: Sequence[float], accuracies: Sequence[float], delta_data: float, baseline: float) -> float:
    """Left-step area above the baseline from the first parity up to delta_data."""
    area = 0.0
    p = list(parities) + [delta_data]
    for k, u in enumerate(accuracies):
        width = min(p[k + 1], delta_data) - p[k]
        area += max(width, 0.0) * max(u - baseline, 0.0)
    return area


def lp_normalizer(spec: FrontierSpec) -> float:
    grid = np.linspace(0.0, spec.delta_data, spec.grid)
    return step_area(grid, spec.optimal_accuracy(grid), spec.delta_data, spec.baseline)


def aopac(points: Iterable[TradeoffPoint], spec: FrontierSpec, normalizer: float | None = None) -> AopacResult:
    points = list(points)
    front = pareto_front(points, spec.delta_data)
    norm = lp_normalizer(spec) if normalizer is None else normalizer
    if not front:
        return AopacResult(0.0, 0.0, norm, [], len(points))
    raw = step_area([p.parity for p in front], [p.accuracy for p in front], spec.delta_data, spec.baseline)
    return AopacResult(raw, raw / norm if norm > 0 else 0.0, norm, front, len(points) - len(front))


def read_points(path) -> list[TradeoffPoint]:
    """Read ``beta, accuracy, parity`` rows; extra columns are ignored."""
    path = Path(path)
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"beta", "accuracy", "parity"}
        if reader.fieldnames is None:
            return []
        if not required <= set(reader.fieldnames):
            raise FrontierError(f"{path}: header must contain {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                points.append(TradeoffPoint(float(row["beta"]), float(row["accuracy"]), float(row["parity"]),
                                            row.get("tag") or ""))
            except (TypeError, ValueError) as exc:
                raise FrontierError(f"{path}:{lineno}: {exc}") from None
    return points


def write_points(points: Sequence[TradeoffPoint], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["beta", "accuracy", "parity", "tag"])
        for p in points:
            writer.writerow([repr(p.beta), repr(p.accuracy), repr(p.parity), p.tag])

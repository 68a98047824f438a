"""Datasets: CSV schema, UCI Adult preprocessing, scaling and synthetic data.

On-disk format is a UTF-8 comma-separated file with a header row, feature
columns ``f_0 .. f_{p-1}`` holding reals in [0, 1], a binary label column
``y`` and a non-negative integer group column ``c``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numeric import Rng, sigmoid

ADULT_COLUMNS = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
]
ADULT_CONTINUOUS = ["age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week"]
ADULT_CATEGORICAL = [
    "workclass",
    "education",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "native-country",
]

# Output of preprocess_adult on the published adult.data / adult.test.
ADULT_TRAIN_ROWS = 30162
ADULT_TEST_ROWS = 15060
ADULT_FEATURES = 102


class DataError(ValueError):
    """Malformed or schema-violating input data."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    c: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    K: int = 2

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {self.X.shape}")
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.c = np.asarray(self.c, dtype=np.int64).reshape(-1)
        n = self.X.shape[0]
        if self.y.shape[0] != n or self.c.shape[0] != n:
            raise DataError(f"row counts disagree: X {n}, y {self.y.shape[0]}, c {self.c.shape[0]}")
        if not self.feature_names:
            self.feature_names = [f"f_{j}" for j in range(self.X.shape[1])]
        if self.K < 2:
            raise DataError("K must be at least 2")
        if n and (self.c.min() < 0 or self.c.max() >= self.K):
            raise DataError(f"group ids must lie in [0, {self.K})")
        if n and not np.isin(self.y, (0, 1)).all():
            raise DataError("labels must be 0/1")
        if self.X.size and (self.X.min() < 0.0 or self.X.max() > 1.0):
            raise DataError("feature values must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.c[idx], list(self.feature_names), self.K)

    def group_priors(self) -> np.ndarray:
        return np.bincount(self.c, minlength=self.K) / self.n

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for a in (self.X, self.y, self.c):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(str(self.K).encode())
        return h.hexdigest()


def save_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f_{j}" for j in range(dataset.p)] + ["y", "c"])
        for row, y, c in zip(dataset.X, dataset.y, dataset.c):
            # repr() of a float64 round-trips exactly
            writer.writerow([repr(float(v)) for v in row] + [int(y), int(c)])


def load_csv(path, label: str = "y", group: str = "c", features: Sequence[str] | None = None,
             rescale: bool = False, K: int | None = None) -> Dataset:
    """Read a dataset CSV.

    Args:
        path: file to read.
        label, group: names of the label and group columns.
        features: feature column names; defaults to every other column.
        rescale: min-max map each feature column to [0, 1] instead of
            rejecting out-of-range values.
        K: group count; defaults to ``max(c) + 1`` (at least 2).

    Raises:
        DataError: on a missing column, non-numeric cell or bad label, with
            the offending row and column.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in (label, group):
            if required not in header:
                raise DataError(f"{path}: missing column {required!r}")
        if features is None:
            features = [h for h in header if h not in (label, group)]
        missing = [f for f in features if f not in header]
        if missing:
            raise DataError(f"{path}: missing feature columns {missing}")
        fidx = [header.index(f) for f in features]
        yidx, cidx = header.index(label), header.index(group)
        X, ys, cs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                X.append([float(row[j]) for j in fidx])
            except ValueError:
                bad = next(j for j in fidx if not _is_float(row[j]))
                raise DataError(f"{path}:{lineno}: non-numeric value {row[bad]!r} in column {header[bad]!r}") from None
            ys.append(_parse_int(row[yidx], path, lineno, label))
            cs.append(_parse_int(row[cidx], path, lineno, group))
            if ys[-1] not in (0, 1):
                raise DataError(f"{path}:{lineno}: label {ys[-1]} in column {label!r} is not 0/1")
            if cs[-1] < 0:
                raise DataError(f"{path}:{lineno}: negative group id in column {group!r}")
    X = np.asarray(X, dtype=np.float64).reshape(len(ys), len(fidx))
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        if not rescale:
            col = int(np.argmax((X < 0).any(axis=0) | (X > 1).any(axis=0)))
            raise DataError(f"{path}: column {features[col]!r} has values outside [0, 1]; pass rescale=True")
        X = minmax_columns(X)
    c = np.asarray(cs, dtype=np.int64)
    if K is None:
        K = max(2, int(c.max()) + 1 if c.size else 2)
    return Dataset(X, ys, c, list(features), K)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _parse_int(cell: str, path, lineno: int, column: str) -> int:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-numeric value {cell!r} in column {column!r}") from None
    if not v.is_integer():
        raise DataError(f"{path}:{lineno}: non-integer value {cell!r} in column {column!r}")
    return int(v)


def minmax_columns(X: np.ndarray, lo: np.ndarray | None = None, hi: np.ndarray | None = None) -> np.ndarray:
    """Map columns to [0, 1]; constant columns become 0. Values are clipped."""
    lo = X.min(axis=0) if lo is None else lo
    hi = X.max(axis=0) if hi is None else hi
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((X - lo) / span, 0.0, 1.0)


def _read_adult_raw(path) -> list[list[str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            rows.append([cell.strip() for cell in line.split(",")])
    return rows


def preprocess_adult(raw_train_path, raw_test_path, max_bad_fraction: float = 0.1,
                     out_dir=None) -> tuple[Dataset, Dataset]:
    """Turn the published UCI Adult files into train/test datasets.

    y = income > 50K, c = sex (Male = 1). Rows with a missing value ('?') are
    dropped. Categorical columns are one-hot encoded over the categories seen
    in training; continuous columns are min-max scaled with training
    statistics and test values clipped into [0, 1]. The sex column is the
    group attribute and is not repeated among the features.

    Raises:
        DataError: when more than ``max_bad_fraction`` of a file's rows are
            malformed (wrong arity or unparseable numbers).
    """
    parsed = []
    for path in (raw_train_path, raw_test_path):
        raw = _read_adult_raw(path)
        good, bad = [], 0
        for row in raw:
            if len(row) != len(ADULT_COLUMNS) or not all(_is_float(row[ADULT_COLUMNS.index(k)]) or row[ADULT_COLUMNS.index(k)] == "?" for k in ADULT_CONTINUOUS):
                bad += 1
                continue
            if "?" in row:
                continue
            good.append(dict(zip(ADULT_COLUMNS, row)))
        if raw and bad / len(raw) > max_bad_fraction:
            raise DataError(f"{path}: {bad} of {len(raw)} rows unparseable")
        parsed.append(good)
    train_rows, test_rows = parsed

    categories = {k: sorted({r[k] for r in train_rows}) for k in ADULT_CATEGORICAL}
    names = list(ADULT_CONTINUOUS) + [f"{k}={v}" for k in ADULT_CATEGORICAL for v in categories[k]]

    def encode(rows):
        cont = np.array([[float(r[k]) for k in ADULT_CONTINUOUS] for r in rows])
        cat_blocks = []
        for k in ADULT_CATEGORICAL:
            index = {v: j for j, v in enumerate(categories[k])}
            block = np.zeros((len(rows), len(index)))
            for i, r in enumerate(rows):
                j = index.get(r[k])
                if j is not None:
                    block[i, j] = 1.0
            cat_blocks.append(block)
        y = np.array([1 if r["income"].rstrip(".") == ">50K" else 0 for r in rows])
        c = np.array([1 if r["sex"] == "Male" else 0 for r in rows])
        return cont, np.hstack(cat_blocks), y, c

    cont_tr, cat_tr, y_tr, c_tr = encode(train_rows)
    cont_te, cat_te, y_te, c_te = encode(test_rows)
    lo, hi = cont_tr.min(axis=0), cont_tr.max(axis=0)
    train = Dataset(np.hstack([minmax_columns(cont_tr, lo, hi), cat_tr]), y_tr, c_tr, names, 2)
    test = Dataset(np.hstack([minmax_columns(cont_te, lo, hi), cat_te]), y_te, c_te, names, 2)
    if out_dir is not None:
        save_csv(train, Path(out_dir) / "adult_train.csv")
        save_csv(test, Path(out_dir) / "adult_test.csv")
    return train, test


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(train) -> Scaler:
    """Per-feature mean and population std; constant features get std 1."""
    X = np.asarray(train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot fit a scaler on an empty matrix")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # a constant column then maps to exactly zero
    std = np.where(std > 0, std, 1.0)
    return Scaler(mean, std)


def apply_scaler(scaler: Scaler, X) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - scaler.mean) / scaler.std


@dataclass
class SynthSpec:
    mode: str = "gaussian_bias"
    n: int = 2000
    p: int = 8
    pi: float = 0.5
    rho_yc: float = 0.5
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("gaussian_bias", "xor"):
            raise ValueError(f"unknown synthetic mode {self.mode!r}")
        if not 0.0 < self.pi < 1.0:
            raise ValueError("pi must lie in (0, 1)")
        if not 0.0 <= self.rho_yc <= 1.0:
            raise ValueError("rho_yc must lie in [0, 1]")
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Draw a synthetic dataset.

    ``gaussian_bias``: c ~ Bernoulli(pi); with probability rho_yc the label
    copies c, otherwise it is a fresh fair coin, so rho_yc = 0 makes y and c
    independent. Features are Gaussians whose means depend on y (first half
    of the columns) and on c (second half), squashed through a sigmoid.

    ``xor``: column 0 carries a bit b (0.25 or 0.75 plus noise), y = b XOR c,
    remaining columns are noise.
    """
    rng = Rng(spec.seed)
    n, p = spec.n, spec.p
    c = (rng.uniform(n) < spec.pi).astype(np.int64)
    if spec.mode == "xor":
        bit = (rng.uniform(n) < 0.5).astype(np.int64)
        y = bit ^ c
        X = rng.uniform((n, p))
        jitter = spec.noise * 0.1 * (rng.uniform(n) - 0.5)
        X[:, 0] = np.where(bit == 1, 0.75, 0.25) + jitter
        return Dataset(np.clip(X, 0.0, 1.0), y, c, [], 2)

    copy = rng.uniform(n) < spec.rho_yc
    coin = (rng.uniform(n) < 0.5).astype(np.int64)
    y = np.where(copy, c, coin)
    half = max(1, p // 2)
    means = np.zeros((n, p))
    means[:, :half] += np.where(y[:, None] == 1, 1.0, -1.0)
    if p > half:
        means[:, half:] += np.where(c[:, None] == 1, 1.0, -1.0)
    X = sigmoid(means + spec.noise * rng.normal((n, p)))
    return Dataset(X, y, c, [], 2)


def plugin_mi(a, b) -> float:
    """Plug-in mutual information (nats) between two discrete vectors."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    perm = Rng(seed).permutation(dataset.n)
    cut = dataset.n - int(math.floor(dataset.n * test_fraction))
    return dataset.subset(perm[:cut]), dataset.subset(perm[cut:])


def majority_rate(labels) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.bincount(labels).max() / labels.size)

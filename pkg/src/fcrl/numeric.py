"""Dense numeric primitives shared by every other module.

Matrices are plain ``numpy.ndarray`` objects in float64. This module adds the
pieces numpy does not ship in the exact form we need: overflow-safe
activations, a seeded generator whose normal draws come from an explicit
Box-Muller transform, a dict-of-arrays Adam optimizer, and a central
finite-difference gradient used as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

SOFTPLUS_LINEAR_CUTOFF = 30.0


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised when a computation produces a non-finite value."""


def as_matrix(x, name: str = "input") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def affine(inputs, weights, bias) -> np.ndarray:
    """Compute ``inputs @ weights + bias``.

    Args:
        inputs: (n, d_in) matrix.
        weights: (d_in, d_out) matrix.
        bias: (d_out,) vector.

    Raises:
        DimensionError: naming both shapes when they do not line up.
    """
    x = as_matrix(inputs)
    w = as_matrix(weights, "weights")
    b = np.asarray(bias, dtype=np.float64).reshape(-1)
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"cannot multiply input {x.shape} by weights {w.shape}")
    if b.shape[0] != w.shape[1]:
        raise DimensionError(f"bias {b.shape} does not match weights {w.shape}")
    return x @ w + b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x), returning x itself above the linear cutoff."""
    x = np.asarray(x, dtype=np.float64)
    big = x > SOFTPLUS_LINEAR_CUTOFF
    return np.where(big, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_LINEAR_CUTOFF))))


def log_softplus(x: np.ndarray) -> np.ndarray:
    """log(softplus(x)) without underflow for very negative x."""
    x = np.asarray(x, dtype=np.float64)
    small = x < -SOFTPLUS_LINEAR_CUTOFF
    # softplus(x) = e^x (1 - e^x/2 + ...) for x << 0
    safe = np.where(small, 0.0, x)
    return np.where(small, x - 0.5 * np.exp(x), np.log(softplus(safe)))


def softplus_log_grad(x: np.ndarray) -> np.ndarray:
    """d/dx log(softplus(x)) = sigmoid(x) / softplus(x)."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(log_sigmoid(x) - log_softplus(x))


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


_ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": np.exp,
}


def activation(kind: str, x) -> np.ndarray:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(np.asarray(x, dtype=np.float64))


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


class Rng:
    """Seeded random stream.

    Uniform variates come from numpy's PCG64 bit generator. Standard normals
    are produced from pairs of uniforms with the Box-Muller transform
    ``sqrt(-2 ln u1) * cos(2 pi u2)`` (first half of the output) and
    ``sqrt(-2 ln u1) * sin(2 pi u2)`` (second half), with ``u1`` drawn from
    (0, 1]. Two instances built from the same seed yield identical streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape))
        half = (count + 1) // 2
        u1 = 1.0 - self._gen.random(half)
        u2 = self._gen.random(half)
        radius = np.sqrt(-2.0 * np.log(u1))
        draws = np.concatenate([radius * np.cos(2 * np.pi * u2), radius * np.sin(2 * np.pi * u2)])
        return draws[:count].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def spawn(self, offset: int) -> "Rng":
        """Independent child stream keyed on (seed, offset)."""
        return Rng(int(np.random.SeedSequence([self.seed, offset]).generate_state(1, np.uint64)[0]))

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update over a dict of named arrays.

    Accumulators are created lazily on first use. Parameters without a
    gradient entry are passed through untouched.
    """
    step = state.step + 1
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient {name} has shape {g.shape}, parameter has {p.shape}")
        m_prev = m.get(name, np.zeros_like(p))
        v_prev = v.get(name, np.zeros_like(p))
        if m_prev.shape != p.shape:
            raise DimensionError(f"Adam state for {name} has shape {m_prev.shape}, parameter has {p.shape}")
        m[name] = state.beta1 * m_prev + (1.0 - state.beta1) * g
        v[name] = state.beta2 * v_prev + (1.0 - state.beta2) * g * g
        new_params[name] = p - state.lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + state.eps)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, step, m, v)
    return new_params, new_state


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], params, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValueError("step h must be positive")
    p = np.array(params, dtype=np.float64).reshape(-1)
    grad = np.zeros_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + h
        up = float(loss_fn(p.copy()))
        p[i] = orig - h
        down = float(loss_fn(p.copy()))
        p[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite loss while differencing coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return grad


def flatten(arrays: Mapping[str, np.ndarray], names) -> np.ndarray:
    return np.concatenate([np.asarray(arrays[n], dtype=np.float64).reshape(-1) for n in names])


def unflatten(vector: np.ndarray, like: Mapping[str, np.ndarray], names) -> dict[str, np.ndarray]:
    out = dict(like)
    offset = 0
    for n in names:
        size = like[n].size
        out[n] = vector[offset : offset + size].reshape(like[n].shape).copy()
        offset += size
    return out


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform((fan_in, fan_out)) * 2.0 - 1.0) * limit

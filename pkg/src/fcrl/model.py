"""Encoder, label predictor and bilinear contrastive scorer.

All learnable arrays of a model live in one flat ``dict[str, ndarray]`` so the
optimizer, the gradient code and checkpointing can treat them uniformly.

Parameter names::

    enc_W1 (p, h)   enc_b1 (h,)    hidden layer of the encoder
    enc_Wmu (h, d)  enc_bmu (d,)   mean head
    enc_Wls (h, d)  enc_bls (d,)   log-std head
    pred_W1 (d[+K], hp) pred_b1 (hp,) pred_W2 (hp, 1) pred_b2 (1,)
    emb_W1 (p, h)   emb_b1 (h,)    emb_W2 (h, d)  emb_b2 (d,)   e(x)
    W_z (d, d)      W_c (K, d, d)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import DimensionError, Rng, glorot_uniform, one_hot, relu, sigmoid, softplus

SIGMA_MIN = 1e-4
SIGMA_MAX = 1e4
PROB_EPS = 1e-7
CHECKPOINT_FORMAT = "fcrl-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or incompatible checkpoint."""


@dataclass
class FcrlModel:
    p: int
    d: int = 8
    h: int = 50
    K: int = 2
    predictor_hidden: int = 50
    objective: str = "O2"
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.objective not in ("O1", "O2"):
            raise ValueError(f"objective must be 'O1' or 'O2', got {self.objective!r}")

    @property
    def conditional(self) -> bool:
        return self.objective == "O2"

    @property
    def predictor_inputs(self) -> int:
        return self.d + (self.K if self.conditional else 0)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        p, d, h, K, hp = self.p, self.d, self.h, self.K, self.predictor_hidden
        return {
            "enc_W1": (p, h), "enc_b1": (h,),
            "enc_Wmu": (h, d), "enc_bmu": (d,),
            "enc_Wls": (h, d), "enc_bls": (d,),
            "pred_W1": (self.predictor_inputs, hp), "pred_b1": (hp,),
            "pred_W2": (hp, 1), "pred_b2": (1,),
            "emb_W1": (p, h), "emb_b1": (h,),
            "emb_W2": (h, d), "emb_b2": (d,),
            "W_z": (d, d), "W_c": (K, d, d),
        }

    def check(self) -> None:
        expected = self.shapes()
        if set(expected) != set(self.params):
            raise DimensionError(f"parameter names {sorted(self.params)} differ from {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise DimensionError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "FcrlModel":
        return FcrlModel(self.p, self.d, self.h, self.K, self.predictor_hidden, self.objective,
                         {k: v.copy() for k, v in self.params.items()})


def init_model(p: int, d: int = 8, h: int = 50, K: int = 2, objective: str = "O2",
               predictor_hidden: int = 50, seed: int = 0) -> FcrlModel:
    """Glorot-uniform weights, zero biases, drawn in a fixed name order."""
    model = FcrlModel(p, d, h, K, predictor_hidden, objective)
    rng = Rng(seed)
    params = {}
    for name, shape in model.shapes().items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        elif len(shape) == 2:
            params[name] = glorot_uniform(rng, *shape)
        else:
            params[name] = np.stack([glorot_uniform(rng, shape[1], shape[2]) for _ in range(shape[0])])
    model.params = params
    return model


def encode(params, X):
    """Return (mu, sigma, cache); sigma = clamp(exp(log-std head))."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params["enc_W1"].shape[0]:
        raise DimensionError(f"input {np.shape(X)} does not match encoder weights {params['enc_W1'].shape}")
    pre = X @ params["enc_W1"] + params["enc_b1"]
    H = relu(pre)
    mu = H @ params["enc_Wmu"] + params["enc_bmu"]
    log_sigma = H @ params["enc_Wls"] + params["enc_bls"]
    clipped = np.clip(log_sigma, np.log(SIGMA_MIN), np.log(SIGMA_MAX))
    sigma = np.exp(clipped)
    cache = {"X": X, "pre": pre, "H": H, "sigma_active": clipped == log_sigma}
    return mu, sigma, cache


def reparameterize(mu, sigma, rng: Rng | None = None, mean_mode: bool = False, noise=None):
    """Z = mu + eps * sigma with eps ~ N(0, I); returns (Z, eps).

    ``mean_mode`` returns mu itself. An explicit ``noise`` array replaces the
    draw from ``rng``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise DimensionError(f"mu {mu.shape} and sigma {sigma.shape} differ")
    if mean_mode:
        return mu.copy(), np.zeros_like(mu)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    if noise is None:
        if rng is None:
            raise ValueError("need an rng or explicit noise")
        noise = rng.normal(mu.shape)
    eps = np.asarray(noise, dtype=np.float64)
    return mu + eps * sigma, eps


def predictor_input(Z, c, K: int, conditional: bool) -> np.ndarray:
    if not conditional:
        return Z
    c = np.asarray(c, dtype=np.int64)
    if c.size and c.max() >= K:
        raise ValueError(f"group id {c.max()} out of range for K={K}")
    return np.hstack([Z, one_hot(c, K)])


def predict(params, Z, c, K: int, conditional: bool):
    """Probability p(y=1 | z[, c]) clamped to [1e-7, 1 - 1e-7]; returns (probs, cache)."""
    U = predictor_input(Z, c, K, conditional)
    if U.shape[1] != params["pred_W1"].shape[0]:
        raise DimensionError(f"predictor input {U.shape} does not match weights {params['pred_W1'].shape}")
    pre = U @ params["pred_W1"] + params["pred_b1"]
    Hp = relu(pre)
    logit = (Hp @ params["pred_W2"] + params["pred_b2"]).reshape(-1)
    raw = sigmoid(logit)
    probs = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    return probs, {"U": U, "pre": pre, "H": Hp, "active": probs == raw}


def embed(params, X):
    """e(x; theta'): one hidden ReLU layer, output dimension d."""
    pre = np.asarray(X, dtype=np.float64) @ params["emb_W1"] + params["emb_b1"]
    H = relu(pre)
    return H @ params["emb_W2"] + params["emb_b2"], {"pre": pre, "H": H}


def bilinear(params, Z, E, c):
    """(W_z z)^T W_c^T e(x) for aligned rows of Z and E."""
    Zpp = Z @ params["W_z"].T
    Wc = params["W_c"][np.asarray(c, dtype=np.int64)]
    # row-wise z''_i^T W_c^T e_i = sum_ab z''_a W_c[b, a] e_b
    return np.einsum("ia,iba,ib->i", Zpp, Wc, E)


def score(params, Z, E, c) -> np.ndarray:
    """exp{f(z, x, c)} = softplus of the bilinear form; strictly positive."""
    Z = np.asarray(Z, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if Z.shape != E.shape:
        raise DimensionError(f"representation rows {Z.shape} and embedding rows {E.shape} differ")
    c = np.asarray(c, dtype=np.int64)
    if c.size and c.max() >= params["W_c"].shape[0]:
        raise ValueError(f"group id {c.max()} out of range")
    return softplus(bilinear(params, Z, E, c))


def representations(model: FcrlModel, X, rng: Rng | None = None, mean_mode: bool = True) -> np.ndarray:
    mu, sigma, _ = encode(model.params, X)
    Z, _ = reparameterize(mu, sigma, rng, mean_mode=mean_mode)
    return Z


def model_to_dict(model: FcrlModel, extra: dict | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": {"p": model.p, "d": model.d, "h": model.h, "K": model.K,
                 "predictor_hidden": model.predictor_hidden},
        "objective": model.objective,
        "arrays": {k: {"shape": list(v.shape), "data": [float(x) for x in v.reshape(-1)]}
                   for k, v in sorted(model.params.items())},
    }
    if extra:
        doc["extra"] = extra
    return doc


def model_from_dict(doc: dict) -> FcrlModel:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not an fcrl checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')} unsupported (want {CHECKPOINT_VERSION})")
    try:
        dims = doc["dims"]
        model = FcrlModel(dims["p"], dims["d"], dims["h"], dims["K"], dims["predictor_hidden"], doc["objective"])
        model.params = {k: np.array(a["data"], dtype=np.float64).reshape(a["shape"]) for k, a in doc["arrays"].items()}
        model.check()
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return model


def dumps_model(model: FcrlModel, extra: dict | None = None) -> str:
    return json.dumps(model_to_dict(model, extra), sort_keys=True)


def loads_model(text: str) -> tuple[FcrlModel, dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError("corrupt checkpoint: top level is not an object")
    return model_from_dict(doc), doc.get("extra", {})


def save_model(model: FcrlModel, path, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_model(model, extra), encoding="utf-8")


def load_model(path) -> tuple[FcrlModel, dict]:
    return loads_model(Path(path).read_text(encoding="utf-8"))

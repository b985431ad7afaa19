"""Linear epsilon-insensitive regressor (primal linear SVR).

Per-sample loss is ``max(0, |y - (w.x + b)| - eps) + lam/2 * ||w||^2``,
averaged over the data. Training is minibatch stochastic subgradient descent.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FCW1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBI")


class ModelError(Exception):
    pass


class DimensionMismatch(ModelError, ValueError):
    pass


class NonFiniteLoss(ModelError, FloatingPointError):
    pass


class BadMagic(ModelError, ValueError):
    pass


class TruncatedPayload(ModelError, ValueError):
    pass


class VersionMismatch(ModelError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModelWeights:
    w: np.ndarray
    bias: float
    version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def d(self) -> int:
        return self.w.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.w)) and np.isfinite(self.bias))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return serialize_weights(self) == serialize_weights(other)

    def __hash__(self):
        return hash(serialize_weights(self))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    epsilon: float = 2.0
    reg_lambda: float = 1e-4
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid training config: {self}")
        if self.epsilon < 0 or self.reg_lambda < 0:
            raise ValueError("epsilon and reg_lambda must be non-negative")


def init_weights(d: int, seed: int, labels=None) -> ModelWeights:
    if d < 1:
        raise ValueError("dimension must be at least 1")
    rng = np.random.default_rng(seed)
    bias = float(np.mean(labels)) if labels is not None and len(labels) else 0.0
    return ModelWeights(rng.uniform(-0.01, 0.01, size=d), bias)


def _check_dim(weights: ModelWeights, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != weights.d:
        raise DimensionMismatch(f"features have {X.shape[1]} columns, model expects {weights.d}")
    return X


def raw_scores(weights: ModelWeights, X) -> np.ndarray:
    X = _check_dim(weights, X)
    return X @ weights.w + weights.bias


def per_sample_loss(weights: ModelWeights, X, y, epsilon: float, reg_lambda: float) -> np.ndarray:
    resid = np.asarray(y, float) - raw_scores(weights, X)
    return np.maximum(0.0, np.abs(resid) - epsilon) + 0.5 * reg_lambda * float(weights.w @ weights.w)


def loss(weights: ModelWeights, X, y, epsilon: float, reg_lambda: float) -> float:
    return float(np.mean(per_sample_loss(weights, X, y, epsilon, reg_lambda)))


def subgradient(weights: ModelWeights, X, y, epsilon: float, reg_lambda: float) -> tuple[np.ndarray, float]:
    """Subgradient of the mean loss with respect to (w, bias)."""
    X = _check_dim(weights, X)
    resid = np.asarray(y, float) - (X @ weights.w + weights.bias)
    # d/dpred of the hinge term; zero inside the tube
    g = np.where(np.abs(resid) > epsilon, -np.sign(resid), 0.0)
    n = len(resid)
    return X.T @ g / n + reg_lambda * weights.w, float(g.sum() / n)


def train_local(start: ModelWeights, X, y, cfg: TrainConfig) -> ModelWeights:
    X = _check_dim(start, X)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ModelError("cannot train on an empty shard")
    if cfg.epochs == 0:
        return start
    rng = np.random.default_rng(cfg.seed)
    w, b = start.w.copy(), start.bias
    n, bs, lr, eps, lam = len(y), cfg.batch_size, cfg.learning_rate, cfg.epsilon, cfg.reg_lambda
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            xb, yb = X[idx], y[idx]
            resid = yb - (xb @ w + b)
            g = np.where(np.abs(resid) > eps, -np.sign(resid), 0.0)
            w -= lr * (xb.T @ g / len(idx) + lam * w)
            b -= lr * g.mean()
            step += 1
            if not (np.isfinite(b) and np.all(np.isfinite(w))):
                raise NonFiniteLoss(f"weights diverged at epoch {epoch}, step {step}")
    return ModelWeights(w, b)


def predict(weights: ModelWeights, X, cap: float = 125) -> np.ndarray:
    return np.clip(raw_scores(weights, X), 0.0, cap)


def rmse(predictions, actuals) -> float:
    p = np.asarray(predictions, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if p.size == 0 or a.size == 0:
        raise ValueError("rmse of empty input")
    if p.shape != a.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {a.shape}")
    return float(np.sqrt(np.mean((p - a) ** 2)))


def serialize_weights(weights: ModelWeights) -> bytes:
    if not weights.is_finite():
        raise ModelError("refusing to serialize non-finite weights")
    d = weights.d
    return _HEADER.pack(MAGIC, weights.version, d) + struct.pack(f"<{d + 1}d", *weights.w, weights.bias)


def deserialize_weights(data: bytes) -> ModelWeights:
    if len(data) < _HEADER.size:
        raise TruncatedPayload(f"{len(data)} bytes is shorter than the header")
    magic, version, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    expected = _HEADER.size + 8 * (d + 1)
    if len(data) != expected:
        raise TruncatedPayload(f"expected {expected} bytes for d={d}, got {len(data)}")
    values = struct.unpack_from(f"<{d + 1}d", data, _HEADER.size)
    return ModelWeights(np.array(values[:d]), values[d], version)

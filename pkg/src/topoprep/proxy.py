"""Soft-label proxies and KL-divergence similarity between them."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class GlobalDataset:
    """Feature matrix shared identically by every node (G x D)."""

    features: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeError(f"global dataset must be a non-empty G x D matrix, got {x.shape}")
        if not np.isfinite(x).all():
            raise NumericError("global dataset contains non-finite values")
        object.__setattr__(self, "features", x)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class Proxy:
    """Raw model outputs (G x C logits) on the global dataset."""

    logits: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.logits, dtype=np.float64)
        if z.ndim != 2:
            raise ShapeError(f"proxy must be a G x C matrix, got {z.shape}")
        if not np.isfinite(z).all():
            raise NumericError("proxy contains non-finite logits")
        object.__setattr__(self, "logits", z)

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape

    def nbytes(self) -> int:
        return proxy_bytes(*self.shape)

    def to_bytes(self) -> bytes:
        g, c = self.shape
        return struct.pack("<qq", g, c) + self.logits.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Proxy":
        g, c = struct.unpack_from("<qq", blob)
        body = np.frombuffer(blob, dtype="<f8", offset=16, count=g * c)
        return cls(body.reshape(g, c).astype(np.float64))


def proxy_bytes(g: int, c: int) -> int:
    """Wire size of a G x C proxy: two int64 dims plus the float64 body."""
    return 16 + 8 * g * c


def compute_proxy(model, data: GlobalDataset) -> Proxy:
    """Logits ``W x + b`` of a linear model for every global sample.

    ``model`` is anything with ``W`` (C x D) and ``b`` (C,) arrays.
    """
    w = np.asarray(model.W, dtype=np.float64)
    b = np.asarray(model.b, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ShapeError(f"model must produce at least 2 outputs, W has shape {w.shape}")
    if w.shape[1] != data.dims:
        raise ShapeError(f"model expects D={w.shape[1]}, global dataset has D={data.dims}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match W {w.shape}")
    return Proxy(data.features @ w.T + b)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_probs(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = softmax(z)
    return p, np.log(np.maximum(p, PROB_FLOOR))


def kl_divergence(p: Proxy, q: Proxy) -> float:
    """Mean over global samples of KL(softmax(p_i) || softmax(q_i)), in nats."""
    if p.shape != q.shape:
        raise ShapeError(f"proxy shapes differ: {p.shape} vs {q.shape}")
    if p is q or np.array_equal(p.logits, q.logits):
        return 0.0
    pp, logp = _log_probs(p.logits)
    _, logq = _log_probs(q.logits)
    per_sample = np.sum(pp * (logp - logq), axis=1)
    theta = float(np.mean(per_sample))
    if not np.isfinite(theta):
        raise NumericError("KL divergence is not finite")
    # rounding can leave a tiny negative value for near-identical rows
    return max(theta, 0.0)


def pair_similarity(p: Proxy, q: Proxy) -> float:
    """Symmetrised KL. Callers pass operands in ascending node-id order so
    the floating-point evaluation order is fixed per pair."""
    return (kl_divergence(p, q) + kl_divergence(q, p)) / 2.0

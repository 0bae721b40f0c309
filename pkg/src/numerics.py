#!/usr/bin/env python3
"""
Numerical primitives shared by every other module:
finite-checked vectors and matrices, seeded random streams,
softmax / sigmoid, categorical sampling, cosine similarity and
Spearman rank correlation.

Everything runs in 64-bit floats; 32-bit only appears on disk.
"""

import logging
from typing import Sequence, Union

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from errors import (
    DegenerateVectorError,
    DistributionError,
    ParameterError,
    UndefinedCorrelationError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]

# Independent named streams derived from one experiment seed
STREAM_IDS = {
    "init": 0,
    "sampling": 1,
    "noise": 2,
    "eval": 3,
    "data": 4,
    "probe": 5,
}

PROBABILITY_SUM_TOLERANCE = 1e-9


def vec64(values: ArrayLike) -> np.ndarray:
    """Build a 1-D float64 vector, rejecting NaN/Inf"""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ParameterError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ParameterError("vector has non-finite entries")
    return v


def mat64(values: ArrayLike, rows: int = None, cols: int = None) -> np.ndarray:
    """Build a row-major float64 matrix, rejecting NaN/Inf and bad shapes"""
    m = np.asarray(values, dtype=np.float64)
    if rows is not None and cols is not None:
        if m.size != rows * cols:
            raise ParameterError(f"{m.size} elements cannot fill a {rows}x{cols} matrix")
        m = m.reshape(rows, cols)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ParameterError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ParameterError("matrix has non-finite entries")
    return np.ascontiguousarray(m)


class RngStream:
    """Counter-based random stream keyed by (seed, stream id).

    Philox is a counter-based generator, so the same key gives the same
    draws on every platform. One stream per consumer thread.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0 or seed >= 2**64 or stream_id >= 2**64:
            raise ParameterError("seed and stream id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = self.seed | (self.stream_id << 64)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    @classmethod
    def named(cls, seed: int, name: str) -> "RngStream":
        if name not in STREAM_IDS:
            raise ParameterError(f"unknown stream name '{name}'")
        return cls(seed, STREAM_IDS[name])

    def random(self, size=None):
        return self._generator.random(size)

    def integers(self, high: int, size=None):
        return self._generator.integers(0, high, size=size)

    def standard_normal(self, size=None):
        return self._generator.standard_normal(size)

    def uniform(self, low: float, high: float, size=None):
        return self._generator.uniform(low, high, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._generator.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def softmax(logits: ArrayLike, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax along the last axis, max-subtracted"""
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def sigmoid(x: ArrayLike) -> np.ndarray:
    return expit(np.asarray(x, dtype=np.float64))


def sample_categorical(probs: ArrayLike, rng: RngStream) -> int:
    """Inverse-CDF draw; consumes exactly one uniform from rng"""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DistributionError("probabilities must be a non-empty vector")
    if np.any(p < 0):
        raise DistributionError("probabilities contain a negative entry")
    total = float(np.sum(p))
    if abs(total - 1.0) > PROBABILITY_SUM_TOLERANCE:
        raise DistributionError(f"probabilities sum to {total!r}, not 1")
    u = rng.random()
    index = int(np.searchsorted(np.cumsum(p), u, side="right"))
    # rounding can leave the cumulative sum a hair under u
    last_positive = int(np.flatnonzero(p)[-1])
    return min(index, last_positive)


def cosine(a: ArrayLike, b: ArrayLike) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0:
        raise DegenerateVectorError("first vector has zero norm", item=0)
    if nb == 0:
        raise DegenerateVectorError("second vector has zero norm", item=1)
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def l2_normalize(v: ArrayLike) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DegenerateVectorError("cannot normalize a zero vector")
    return v / norm


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise l2_normalize; the error names the first zero row"""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateVectorError(f"row {int(zero[0])} has zero norm", item=int(zero[0]))
    return m / norms[:, None]


def pairwise_cosines(reps: ArrayLike) -> np.ndarray:
    """Cosines over unordered distinct pairs (i < j), row-major order"""
    m = np.asarray(reps, dtype=np.float64)
    if m.ndim != 2:
        raise ParameterError(f"expected an N x k matrix of representations, got shape {m.shape}")
    unit = l2_normalize_rows(m)
    i, j = np.triu_indices(m.shape[0], k=1)
    sims = np.einsum("ij,ij->i", unit[i], unit[j])
    return np.clip(sims, -1.0, 1.0)


def spearman(x: ArrayLike, y: ArrayLike) -> float:
    """Pearson correlation of average ranks.

    Written out explicitly so spearman(x, y) == spearman(y, x) bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ParameterError(f"spearman needs two equal-length sequences, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ParameterError("spearman needs at least two observations")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    cx = rx - rx.mean()
    cy = ry - ry.mean()
    sxx = np.dot(cx, cx)
    syy = np.dot(cy, cy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    return float(np.clip(np.dot(cx, cy) / np.sqrt(sxx * syy), -1.0, 1.0))

"""Deterministic vector/matrix primitives.

All arithmetic is float64 regardless of how embeddings are stored on disk;
the gradient checks elsewhere in the engine need the extra precision.
Everything here is a pure function with a fixed summation order, so results
are reproducible no matter how callers thread.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    NonFiniteEvaluation,
    NonPositiveEntry,
    NonPositiveTemperature,
    ShapeMismatch,
    ZeroNorm,
)

ZERO_NORM_FLOOR = 1e-15


def as_vector(v) -> np.ndarray:
    """Coerce to a finite float64 1-D array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatch(f"expected nonempty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEvaluation("vector contains NaN or Inf")
    return arr


def as_matrix(m) -> np.ndarray:
    """Coerce to a finite float64 2-D array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionMismatch(f"expected nonempty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEvaluation("matrix contains NaN or Inf")
    return arr


def normalize(v) -> np.ndarray:
    """Scale v to unit L2 norm. Raises ZeroNorm for (near-)zero input."""
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM_FLOOR:
        raise ZeroNorm(f"cannot normalize vector with norm {norm!r}")
    return arr / norm


def normalize_rows(m) -> np.ndarray:
    """Row-wise unit normalization; any zero row raises ZeroNorm."""
    arr = as_matrix(m)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms < ZERO_NORM_FLOOR):
        bad = int(np.argmin(norms))
        raise ZeroNorm(f"row {bad} has near-zero norm")
    return arr / norms[:, None]


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two nonzero vectors of equal dimension."""
    va = as_vector(a)
    vb = as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dimensions differ: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < ZERO_NORM_FLOOR or nb < ZERO_NORM_FLOOR:
        raise ZeroNorm("cosine undefined for zero vector")
    return float(np.dot(va, vb) / (na * nb))


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sorts descending, finds the largest cutoff index whose threshold keeps
    the entry positive, clips at the threshold, then renormalizes away the
    (sub-1e-12) floating-point residual so the output sums to 1 exactly.
    Ties at the cutoff resolve to the largest valid index.
    """
    arr = as_vector(v)
    u = np.sort(arr)[::-1]
    cumsum = np.cumsum(u)
    indices = np.arange(1, arr.size + 1)
    positive = u - (cumsum - 1.0) / indices > 0
    cutoff = int(np.nonzero(positive)[0][-1])  # first entry is always positive
    tau = (cumsum[cutoff] - 1.0) / (cutoff + 1)
    projected = np.maximum(arr - tau, 0.0)
    total = projected.sum()
    return projected / total


def row_softmax(m, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of m / temperature, max-subtracted for stability."""
    if not np.isfinite(temperature) or temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature!r}")
    arr = as_matrix(m) / float(temperature)
    shifted = arr - arr.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def symmetric_kl(p, q) -> float:
    """Mean symmetrized KL divergence between row-stochastic matrices.

    Returns (1 / 2N) * sum over rows of [KL(P_r || Q_r) + KL(Q_r || P_r)]
    where N is the row count. Entries must be strictly positive, which
    row_softmax guarantees.
    """
    pm = as_matrix(p)
    qm = as_matrix(q)
    if pm.shape != qm.shape:
        raise ShapeMismatch(f"shapes differ: {pm.shape} vs {qm.shape}")
    if np.any(pm <= 0) or np.any(qm <= 0):
        raise NonPositiveEntry("symmetric_kl requires strictly positive entries")
    log_ratio = np.log(pm) - np.log(qm)
    total = float(np.sum(pm * log_ratio) - np.sum(qm * log_ratio))
    return total / (2.0 * pm.shape[0])


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    This is the oracle the analytic gradients elsewhere are checked against,
    so it deliberately shares no code with them.
    """
    x0 = as_vector(x)
    if h <= 0:
        raise ValueError("step must be positive")
    grad = np.empty_like(x0)
    for i in range(x0.size):
        step = np.zeros_like(x0)
        step[i] = h
        f_plus = float(f(x0 + step))
        f_minus = float(f(x0 - step))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteEvaluation(f"f not finite near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def sample_gaussian(
    mean, factor, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw `count` rows from N(mean, factor @ factor.T) using the given generator.

    Rows are mean + z @ factor.T with z standard normal, so identical seeds
    give bitwise-identical output.
    """
    mu = as_vector(mean)
    a = as_matrix(factor)
    if a.shape != (mu.size, mu.size):
        raise DimensionMismatch(
            f"factor shape {a.shape} does not match mean dimension {mu.size}"
        )
    if count < 1:
        raise ValueError("count must be >= 1")
    z = rng.standard_normal((count, mu.size))
    return mu[None, :] + z @ a.T

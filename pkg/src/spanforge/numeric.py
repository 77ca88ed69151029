"""Dense float64 math substrate.

Plain numpy arrays throughout; ``Vec64``/``Mat64`` are aliases, shapes are the
caller's contract. ``finite_diff_grad`` is the independent gradient estimator
the test suite uses to verify every analytic backward pass, so it must never
share code with the paths it checks.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

Vec64 = np.ndarray
Mat64 = np.ndarray

# Positions excluded from a distribution carry this value before softmax.
# Most-negative finite double: it passes finiteness checks, and softmax maps
# it to exactly 0. One sentinel serves both padding and region masking.
MASK_VALUE = float(np.finfo(np.float64).min)


def softmax(v: Vec64) -> Vec64:
    """Shift-stable softmax; entries equal to ``MASK_VALUE`` map to exactly 0."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("softmax expects a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input must be finite (MASK_VALUE is the only sentinel)")
    live = v != MASK_VALUE
    if not live.any():
        raise ValueError("softmax over an all-masked vector is degenerate")
    out = np.zeros_like(v)
    e = np.exp(v[live] - v[live].max())
    out[live] = e / e.sum()
    return out


def masked_log_softmax(v: Vec64) -> Vec64:
    """Log-softmax over the unmasked entries; masked entries become -inf."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("masked_log_softmax expects a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("masked_log_softmax input must be finite")
    live = v != MASK_VALUE
    if not live.any():
        raise ValueError("masked_log_softmax over an all-masked vector is degenerate")
    out = np.full(v.shape, -np.inf)
    x = v[live]
    m = x.max()
    out[live] = x - (m + np.log(np.exp(x - m).sum()))
    return out


def cosine_sim(u: Vec64, v: Vec64) -> float:
    """Cosine similarity of two equal-length vectors with positive norms."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"cosine_sim shape mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def mean_pool(rows: Mat64, index_set: Iterable[int]) -> Vec64:
    """Arithmetic mean of the selected rows of a 2-d array."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("mean_pool expects a 2-d array of row vectors")
    idx = list(index_set)
    if not idx:
        raise ValueError("mean_pool over an empty index set")
    n = rows.shape[0]
    for i in idx:
        if not 0 <= i < n:
            raise ValueError(f"mean_pool index {i} out of range [0, {n})")
    return rows[idx].mean(axis=0)


def finite_diff_grad(f: Callable[[Vec64], float], x: Vec64, eps: float = 1e-5) -> Vec64:
    """Central-difference gradient estimate of a scalar function of a flat vector.

    eps defaults to 1e-5, balancing truncation against cancellation in double
    precision. Raises if any probed evaluation is non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("finite_diff_grad expects a flat parameter vector")
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation while probing coordinate {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_error(analytic: Vec64, numeric: Vec64, abs_floor: float = 1e-8) -> float:
    """Worst-case mixed relative/absolute disagreement between two gradients.

    Elements where both magnitudes sit below ``abs_floor`` are compared
    absolutely, everything else relative to the larger magnitude.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError("gradient shape mismatch")
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    small = scale < abs_floor
    err = np.where(small, diff, diff / np.maximum(scale, abs_floor))
    return float(err.max()) if err.size else 0.0

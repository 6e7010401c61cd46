from __future__ import annotations

from typing import Any, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

EPS = np.finfo(float).eps
DIV_GUARD = 1e-300


def as_dense(M: Any) -> np.ndarray:
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


def inf_norm(M: Any) -> float:
    """Induced infinity norm: max absolute row sum."""
    if sp.issparse(M):
        if M.shape[0] == 0:
            return 0.0
        return float(np.max(np.asarray(abs(M).sum(axis=1)).ravel(), initial=0.0))
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.size == 0:
        return 0.0
    return float(np.abs(M).sum(axis=1).max())


def rank_tolerance(shape: Tuple[int, int], sigma_max: float) -> float:
    return max(shape) * EPS * sigma_max


def numerical_rank(M: np.ndarray, tol: Optional[float] = None) -> int:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if tol is None:
        tol = rank_tolerance(M.shape, float(s[0]) if s.size else 0.0)
    return int(np.sum(s > tol))


def pinv(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.shape[1] == 0:
        return np.zeros((0, F.shape[0]))
    return scipy.linalg.pinv(F)


def guarded_ratio(num: np.ndarray, den: np.ndarray) -> Tuple[np.ndarray, int]:
    """num/den with entries whose denominator is below the guard mapped to 1."""
    bad = den < DIV_GUARD
    ratio = np.ones_like(num)
    np.divide(num, den, out=ratio, where=~bad)
    return ratio, int(bad.sum())


def matmul_maps(maps: Any, M: np.ndarray) -> np.ndarray:
    """Apply per-(a,z) maps to M: dense (A,Z,d,d) or nested lists of sparse matrices."""
    if isinstance(maps, np.ndarray):
        return np.matmul(maps, M)
    return np.stack([np.stack([np.asarray(m @ M) for m in row]) for row in maps])

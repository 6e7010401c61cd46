"""Value-directed compression.

The basis is grown from the reward columns through the observation-weighted
transition maps (a Krylov space). Lossless modes keep every candidate that is
independent of the current basis, in FIFO order. The lossy mode picks the
candidate with the largest least-squares residual until k columns exist.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from bsqz.compressed import build_compressed, compressed_maps, error_report
from bsqz.config import VdcConfig
from bsqz.errors import RankDeficientBasisError
from bsqz.linalg import EPS, numerical_rank, pinv
from bsqz.pomdp import obs_weighted_transitions, require_valid
from bsqz.types import CompressionBasis, Pomdp

logger = logging.getLogger(__name__)

SVD_CHUNK = 256


class _Span:
    """Orthonormal basis of span(F) with the triangular factor of F = QR."""

    def __init__(self, n: int):
        self.Q = np.zeros((n, 0))
        self.R = np.zeros((0, 0))

    @property
    def k(self) -> int:
        return self.Q.shape[1]

    def project_out(self, C: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Coefficients and residuals of the columns of C, Gram-Schmidt applied twice."""
        H = self.Q.T @ C
        Rs = C - self.Q @ H
        H2 = self.Q.T @ Rs
        return H + H2, Rs - self.Q @ H2

    def residuals(self, C: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.project_out(C)[1], axis=0)

    def independent(self, C: np.ndarray, rank_tol: float | None) -> np.ndarray:
        """True where appending the column raises the numerical rank of F."""
        H, Rs = self.project_out(C)
        norms = np.linalg.norm(Rs, axis=0)
        k, n = self.k, self.Q.shape[0]
        out = np.zeros(C.shape[1], dtype=bool)
        for lo in range(0, C.shape[1], SVD_CHUNK):
            hi = min(lo + SVD_CHUNK, C.shape[1])
            M = np.zeros((hi - lo, k + 1, k + 1))
            M[:, :k, :k] = self.R
            M[:, :k, k] = H[:, lo:hi].T
            M[:, k, k] = norms[lo:hi]
            s = np.linalg.svd(M, compute_uv=False)
            tol = rank_tol if rank_tol is not None else max(n, k + 1) * EPS * s[:, 0]
            out[lo:hi] = s[:, -1] > tol
        return out

    def append(self, c: np.ndarray) -> None:
        h, r = self.project_out(c[:, None])
        nr = float(np.linalg.norm(r))
        k = self.k
        R = np.zeros((k + 1, k + 1))
        R[:k, :k] = self.R
        R[:k, k] = h[:, 0]
        R[k, k] = nr
        self.R = R
        self.Q = np.column_stack([self.Q, r[:, 0] / nr])


def dependence_residual(F: np.ndarray, c: np.ndarray) -> float:
    """||c - F w|| for the least-squares w; ||c|| when F has no columns."""
    c = np.asarray(c, dtype=float)
    F = np.asarray(F, dtype=float).reshape(c.shape[0], -1)
    if F.shape[1] == 0:
        return float(np.linalg.norm(c))
    w, *_ = np.linalg.lstsq(F, c, rcond=None)
    return float(np.linalg.norm(c - F @ w))


def _dedupe(pool: List[np.ndarray], seen: set, new: Sequence[np.ndarray]) -> None:
    for c in new:
        key = c.tobytes()
        if key not in seen:
            seen.add(key)
            pool.append(c)


def krylov_basis(model: Pomdp, cfg: VdcConfig) -> CompressionBasis:
    """Basis F only; `vdc_compress` adds the decompression map."""
    require_valid(model)
    maps = obs_weighted_transitions(model)
    n = model.n_states
    span = _Span(n)
    residual_test = cfg.mode == "lossless-residual"
    cap = cfg.k if cfg.mode == "lossy-greedy" else n

    def keep_mask(pool: List[np.ndarray]) -> np.ndarray:
        C = np.column_stack(pool)
        if residual_test:
            return span.residuals(C) >= cfg.tau
        return span.independent(C, cfg.rank_tol)

    pool: List[np.ndarray] = []
    seen: set = set()
    _dedupe(pool, seen, [np.array(model.reward[:, a]) for a in range(model.n_actions)])
    pool = [c for c, keep in zip(pool, keep_mask(pool)) if keep] if pool else []

    cols: List[np.ndarray] = []
    picked: List[float] = []
    while pool and len(cols) < cap:
        if cfg.mode == "lossy-greedy":
            res = span.residuals(np.column_stack(pool))
            j = int(np.argmax(res))
            picked.append(float(res[j]))
        else:
            j = 0
            picked.append(float(span.residuals(pool[0][:, None])[0]))
        c = pool.pop(j)
        span.append(c)
        cols.append(c)
        _dedupe(pool, seen, [np.asarray(maps.get(a, z) @ c).ravel() for a in range(maps.n_actions) for z in range(maps.n_obs)])
        if pool:
            pool = [p for p, keep in zip(pool, keep_mask(pool)) if keep]
        logger.debug("vdc: %d columns, %d candidates", len(cols), len(pool))

    if not cols:
        logger.warning("vdc: reward is zero, basis is empty")
    F = np.column_stack(cols) if cols else np.zeros((n, 0))
    provenance: Dict[str, object] = {
        "mode": cfg.mode,
        "tau": cfg.tau,
        "k": cfg.k,
        "rank_tol": cfg.rank_tol,
        "dependence_test": "residual" if residual_test else "rank",
        "selection_residuals": picked,
        "candidates_seen": len(seen),
    }
    logger.info("vdc %s: %d columns", cfg.mode, F.shape[1])
    return CompressionBasis(F, None, "vdc", False, provenance)


def fit_compressed_maps(model: Pomdp, F: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares compressed reward and maps, R~ = F+ R and T~ = F+ T^{a,z} F."""
    F = np.asarray(F, dtype=float)
    if numerical_rank(F) < F.shape[1]:
        raise RankDeficientBasisError(
            f"basis with {F.shape[1]} columns has numerical rank {numerical_rank(F)}",
            {"columns": F.shape[1], "rank": numerical_rank(F)},
        )
    return compressed_maps(model, F, pinv(F))


def vdc_compress(model: Pomdp, cfg: VdcConfig) -> CompressionBasis:
    basis = krylov_basis(model, cfg)
    if basis.k and numerical_rank(basis.F) < basis.k:
        raise RankDeficientBasisError("Krylov basis lost rank", {"columns": basis.k})
    basis.F_dag = pinv(basis.F)
    return basis


def error_sweep(model: Pomdp, cfg: VdcConfig, values: Sequence[float]) -> pd.DataFrame:
    """eps_R and eps_T over a sweep of k (lossy-greedy) or tau (lossless-residual).

    Greedy selection is prefix-stable, so the k sweep fits prefixes of one run.
    """
    rows = []
    if cfg.mode == "lossy-greedy":
        ks = sorted({int(v) for v in values if v >= 1})
        full = krylov_basis(model, cfg.model_copy(update={"k": max(ks)}))
        for k in ks:
            rows.append(_sweep_row(model, "k", float(k), full.F[:, :k]))
    elif cfg.mode == "lossless-residual":
        for tau in values:
            basis = krylov_basis(model, cfg.model_copy(update={"tau": float(tau)}))
            rows.append(_sweep_row(model, "tau", float(tau), basis.F))
    else:
        rows.append(_sweep_row(model, "rank", 0.0, krylov_basis(model, cfg).F))
    return pd.DataFrame(rows, columns=["parameter", "value", "k", "eps_R", "eps_T"])


def _sweep_row(model: Pomdp, parameter: str, value: float, F: np.ndarray) -> Dict[str, object]:
    basis = CompressionBasis(F, pinv(F), "vdc")
    if F.shape[1] == 0:
        return {"parameter": parameter, "value": value, "k": 0, "eps_R": float("nan"), "eps_T": float("nan")}
    rep = error_report(model, basis, compressed=build_compressed(model, basis))
    return {"parameter": parameter, "value": value, "k": F.shape[1], "eps_R": rep.eps_R, "eps_T": rep.eps_T}

"""Nonnegative factorisations of a sampled belief matrix.

P-NMF minimises 1/2 ||B - F F^T B||^2 + lam/2 ||F F^T||^2 over F >= 0,
O-NMF minimises ||B - F H||^2 + lam ||I - F F^T||^2 over F, H >= 0, and
LP-NMF minimises KL(B || F H) plus mu times the summed symmetric KL
between the codes of neighbouring beliefs over F, H >= 0.
All three use multiplicative updates, safeguarded by backtracking so
the objective never increases.
"""

from __future__ import annotations

import logging
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from bsqz.config import NmfConfig
from bsqz.errors import ConfigError, DimensionMismatchError, EmptyBeliefsError
from bsqz.linalg import guarded_ratio, inf_norm
from bsqz.sampling import delta_subsample, knn_graph
from bsqz.types import BeliefMatrix, CompressionBasis, FactorisationTrace, NeighbourhoodGraph

logger = logging.getLogger(__name__)

KL_FLOOR = 1e-12
ACCEPT_SLACK = 1e-11
BACKTRACK_STEPS = 40
PNMF_LAMBDA_GRID = (0.0, 1e-3, 1e-2, 1e-1, 1.0)
PSEUDO_INVERSE_ITERS = 500
LAMBDA_BALANCE_SWEEPS = 50
LAMBDA_BALANCE_RTOL = 1e-3

Beliefs = Union[BeliefMatrix, np.ndarray]


def _as_matrix(B: Beliefs) -> np.ndarray:
    X = B.beliefs if isinstance(B, BeliefMatrix) else np.asarray(B, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatchError(f"belief matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)) or (X < 0).any():
        raise ValueError("belief matrix must be finite and nonnegative")
    if not X.any():
        raise EmptyBeliefsError("belief matrix is all zero")
    return X


def _uniform_init(rng: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
    return rng.uniform(0.1, 1.1, size=shape)


def _descend(
    X: np.ndarray,
    X_mu: np.ndarray,
    f: Callable[[np.ndarray], float],
    f_old: float,
) -> Tuple[np.ndarray, float]:
    """Take the multiplicative step, or back off along it until f does not increase."""
    f_mu = f(X_mu)
    if f_mu <= f_old + ACCEPT_SLACK:
        return X_mu, f_mu
    t = 0.5
    for _ in range(BACKTRACK_STEPS):
        X_t = X + t * (X_mu - X)
        f_t = f(X_t)
        if f_t <= f_old:
            return X_t, f_t
        t *= 0.5
    return X, f_old


def _stopped(prev: float, cur: float, tol: float) -> bool:
    if prev <= 0.0:
        return True
    return (prev - cur) / prev < tol


# ---------------------------------------------------------------------------
# P-NMF


def _gram_root(G: np.ndarray) -> np.ndarray:
    """L with L L^T = G, so ||X B||_F = ||X L||_F for any X."""
    w, V = np.linalg.eigh(G)
    return V * np.sqrt(np.clip(w, 0.0, None))


def _pnmf_value(F: np.ndarray, L: np.ndarray, lam: float) -> float:
    resid = L - F @ (F.T @ L)
    FtF = F.T @ F
    return 0.5 * float(np.sum(resid * resid)) + 0.5 * lam * float(np.sum(FtF * FtF))


def pnmf_objective(F: np.ndarray, B: Beliefs, lam: float) -> float:
    X = B.beliefs if isinstance(B, BeliefMatrix) else np.asarray(B, dtype=float)
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != X.shape[0]:
        raise DimensionMismatchError(f"F has shape {F.shape}, B has {X.shape[0]} rows")
    resid = X - F @ (F.T @ X)
    P = F @ F.T
    return 0.5 * float(np.sum(resid * resid)) + 0.5 * lam * float(np.sum(P * P))


def pnmf_gradient(F: np.ndarray, B: Beliefs, lam: float) -> np.ndarray:
    X = B.beliefs if isinstance(B, BeliefMatrix) else np.asarray(B, dtype=float)
    G = X @ X.T
    GF = G @ F
    FtF = F.T @ F
    return -2.0 * GF + F @ (F.T @ GF) + GF @ FtF + 2.0 * lam * F @ FtF


def _pnmf_step(F: np.ndarray, G: np.ndarray, L: np.ndarray, lam: float, g_old: float) -> Tuple[np.ndarray, float, int]:
    GF = G @ F
    FtF = F.T @ F
    den = F @ (F.T @ GF) + GF @ FtF + 2.0 * lam * F @ FtF
    ratio, guarded = guarded_ratio(2.0 * GF, den)
    F_new, g_new = _descend(F, F * ratio, lambda Y: _pnmf_value(Y, L, lam), g_old)
    return F_new, g_new, guarded


def pnmf_update_step(F: np.ndarray, B: Beliefs, lam: float) -> np.ndarray:
    """One multiplicative P-NMF update; the objective does not increase."""
    X = B.beliefs if isinstance(B, BeliefMatrix) else np.asarray(B, dtype=float)
    F = np.asarray(F, dtype=float)
    G = X @ X.T
    L = _gram_root(G)
    F_new, _, guarded = _pnmf_step(F, G, L, lam, _pnmf_value(F, L, lam))
    if guarded:
        logger.debug("pnmf: %d entries kept by the division guard", guarded)
    return F_new


def _pnmf_run(X: np.ndarray, k: int, lam: float, cfg: NmfConfig) -> Tuple[np.ndarray, FactorisationTrace]:
    G = X @ X.T
    L = _gram_root(G)
    rng = np.random.default_rng(cfg.seed)
    F = _uniform_init(rng, (X.shape[0], k))
    fit = np.linalg.norm(F @ (F.T @ L))
    if fit > 0:
        F *= np.sqrt(np.linalg.norm(L) / fit)

    g = _pnmf_value(F, L, lam)
    history = [g]
    guarded = 0
    stop = "max_iters"
    for _ in range(cfg.max_iters):
        F, g_new, n_guard = _pnmf_step(F, G, L, lam, g)
        guarded += n_guard
        history.append(g_new)
        done = _stopped(g, g_new, cfg.tol)
        g = g_new
        if done:
            stop = "tol"
            break
    if guarded:
        logger.warning("pnmf: division guard hit %d times", guarded)
    return F, FactorisationTrace(history, len(history) - 1, stop, guarded, lam)


def pnmf_factorize(
    B: Beliefs,
    cfg: NmfConfig,
    discount: Optional[float] = None,
) -> Tuple[CompressionBasis, FactorisationTrace]:
    """P-NMF basis with F_dag = F^T.

    With lam = "auto" every value of the lambda grid is tried and the one
    whose discount * ||F F^T||_inf lands closest to 1 is kept.
    """
    X = _as_matrix(B)
    if cfg.lam == "auto":
        if discount is None:
            raise ConfigError("pnmf with lam='auto' needs the model discount")
        best = None
        for lam in PNMF_LAMBDA_GRID:
            F, trace = _pnmf_run(X, cfg.k, lam, cfg)
            gap = abs(discount * inf_norm(F @ F.T) - 1.0)
            logger.info("pnmf auto: lam=%g margin gap %.4g", lam, gap)
            if best is None or gap < best[0]:
                best = (gap, F, trace)
        _, F, trace = best
    else:
        F, trace = _pnmf_run(X, cfg.k, float(cfg.lam), cfg)

    provenance = {
        "variant": "pnmf",
        "k": cfg.k,
        "lam": trace.lam,
        "seed": cfg.seed,
        "iterations": trace.iterations,
        "stop_reason": trace.stop_reason,
        "A_inf": inf_norm(F @ F.T),
    }
    if discount is not None:
        provenance["contraction_margin"] = discount * provenance["A_inf"]
        if provenance["contraction_margin"] >= 1.0:
            logger.warning("pnmf: contraction margin %.4g >= 1", provenance["contraction_margin"])
    logger.info("pnmf: k=%d lam=%g, %d iterations (%s)", cfg.k, trace.lam, trace.iterations, trace.stop_reason)
    return CompressionBasis(F, F.T.copy(), "pnmf", True, provenance), trace


# ---------------------------------------------------------------------------
# O-NMF


def init_pair(X: np.ndarray, k: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded positive (F, H) scaled so ||F H||_F matches ||X||_F."""
    rng = np.random.default_rng(seed)
    F = _uniform_init(rng, (X.shape[0], k))
    H = _uniform_init(rng, (k, X.shape[1]))
    c = np.sqrt(np.linalg.norm(X) / np.linalg.norm(F @ H))
    return F * c, H * c


def _onmf_terms(F: np.ndarray, H: np.ndarray, X: np.ndarray) -> Tuple[float, float]:
    resid = X - F @ H
    FtF = F.T @ F
    ortho = X.shape[0] - 2.0 * np.trace(FtF) + float(np.sum(FtF * FtF))
    return float(np.sum(resid * resid)), float(ortho)


def onmf_objective(F: np.ndarray, H: np.ndarray, X: np.ndarray, lam: float) -> float:
    recon, ortho = _onmf_terms(F, H, X)
    return recon + lam * ortho


def _onmf_sweep(F: np.ndarray, H: np.ndarray, X: np.ndarray, lam: float, J: float) -> Tuple[np.ndarray, np.ndarray, float, int]:
    ratio, n1 = guarded_ratio(F.T @ X, F.T @ F @ H)
    H, J = _descend(H, H * ratio, lambda Y: onmf_objective(F, Y, X, lam), J)
    HHt = H @ H.T
    ratio, n2 = guarded_ratio(X @ H.T + 2.0 * lam * F, F @ HHt + 2.0 * lam * F @ (F.T @ F))
    F, J = _descend(F, F * ratio, lambda Y: onmf_objective(Y, H, X, lam), J)
    return F, H, J, n1 + n2


def balance_lambda(
    F: np.ndarray,
    H: np.ndarray,
    X: np.ndarray,
    sweeps: int = LAMBDA_BALANCE_SWEEPS,
    rtol: float = LAMBDA_BALANCE_RTOL,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Self-balancing lambda: start at ||X||^2/n, then after each sweep set it
    to the ratio of the reconstruction term to the orthogonality term.

    Returns the warmed-up pair and every lambda tried; the last one is used.
    """
    lam = float(np.sum(X * X)) / X.shape[0]
    history = [lam]
    for _ in range(sweeps):
        F, H, _, _ = _onmf_sweep(F, H, X, lam, onmf_objective(F, H, X, lam))
        recon, ortho = _onmf_terms(F, H, X)
        if ortho <= KL_FLOOR * max(recon, 1.0):
            break
        new = recon / ortho
        history.append(new)
        if abs(new - lam) <= rtol * lam:
            lam = new
            break
        lam = new
    return F, H, history


def onmf_factorize(B: Beliefs, cfg: NmfConfig) -> Tuple[CompressionBasis, FactorisationTrace]:
    """O-NMF basis with F_dag = F^T.

    With lam = "auto" the weight is balanced during a warm-up phase and then
    held fixed, so the traced objective is monotone under one lambda.
    """
    X = _as_matrix(B)
    F, H = init_pair(X, cfg.k, cfg.seed)
    if cfg.lam == "auto":
        F, H, lam_history = balance_lambda(F, H, X)
        lam = lam_history[-1]
        logger.info("onmf auto: lam %g -> %g after %d updates", lam_history[0], lam, len(lam_history) - 1)
    else:
        lam = float(cfg.lam)
        lam_history = [lam]

    J = onmf_objective(F, H, X, lam)
    history = [J]
    guarded = 0
    stop = "max_iters"
    for _ in range(cfg.max_iters):
        J_prev = J
        F, H, J, n_guard = _onmf_sweep(F, H, X, lam, J)
        guarded += n_guard
        history.append(J)
        if _stopped(J_prev, J, cfg.tol):
            stop = "tol"
            break

    trace = FactorisationTrace(history, len(history) - 1, stop, guarded, lam)
    provenance = {
        "variant": "onmf",
        "k": cfg.k,
        "lam": lam,
        "lam_history": lam_history,
        "seed": cfg.seed,
        "iterations": trace.iterations,
        "stop_reason": stop,
        "A_inf": inf_norm(F @ F.T),
    }
    logger.info("onmf: k=%d lam=%g, %d sweeps (%s)", cfg.k, lam, trace.iterations, stop)
    return CompressionBasis(F, F.T.copy(), "onmf", True, provenance), trace


# ---------------------------------------------------------------------------
# LP-NMF


def kl_divergence(X: np.ndarray, Y: np.ndarray) -> float:
    """Unnormalised KL(X || Y) with a floor inside the logarithm."""
    Yf = np.maximum(Y, KL_FLOOR)
    pos = X > 0
    return float(np.sum(X[pos] * np.log(X[pos] / Yf[pos])) - X.sum() + Y.sum())


def symmetric_kl(p: np.ndarray, q: np.ndarray) -> float:
    lp = np.log(np.maximum(p, KL_FLOOR))
    lq = np.log(np.maximum(q, KL_FLOOR))
    return float(np.sum((p - q) * (lp - lq)))


def _edge_index(graph: NeighbourhoodGraph) -> Tuple[np.ndarray, np.ndarray]:
    E = np.asarray(graph.edges(), dtype=np.int64).reshape(-1, 2)
    return E[:, 0], E[:, 1]


def _locality(H: np.ndarray, graph: NeighbourhoodGraph) -> float:
    a, b = _edge_index(graph)
    if a.size == 0:
        return 0.0
    logH = np.log(np.maximum(H, KL_FLOOR))
    return float(np.sum((H[:, a] - H[:, b]) * (logH[:, a] - logH[:, b])))


def lpnmf_objective(F: np.ndarray, H: np.ndarray, X: np.ndarray, graph: NeighbourhoodGraph, mu: float) -> float:
    value = kl_divergence(X, F @ H)
    if mu > 0:
        value += mu * _locality(H, graph)
    return value


def locality_gradient_parts(H: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Positive and negative parts of the gradient of the locality term in H.

    For an edge (p, q) the derivative in p_r is log(p_r/q_r) + 1 - q_r/p_r;
    the log is split by sign so both parts stay nonnegative.
    """
    Hf = np.maximum(H, KL_FLOOR)
    pos = np.zeros_like(Hf)
    neg = np.zeros_like(Hf)
    if a.size == 0:
        return pos, neg
    lr = np.log(Hf[:, a] / Hf[:, b])
    up, down = np.maximum(lr, 0.0), np.maximum(-lr, 0.0)
    np.add.at(pos.T, a, (1.0 + up).T)
    np.add.at(neg.T, a, (Hf[:, b] / Hf[:, a] + down).T)
    np.add.at(pos.T, b, (1.0 + down).T)
    np.add.at(neg.T, b, (Hf[:, a] / Hf[:, b] + up).T)
    return pos, neg


def fit_nonnegative_inverse(F: np.ndarray, seed: int = 0, iters: int = PSEUDO_INVERSE_ITERS) -> np.ndarray:
    """F_dag >= 0 minimising ||I - F F_dag||_F by multiplicative updates."""
    rng = np.random.default_rng(seed)
    D = _uniform_init(rng, (F.shape[1], F.shape[0]))
    FtF = F.T @ F
    for _ in range(iters):
        ratio, _ = guarded_ratio(F.T, FtF @ D)
        D = D * ratio
    return D


def _subsample_with_graph(B: Beliefs, cfg: NmfConfig) -> Tuple[BeliefMatrix, NeighbourhoodGraph]:
    Bm = B if isinstance(B, BeliefMatrix) else BeliefMatrix(np.asarray(B, dtype=float))
    Bm = delta_subsample(Bm, cfg.delta)
    if Bm.m < 2:
        return Bm, NeighbourhoodGraph(np.zeros((Bm.m, 0), dtype=np.int64), [np.array([], dtype=np.int64)] * Bm.m, 0)
    return Bm, knn_graph(Bm, min(cfg.knn, Bm.m - 1))


def lpnmf_fit(
    B: Beliefs,
    cfg: NmfConfig,
    graph: NeighbourhoodGraph,
) -> Tuple[np.ndarray, np.ndarray, FactorisationTrace]:
    """F, the compressed codes H (one column per belief of B) and the trace.

    Both factors take split-gradient multiplicative steps under the same
    backtracking safeguard as the other variants, so the traced objective
    never increases.
    """
    X = _as_matrix(B)
    if graph.m != X.shape[1]:
        raise DimensionMismatchError(f"graph has {graph.m} nodes, B has {X.shape[1]} columns")
    if cfg.normalise_columns:
        X = X / np.maximum(X.sum(axis=0, keepdims=True), KL_FLOOR)

    mu = cfg.mu
    a, b = _edge_index(graph)
    F, H = init_pair(X, cfg.k, cfg.seed)
    J = lpnmf_objective(F, H, X, graph, mu)
    history = [J]
    guarded = 0
    stop = "max_iters"
    for _ in range(cfg.max_iters):
        J_prev = J
        Q = X / np.maximum(F @ H, KL_FLOOR)
        ratio, n1 = guarded_ratio(Q @ H.T, np.broadcast_to(H.sum(axis=1)[None, :], F.shape))
        F, J = _descend(F, F * ratio, lambda Y: lpnmf_objective(Y, H, X, graph, mu), J)

        Q = X / np.maximum(F @ H, KL_FLOOR)
        num = F.T @ Q
        den = np.broadcast_to(F.sum(axis=0)[:, None], H.shape).copy()
        if mu > 0:
            pos, neg = locality_gradient_parts(H, a, b)
            num = num + mu * neg
            den += mu * pos
        ratio, n2 = guarded_ratio(num, den)
        if mu > 0:
            # the full ratio steps twice past the locality minimum of an edge
            ratio = np.sqrt(ratio)
        H, J = _descend(H, H * ratio, lambda Y: lpnmf_objective(F, Y, X, graph, mu), J)

        guarded += n1 + n2
        history.append(J)
        if _stopped(J_prev, J, cfg.tol):
            stop = "tol"
            break
    if guarded:
        logger.warning("lpnmf: division guard hit %d times", guarded)
    return F, H, FactorisationTrace(history, len(history) - 1, stop, guarded, mu)


def lpnmf_factorize(
    B: Beliefs,
    cfg: NmfConfig,
    graph: Optional[NeighbourhoodGraph] = None,
) -> Tuple[CompressionBasis, FactorisationTrace]:
    """LP-NMF basis with a nonnegative decompression map.

    Without a graph, B is subsampled with cfg.delta and the KNN graph is
    built here; with a graph, B is taken as the already subsampled set.
    """
    if graph is None:
        B, graph = _subsample_with_graph(B, cfg)
    F, H, trace = lpnmf_fit(B, cfg, graph)
    F_dag = fit_nonnegative_inverse(F, cfg.seed)
    provenance = {
        "variant": "lpnmf",
        "k": cfg.k,
        "mu": cfg.mu,
        "delta": cfg.delta,
        "knn": graph.K,
        "m_subsampled": int(H.shape[1]),
        "seed": cfg.seed,
        "iterations": trace.iterations,
        "stop_reason": trace.stop_reason,
        "inverse_residual": float(np.linalg.norm(np.eye(F.shape[0]) - F @ F_dag)),
        "A_inf": inf_norm(F @ F_dag),
    }
    logger.info("lpnmf: k=%d mu=%g on %d beliefs, %d iterations (%s)", cfg.k, cfg.mu, H.shape[1], trace.iterations, trace.stop_reason)
    return CompressionBasis(F, F_dag, "lpnmf", True, provenance), trace


def factorize(B: Beliefs, cfg: NmfConfig, discount: Optional[float] = None) -> Tuple[CompressionBasis, FactorisationTrace]:
    if cfg.variant == "pnmf":
        return pnmf_factorize(B, cfg, discount)
    if cfg.variant == "onmf":
        return onmf_factorize(B, cfg)
    return lpnmf_factorize(B, cfg)

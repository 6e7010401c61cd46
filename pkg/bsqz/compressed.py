from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from bsqz.errors import DimensionMismatchError
from bsqz.linalg import inf_norm
from bsqz.pomdp import obs_weighted_transitions
from bsqz.types import BeliefMatrix, CompressedPomdp, CompressionBasis, CompressionErrorReport, Pomdp

logger = logging.getLogger(__name__)


def compressed_maps(model: Pomdp, F: np.ndarray, F_dag: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(F_dag R, F_dag T^{a,z} F) with the maps stacked as (A, Z, k, k)."""
    maps = obs_weighted_transitions(model)
    k = F.shape[1]
    T_c = np.zeros((model.n_actions, model.n_obs, k, k))
    for a in range(model.n_actions):
        for z in range(model.n_obs):
            T_c[a, z] = F_dag @ np.asarray(maps.get(a, z) @ F)
    return F_dag @ model.reward, T_c


def _check_dims(model: Pomdp, basis: CompressionBasis) -> None:
    if basis.n_states != model.n_states:
        raise DimensionMismatchError(f"basis has {basis.n_states} rows, model has {model.n_states} states")
    if basis.F_dag is None or basis.F_dag.shape != (basis.k, basis.n_states):
        raise DimensionMismatchError("basis has no decompression map of shape (k, n)")


def build_compressed(model: Pomdp, basis: CompressionBasis) -> CompressedPomdp:
    _check_dims(model, basis)
    R_c, T_c = compressed_maps(model, basis.F, basis.F_dag)
    return CompressedPomdp(R_c, T_c, basis, model.discount)


def compress_belief(basis: CompressionBasis, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != basis.n_states:
        raise DimensionMismatchError(f"belief has {b.shape[-1]} entries, basis has {basis.n_states} rows")
    return b @ basis.F


def compress_beliefs(basis: CompressionBasis, B: BeliefMatrix) -> np.ndarray:
    """Compressed beliefs as rows, shape (m, k)."""
    return compress_belief(basis, B.beliefs.T)


def reconstruction_residual(basis: CompressionBasis, B: BeliefMatrix) -> float:
    """||B - F F_dag B||_F."""
    X = B.beliefs
    return float(np.linalg.norm(X - basis.F @ (basis.F_dag @ X)))


def error_report(
    model: Pomdp,
    basis: CompressionBasis,
    v_sup: Optional[float] = None,
    compressed: Optional[CompressedPomdp] = None,
) -> CompressionErrorReport:
    """Infinity-norm fit errors, contraction margin and the value-gap bound.

    `v_sup` estimates the sup-norm of the optimal value; it defaults to
    max|R| / (1 - discount).
    """
    _check_dims(model, basis)
    cm = compressed if compressed is not None else build_compressed(model, basis)
    F = basis.F
    maps = obs_weighted_transitions(model)

    eps_R = inf_norm(model.reward - F @ cm.reward)
    eps_T = 0.0
    for a in range(model.n_actions):
        for z in range(model.n_obs):
            eps_T = max(eps_T, inf_norm(np.asarray(maps.get(a, z) @ F) - F @ cm.maps[a, z]))

    A = basis.projector()
    A_inf = inf_norm(A)
    I_minus_A = inf_norm(np.eye(model.n_states) - A)
    margin = model.discount * A_inf
    if v_sup is None:
        v_sup = model.value_bound()

    bound: Optional[float] = None
    note = ""
    if margin < 1.0:
        bound = I_minus_A / (1.0 - margin) * (inf_norm(model.reward) + model.discount * model.n_obs * v_sup)
    else:
        note = f"contraction margin {margin:.6g} >= 1; bound unavailable"
        logger.warning(note)
    return CompressionErrorReport(
        eps_R=eps_R,
        eps_T=eps_T,
        A_inf=A_inf,
        I_minus_A_inf=I_minus_A,
        contraction_margin=margin,
        v_sup=float(v_sup),
        value_gap_bound=bound,
        bound_note=note,
    )

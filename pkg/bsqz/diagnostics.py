"""Executable checks on compressed backups.

`vbar_value` applies the approximated backup H-bar, where the belief is first
mapped through a linear operator A before the ordinary backup. The checks
below compare it with the exact backup, search for pruning counterexamples
and tabulate the one-step value loss.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from bsqz.compressed import compress_belief, compress_beliefs
from bsqz.linalg import matmul_maps
from bsqz.parallel import ordered_map
from bsqz.pbvi import greedy_actions, original_process, point_backup
from bsqz.pomdp import obs_weighted_transitions
from bsqz.types import (
    BeliefMatrix,
    CompressionBasis,
    CompressionErrorReport,
    DiagnosticReport,
    Pomdp,
    SolveTrace,
    ValueFunction,
)

logger = logging.getLogger(__name__)

IDENTITY_RTOL = 1e-9
PREMISE_TOL = 1e-8
DRAW_CHUNK = 1000


def _hbar(model: Pomdp, y: np.ndarray, gamma: ValueFunction) -> Tuple[float, int]:
    """max_a y R_a + discount * sum_z max_alpha y T^{a,z} alpha, with its action."""
    if len(gamma) == 0:
        raise ValueError("backup needs a non-empty value function")
    proj = matmul_maps(obs_weighted_transitions(model).operator(), gamma.vectors.T)
    scores = np.matmul(y, proj)  # (A, Z, |Gamma|)
    per_action = y @ model.reward + model.discount * scores.max(axis=2).sum(axis=1)
    a = int(np.argmax(per_action))
    return float(per_action[a]), a


def vbar_value(model: Pomdp, A: np.ndarray, gamma_bar: ValueFunction, b: np.ndarray) -> float:
    return _hbar(model, np.asarray(b, dtype=float) @ np.asarray(A, dtype=float), gamma_bar)[0]


def scaling_identity_check(model: Pomdp, A: np.ndarray, gamma_bar: ValueFunction, b: np.ndarray) -> DiagnosticReport:
    """H-bar V(b) against ||b A||_1 * H V(b_hat) with b_hat = b A / ||b A||_1.

    The left side is the batched projection used by vbar_value; the right
    side is an exact point backup at b_hat on the original process.
    Only checked where b A is entrywise nonnegative and nonzero.
    """
    b = np.asarray(b, dtype=float)
    y = b @ np.asarray(A, dtype=float)
    scale = float(np.abs(y).sum())
    if scale <= 0.0 or (y < 0).any():
        why = "b A is zero" if scale <= 0.0 else "b A has negative entries"
        return DiagnosticReport("scaling-identity", None, "not-applicable", details={"reason": why})
    b_hat = y / scale
    lhs = _hbar(model, y, gamma_bar)[0]
    alpha = point_backup(original_process(model, b_hat[None, :]), gamma_bar, b_hat)
    rhs = scale * float(alpha.values @ b_hat)
    tol = IDENTITY_RTOL * (1.0 + abs(lhs))
    gap = abs(lhs - rhs)
    passed = gap <= tol
    witness = None if passed else {"belief": b.tolist(), "lhs": lhs, "rhs": rhs}
    return DiagnosticReport(
        "scaling-identity",
        passed,
        "pass" if passed else "fail",
        margin=tol - gap,
        witness=witness,
        details={"lhs": lhs, "rhs": rhs, "scale": scale},
    )


def _domination_draws(X: np.ndarray, seed: int, chunk: int, n: int) -> Dict[str, object]:
    """n random domination draws: alpha_high = alpha_low + delta with delta >= 0."""
    rng = np.random.default_rng([seed, chunk])
    k = X.shape[1]
    j = rng.integers(X.shape[0], size=n)
    low = rng.standard_normal((n, k))
    delta = rng.exponential(size=(n, k)) * (rng.random((n, k)) < 0.5)
    # value(high) - value(low) at the drawn compressed belief
    diff = np.einsum("nk,nk->n", X[j], delta)
    i = int(np.argmin(diff))
    return {"diff": diff, "j": j, "low": low, "delta": delta, "worst": i}


def pruning_witness_search(
    basis: CompressionBasis,
    B: BeliefMatrix,
    draws: int = 10000,
    seed: int = 0,
    threads: int = 1,
) -> DiagnosticReport:
    """Look for alpha_low <= alpha_high whose compressed values are reversed.

    A basis with no negative entry can never yield one; for any other basis
    the search is randomised and "none-found" is not a proof.
    """
    X = compress_beliefs(basis, B)
    nonneg = bool((basis.F >= 0).all())
    sizes = [min(DRAW_CHUNK, draws - lo) for lo in range(0, draws, DRAW_CHUNK)]
    batches = ordered_map(lambda c: _domination_draws(X, seed, c, sizes[c]), range(len(sizes)), threads)

    n_found = sum(int((p["diff"] < 0).sum()) for p in batches)
    worst = min(batches, key=lambda p: float(p["diff"][p["worst"]]))
    margin = float(worst["diff"][worst["worst"]])
    witness = None
    if n_found:
        i = worst["worst"]
        low = worst["low"][i]
        high = low + worst["delta"][i]
        x = X[worst["j"][i]]
        witness = {
            "belief_index": int(worst["j"][i]),
            "compressed_belief": x.tolist(),
            "alpha_low": low.tolist(),
            "alpha_high": high.tolist(),
            "value_low": float(x @ low),
            "value_high": float(x @ high),
        }
    if nonneg:
        status = "fail" if n_found else "verified"
    else:
        status = "witness-found" if n_found else "none-found"
    if n_found:
        logger.info("pruning witness search: %d of %d draws reversed", n_found, draws)
    return DiagnosticReport(
        "pruning-witness",
        n_found == 0,
        status,
        margin=margin,
        witness=witness,
        details={
            "draws": draws,
            "seed": seed,
            "nonnegative_basis": nonneg,
            "n_witnesses": n_found,
            "min_basis_entry": float(basis.F.min()) if basis.F.size else 0.0,
        },
    )


def value_loss_decomposition(
    model: Pomdp,
    basis: CompressionBasis,
    gamma: ValueFunction,
    gamma_c: ValueFunction,
    B: BeliefMatrix,
) -> pd.DataFrame:
    """One-step value loss of the compressed greedy policy, per sampled belief.

    lhs = V^pi(b) - V~^pi(b F) and rhs = discount * sum_z [V(b^{a,z}) - V~(b^{a,z} F)],
    where a is the compressed greedy action and b^{a,z} = b T^{a,z} unnormalised.
    The two agree when b = b F F_dag; rows where that fails are flagged.
    """
    maps = obs_weighted_transitions(model).dense()
    X = B.beliefs.T
    Xc = compress_beliefs(basis, B)
    acts = greedy_actions(gamma_c, Xc)
    A = basis.projector()
    rows: List[Dict[str, object]] = []
    for i, (b, bc, a) in enumerate(zip(X, Xc, acts)):
        nxt = np.einsum("s,zst->zt", b, maps[a])  # (Z, n)
        nxt_c = bc @ np.asarray(basis.F_dag @ maps[a] @ basis.F)  # (Z, k)
        v_orig = b @ model.reward[:, a] + model.discount * gamma.values(nxt).sum()
        v_comp = bc @ (basis.F_dag @ model.reward[:, a]) + model.discount * gamma_c.values(nxt_c).sum()
        rhs = model.discount * float((gamma.values(nxt) - gamma_c.values(compress_belief(basis, nxt))).sum())
        gap = float(np.abs(b - b @ A).max())
        lhs = float(v_orig - v_comp)
        rows.append(
            {
                "belief": i,
                "action": int(a),
                "lhs": lhs,
                "rhs": rhs,
                "residual": abs(lhs - rhs),
                "premise_gap": gap,
                "premise_ok": gap <= PREMISE_TOL,
            }
        )
    return pd.DataFrame(rows, columns=["belief", "action", "lhs", "rhs", "residual", "premise_gap", "premise_ok"])


def value_gap_check(
    report: CompressionErrorReport,
    basis: CompressionBasis,
    gamma: ValueFunction,
    gamma_c: ValueFunction,
    B: BeliefMatrix,
) -> DiagnosticReport:
    """Measured max_b |V(b) - V~(b F)| over sampled beliefs against the analytic bound."""
    if report.value_gap_bound is None or report.contraction_margin >= 1.0:
        return DiagnosticReport(
            "value-gap-bound",
            None,
            "not-applicable",
            details={"contraction_margin": report.contraction_margin, "note": report.bound_note},
        )
    gaps = np.abs(gamma.values(B.beliefs.T) - gamma_c.values(compress_beliefs(basis, B)))
    i = int(np.argmax(gaps))
    measured = float(gaps[i])
    allowed = report.value_gap_bound + PREMISE_TOL * (1.0 + report.v_sup)
    passed = measured <= allowed
    return DiagnosticReport(
        "value-gap-bound",
        passed,
        "pass" if passed else "fail",
        margin=allowed - measured,
        witness=None if passed else {"belief_index": i, "belief": B.column(i).tolist(), "gap": measured},
        details={"measured": measured, "bound": report.value_gap_bound, "contraction_margin": report.contraction_margin},
    )


def contraction_rate(trace: SolveTrace) -> float:
    """Geometric decay rate of the stage-to-stage max value change, nan with fewer than two usable stages."""
    ch = trace.max_changes()
    stage = np.arange(1, ch.size + 1, dtype=float)
    ok = np.isfinite(ch) & (ch > 0)
    if ok.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(stage[ok], np.log(ch[ok]), 1)
    return float(np.exp(slope))


def contraction_check(trace: SolveTrace, margin: Optional[float] = None) -> DiagnosticReport:
    beta = contraction_rate(trace)
    applicable = margin is not None and margin < 1.0
    if not np.isfinite(beta):
        return DiagnosticReport("contraction-rate", None, "not-applicable", details={"rate": beta})
    passed = bool(beta < 1.0) if applicable else None
    status = ("pass" if passed else "fail") if applicable else "reported"
    witness = None if passed is not False else {"max_changes": trace.max_changes().tolist()}
    return DiagnosticReport(
        "contraction-rate",
        passed,
        status,
        margin=1.0 - beta,
        witness=witness,
        details={"rate": beta, "contraction_margin": margin},
    )

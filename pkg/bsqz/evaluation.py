from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from bsqz.config import EvalProtocol
from bsqz.errors import DimensionMismatchError, ImpossibleObservationError
from bsqz.parallel import ordered_map
from bsqz.pbvi import greedy_actions
from bsqz.pomdp import LIKELIHOOD_FLOOR, require_valid
from bsqz.types import CompressionBasis, EvalResult, Pomdp, SolveTrace, ValueFunction

logger = logging.getLogger(__name__)

VERDICTS = ("converged", "plateaued", "diverged")


def _draw(P: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One categorical draw per row of P from uniforms u; zero-probability entries are never drawn."""
    cdf = np.cumsum(P, axis=1)
    cdf /= cdf[:, -1:]
    return np.minimum((cdf <= u[:, None]).sum(axis=1), P.shape[1] - 1)


def _rollouts(
    model: Pomdp,
    vf: ValueFunction,
    F: Optional[np.ndarray],
    n: int,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Discounted return of n trajectories, stepped together."""
    T, O, R = model.transition, model.observation, model.reward
    b = np.tile(model.start(), (n, 1))
    s = _draw(b, rng.random(n))
    total = np.zeros(n)
    disc = 1.0
    rows = np.arange(n)
    for _ in range(horizon):
        X = b if F is None else b @ F
        acts = greedy_actions(vf, X)
        total += disc * R[s, acts]
        disc *= model.discount
        s = _draw(T[acts, s], rng.random(n))
        z = _draw(O[acts, s], rng.random(n))
        pred = np.empty_like(b)
        for a in np.unique(acts):
            idx = acts == a
            pred[idx] = b[idx] @ T[a]
        unnorm = pred * O[acts, :, z]
        p = unnorm.sum(axis=1)
        bad = p <= LIKELIHOOD_FLOOR
        if bad.any():
            i = int(np.argmax(bad))
            raise ImpossibleObservationError(int(acts[i]), int(z[i]), float(p[i]))
        b = unnorm / p[:, None]
    return total


def simulate_policy(
    model: Pomdp,
    vf: ValueFunction,
    basis: Optional[CompressionBasis] = None,
    proto: Optional[EvalProtocol] = None,
    threads: int = 1,
) -> EvalResult:
    """Average discounted reward of the greedy policy of `vf`.

    Belief tracking always runs over the original states; with a basis the
    action is chosen at the compressed belief b F. Repeat r draws from its
    own generator seeded by (seed, r).
    """
    require_valid(model)
    proto = proto or EvalProtocol()
    if len(vf) == 0:
        raise ValueError("simulate_policy needs a non-empty value function")
    F = None if basis is None else basis.F
    dim = model.n_states if F is None else F.shape[1]
    if vf.dim != dim or (F is not None and F.shape[0] != model.n_states):
        raise DimensionMismatchError(f"value function has dimension {vf.dim}, policy space has {dim}")

    def repeat(r: int) -> float:
        rng = np.random.default_rng([proto.seed, r])
        return float(_rollouts(model, vf, F, proto.n_trajectories, proto.horizon, rng).mean())

    per_repeat = ordered_map(repeat, range(proto.n_repeats), threads)
    res = EvalResult(
        mean=float(np.mean(per_repeat)),
        std=float(np.std(per_repeat)),
        per_repeat=per_repeat,
        discounted=True,
        n_trajectories=proto.n_trajectories,
        horizon=proto.horizon,
    )
    logger.info("policy reward %.4f +/- %.4f over %d repeats", res.mean, res.std, proto.n_repeats)
    return res


def divergence_verdict(trace: SolveTrace) -> str:
    """converged, plateaued or diverged.

    diverged when the guard fired or a stage's summed point value leaves the
    ceiling max|R| / (1 - discount) * |points|.
    """
    sums = np.array([s["sum_value"] for s in trace.stages], dtype=float)
    if trace.guard_fired or (sums.size and (~np.isfinite(sums) | (np.abs(sums) > trace.ceiling())).any()):
        return "diverged"
    if trace.stop_reason == "converged":
        return "converged"
    return "plateaued"


def repeats_frame(results: Mapping[str, EvalResult]) -> pd.DataFrame:
    rows: List[Dict[str, object]] = []
    for label, res in results.items():
        for r, v in enumerate(res.per_repeat):
            rows.append({"policy": label, "repeat": r, "reward": v})
    return pd.DataFrame(rows, columns=["policy", "repeat", "reward"])


def summary_frame(repeats: pd.DataFrame) -> pd.DataFrame:
    """Mean and population std of the repeat rewards per policy, in first-seen order."""
    if repeats.empty:
        return pd.DataFrame(columns=["policy", "mean", "std", "n_repeats"])
    g = repeats.groupby("policy", sort=False)["reward"]
    out = g.agg(mean="mean", std=lambda x: float(np.std(x.to_numpy())), n_repeats="count").reset_index()
    return out[["policy", "mean", "std", "n_repeats"]]


def mean_std(mean: float, std: float, digits: int = 2) -> str:
    return f"{mean:.{digits}f}±{std:.{digits}f}"

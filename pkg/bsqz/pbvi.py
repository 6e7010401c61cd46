"""Randomised point-based value iteration over a linear belief process.

The process is either the original POMDP (beliefs, T^{a,z}, R) or a
compressed one (b F, F_dag T^{a,z} F, F_dag R); the solver only sees points,
per-(a,z) maps, a reward matrix and the discount.
"""

from __future__ import annotations

import logging
import time
from typing import List, Optional, Tuple

import numpy as np

from bsqz.linalg import matmul_maps
from bsqz.parallel import ordered_map
from bsqz.pomdp import obs_weighted_transitions
from bsqz.types import (
    AlphaVector,
    BeliefMatrix,
    CompressedPomdp,
    LinearBeliefProcess,
    Pomdp,
    SolveResult,
    SolveTrace,
    ValueFunction,
)

logger = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-4
GUARD_FACTOR = 10.0
BACKUP_CHUNK = 64
IMPROVE_TOL = 1e-12


def original_process(model: Pomdp, points: np.ndarray | BeliefMatrix) -> LinearBeliefProcess:
    X = points.beliefs.T if isinstance(points, BeliefMatrix) else np.atleast_2d(points)
    return LinearBeliefProcess(
        points=np.array(X, dtype=float),
        reward=np.array(model.reward),
        maps=obs_weighted_transitions(model).operator(),
        discount=model.discount,
        reward_bound=model.reward_bound(),
        reward_floor=float(model.reward.min()),
        space="original",
    )


def compressed_process(model: Pomdp, cm: CompressedPomdp, points: np.ndarray | BeliefMatrix) -> LinearBeliefProcess:
    """Points are original beliefs; they are compressed with b F."""
    X = points.beliefs.T if isinstance(points, BeliefMatrix) else np.atleast_2d(points)
    return LinearBeliefProcess(
        points=X @ cm.basis.F,
        reward=np.array(cm.reward),
        maps=np.array(cm.maps),
        discount=cm.discount,
        reward_bound=model.reward_bound(),
        reward_floor=float(model.reward.min()),
        space=f"compressed:{cm.basis.method}",
    )


def _project(proc: LinearBeliefProcess, gamma: ValueFunction) -> np.ndarray:
    """maps^{a,z} alpha for every alpha, shape (A, Z, d, |Gamma|)."""
    return matmul_maps(proc.maps, gamma.vectors.T)


def _backup_batch(proc: LinearBeliefProcess, proj: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backed-up vectors, their actions and values at each row of X."""
    scores = np.matmul(X, proj)  # (A, Z, b, |Gamma|)
    best = np.argmax(scores, axis=3)
    picked = np.take_along_axis(proj, best[:, :, None, :], axis=3)  # (A, Z, d, b)
    alphas = proc.discount * picked.sum(axis=1) + proc.reward.T[:, :, None]  # (A, d, b)
    values = np.einsum("adb,bd->ab", alphas, X)
    acts = np.argmax(values, axis=0)
    cols = np.arange(X.shape[0])
    return alphas[acts, :, cols], acts, values[acts, cols]


def point_backup(proc: LinearBeliefProcess, gamma: ValueFunction, x: np.ndarray) -> AlphaVector:
    if len(gamma) == 0:
        raise ValueError("point_backup needs a non-empty value function")
    vecs, acts, _ = _backup_batch(proc, _project(proc, gamma), np.atleast_2d(x))
    return AlphaVector(vecs[0], int(acts[0]))


def greedy_action(gamma: ValueFunction, x: np.ndarray) -> int:
    if len(gamma) == 0:
        raise ValueError("greedy_action needs a non-empty value function")
    vals = gamma.vectors @ x
    return int(gamma.actions[vals == vals.max()].min())


def greedy_actions(gamma: ValueFunction, X: np.ndarray) -> np.ndarray:
    """greedy_action for every row of X."""
    vals = X @ gamma.vectors.T
    top = vals == vals.max(axis=1, keepdims=True)
    acts = np.where(top, gamma.actions[None, :], np.iinfo(np.int64).max)
    return acts.min(axis=1)


def prune(gamma: ValueFunction) -> ValueFunction:
    """Drop exact duplicates and vectors pointwise dominated by another single vector."""
    V = gamma.vectors
    n = len(gamma)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        others = others[keep[others]]
        if others.size == 0:
            continue
        ge = (V[others] >= V[i]).all(axis=1)
        if not ge.any():
            continue
        strictly = (V[others[ge]] > V[i]).any(axis=1)
        equal_earlier = ~strictly & (others[ge] < i)
        if strictly.any() or equal_earlier.any():
            keep[i] = False
    return ValueFunction(V[keep], gamma.actions[keep], gamma.space)


def initial_value(proc: LinearBeliefProcess, value_floor_init: bool = True) -> ValueFunction:
    v0 = proc.reward_floor / (1.0 - proc.discount) if value_floor_init else 0.0
    return ValueFunction.single(np.full(proc.dim, v0), 0, proc.space)


def _stage(
    proc: LinearBeliefProcess,
    gamma: ValueFunction,
    v_old: np.ndarray,
    rng: np.random.Generator,
    threads: int,
) -> ValueFunction:
    X = proc.points
    N = X.shape[0]
    proj = _project(proc, gamma)
    order = rng.permutation(N)
    v_new = np.full(N, -np.inf)
    improved = np.zeros(N, dtype=bool)
    # chunk c always holds order[c*BACKUP_CHUNK:(c+1)*BACKUP_CHUNK], whatever the thread count
    n_chunks = -(-N // BACKUP_CHUNK)
    done: dict = {}
    vecs: List[np.ndarray] = []
    acts: List[int] = []
    reused: set = set()

    def backup(c: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _backup_batch(proc, proj, X[order[c * BACKUP_CHUNK : (c + 1) * BACKUP_CHUNK]])

    for pos, idx in enumerate(order):
        if improved[idx]:
            continue
        c, j = divmod(pos, BACKUP_CHUNK)
        if c not in done:
            todo = [
                t
                for t in range(c, n_chunks)
                if t not in done and not improved[order[t * BACKUP_CHUNK : (t + 1) * BACKUP_CHUNK]].all()
            ][: max(threads, 1)]
            done.update(zip(todo, ordered_map(backup, todo, threads)))
        cv, ca, cval = done[c]
        vec, act, val = cv[j], int(ca[j]), float(cval[j])
        if val < v_old[idx]:
            best = int(np.argmax(gamma.vectors @ X[idx]))
            if best in reused:
                continue
            reused.add(best)
            vec, act = gamma.vectors[best], int(gamma.actions[best])
        vecs.append(vec)
        acts.append(act)
        v_new = np.maximum(v_new, X @ vec)
        improved = v_new >= v_old - IMPROVE_TOL * np.maximum(1.0, np.abs(v_old))
    return ValueFunction(np.array(vecs), np.array(acts), proc.space)


def perseus_solve(
    proc: LinearBeliefProcess,
    init: Optional[ValueFunction] = None,
    max_stages: int = 500,
    seed: int = 0,
    value_floor_init: bool = True,
    tol: float = CONVERGENCE_TOL,
    prune_vectors: bool = True,
    threads: int = 1,
) -> SolveResult:
    """Perseus: per stage, back up points in a seeded random order, skipping
    points whose value already improved during the stage.

    Stops when the largest point-value change drops below `tol`, after
    `max_stages`, or when a point value exceeds 10 max|R| / (1 - discount).
    """
    if proc.n_points == 0:
        raise ValueError("perseus_solve needs at least one point")
    flags: List[str] = []
    if init is None:
        init = initial_value(proc, value_floor_init)
        if value_floor_init and proc.space != "original":
            flags.append("floor-init-on-compressed")
            logger.warning("perseus: value floor used as initial value of a compressed process")
    rng = np.random.default_rng(seed)
    X = proc.points
    gamma = init
    v_old = gamma.values(X)
    guard = GUARD_FACTOR * proc.reward_bound / (1.0 - proc.discount)
    stages = []
    stop = "max_stages"
    guard_fired = False

    for stage in range(1, max_stages + 1):
        t0 = time.perf_counter()
        gamma = _stage(proc, gamma, v_old, rng, threads)
        if prune_vectors:
            gamma = prune(gamma)
        v_new = gamma.values(X)
        change = float(np.max(np.abs(v_new - v_old)))
        stages.append(
            {
                "stage": stage,
                "sum_value": float(v_new.sum()),
                "n_vectors": len(gamma),
                "max_change": change,
                "wall_time": time.perf_counter() - t0,
            }
        )
        logger.debug("perseus stage %d: |Gamma|=%d, max change %.3g", stage, len(gamma), change)
        v_old = v_new
        if not np.all(np.isfinite(v_new)) or np.max(np.abs(v_new)) > guard:
            stop, guard_fired = "diverged", True
            logger.warning("perseus: value exceeded %.4g at stage %d", guard, stage)
            break
        if change < tol:
            stop = "converged"
            break

    logger.info("perseus: %s after %d stages, |Gamma|=%d", stop, len(stages), len(gamma))
    trace = SolveTrace(stages, stop, proc.n_points, proc.reward_bound / (1.0 - proc.discount), guard_fired, flags)
    return SolveResult(gamma, trace)

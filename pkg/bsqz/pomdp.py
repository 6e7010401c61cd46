from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from bsqz.errors import ImpossibleObservationError, ModelValidationError
from bsqz.types import ObsWeightedTransitions, Pomdp, ValidationIssue

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-9
LIKELIHOOD_FLOOR = 1e-300
SPARSE_DENSITY = 0.25


def validate(model: Pomdp) -> List[ValidationIssue]:
    """Every violated model invariant with its location; empty iff the model is valid."""
    issues: List[ValidationIssue] = []
    T, O, R = model.transition, model.observation, model.reward
    if T.ndim != 3 or T.shape[1] != T.shape[2]:
        issues.append(ValidationIssue("shape", (), f"transition shape {T.shape} is not (A, S, S)"))
        return issues
    A, S = T.shape[0], T.shape[1]
    if O.ndim != 3 or O.shape[:2] != (A, S):
        issues.append(ValidationIssue("shape", (), f"observation shape {O.shape} is not (A, S, Z)"))
        return issues
    if R.ndim != 2 or R.shape != (S, A):
        issues.append(ValidationIssue("shape", (), f"reward shape {R.shape} is not (S, A)"))
        return issues

    for name, arr in (("transition", T), ("observation", O), ("reward", R)):
        if not np.all(np.isfinite(arr)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
            issues.append(ValidationIssue("finite", bad, f"{name} has a non-finite entry"))

    for name, arr in (("transition", T), ("observation", O)):
        sums = arr.sum(axis=2)
        for a, s in np.argwhere(np.abs(sums - 1.0) > STOCHASTIC_TOL):
            issues.append(ValidationIssue(name, (int(a), int(s)), f"row sums to {sums[a, s]:.12g}"))
        for a, s in np.argwhere((arr < 0).any(axis=2)):
            issues.append(ValidationIssue(name, (int(a), int(s)), "row has a negative entry"))

    if not (0.0 < model.discount < 1.0):
        issues.append(ValidationIssue("discount", (), f"discount {model.discount} is outside (0, 1)"))

    if model.initial_belief is not None:
        b = model.initial_belief
        if b.shape != (S,):
            issues.append(ValidationIssue("initial_belief", (), f"length {b.shape} does not match {S} states"))
        elif (b < 0).any() or abs(b.sum() - 1.0) > STOCHASTIC_TOL:
            issues.append(ValidationIssue("initial_belief", (), f"not a distribution (sum {b.sum():.12g})"))
    return issues


def require_valid(model: Pomdp) -> Pomdp:
    issues = validate(model)
    if issues:
        raise ModelValidationError(issues)
    return model


def obs_weighted_transitions(model: Pomdp) -> ObsWeightedTransitions:
    require_valid(model)
    maps = []
    for a in range(model.n_actions):
        row = []
        for z in range(model.n_obs):
            m = model.transition[a] * model.observation[a][:, z][None, :]
            if np.count_nonzero(m) < SPARSE_DENSITY * m.size:
                row.append(sp.csr_matrix(m))
            else:
                row.append(m)
        maps.append(tuple(row))
    return ObsWeightedTransitions(tuple(maps), model.n_states)


def observation_likelihood(model: Pomdp, b: np.ndarray, a: int, z: int) -> float:
    """Pr(z | a, b)."""
    return float((b @ model.transition[a]) @ model.observation[a][:, z])


def belief_update(model: Pomdp, b: np.ndarray, a: int, z: int) -> np.ndarray:
    pred = b @ model.transition[a]
    unnorm = pred * model.observation[a][:, z]
    p = float(unnorm.sum())
    if p <= LIKELIHOOD_FLOOR:
        raise ImpossibleObservationError(a, z, p)
    return unnorm / p


def check_belief(b: np.ndarray, n_states: Optional[int] = None) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if n_states is not None and b.shape != (n_states,):
        raise ValueError(f"belief has shape {b.shape}, expected ({n_states},)")
    if (b < 0).any() or abs(b.sum() - 1.0) > STOCHASTIC_TOL:
        raise ValueError("belief must be nonnegative and sum to 1")
    return b


def synth_lowrank_pomdp(
    k: int,
    n: int,
    seed: int = 0,
    n_actions: int = 2,
    n_obs: int = 3,
    discount: float = 0.95,
) -> Pomdp:
    """Random POMDP whose reachable beliefs stay in a k-dimensional nonnegative subspace.

    States are split into k contiguous blocks. Transition and observation
    probabilities depend only on blocks, and the successor is uniform inside
    its block, so every reachable belief is block-constant.
    """
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    block = np.concatenate([np.full(len(ix), j) for j, ix in enumerate(np.array_split(np.arange(n), k))])
    sizes = np.bincount(block, minlength=k).astype(float)

    P = rng.dirichlet(np.ones(k), size=(n_actions, k))
    Q = rng.dirichlet(np.ones(n_obs), size=(n_actions, k))
    T = P[:, block][:, :, block] / sizes[block][None, None, :]
    O = Q[:, block, :]
    R = rng.uniform(-1.0, 1.0, size=(n, n_actions))
    return Pomdp(T, O, R, discount)

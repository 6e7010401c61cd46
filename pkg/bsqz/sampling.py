from __future__ import annotations

import logging
import math
from typing import Dict, List

import numpy as np
from scipy.spatial.distance import cdist

from bsqz.errors import ImpossibleObservationError
from bsqz.linalg import numerical_rank
from bsqz.parallel import ordered_map
from bsqz.pomdp import belief_update, require_valid
from bsqz.types import BeliefMatrix, NeighbourhoodGraph, Pomdp

logger = logging.getLogger(__name__)

KNN_BLOCK = 1024


def _episode(model: Pomdp, seed: int, episode: int, horizon_cap: int) -> List[np.ndarray]:
    rng = np.random.default_rng([seed, episode])
    b = model.start()
    out = [b]
    for _ in range(horizon_cap - 1):
        a = int(rng.integers(model.n_actions))
        pz = (b @ model.transition[a]) @ model.observation[a]
        z = int(rng.choice(model.n_obs, p=pz / pz.sum()))
        try:
            b = belief_update(model, b, a, z)
        except ImpossibleObservationError:
            break
        out.append(b)
    return out


def sample_beliefs(
    model: Pomdp,
    m: int,
    seed: int = 0,
    horizon_cap: int = 250,
    threads: int = 1,
) -> BeliefMatrix:
    """m time-step beliefs reached by uniform-random actions from the initial belief.

    Episode e draws from its own generator seeded by (seed, e); episodes are
    concatenated in index order, so the result does not depend on `threads`.
    """
    require_valid(model)
    if m < 1:
        raise ValueError("m must be >= 1")
    if horizon_cap < 1:
        raise ValueError("horizon_cap must be >= 1")

    cols: List[np.ndarray] = []
    episode = 0
    while len(cols) < m:
        batch = range(episode, episode + math.ceil((m - len(cols)) / horizon_cap))
        for beliefs in ordered_map(lambda e: _episode(model, seed, e, horizon_cap), batch, threads):
            cols.extend(beliefs)
        episode = batch.stop
    cols = cols[:m]
    logger.info("sampled %d beliefs over %d episodes", m, episode)
    return BeliefMatrix(
        np.column_stack(cols),
        {"seed": seed, "policy": "uniform-random", "horizon_cap": horizon_cap, "episodes": episode},
    )


def delta_subsample(B: BeliefMatrix, delta: float) -> BeliefMatrix:
    """Greedy pass in column order keeping columns at least delta from every kept column."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    X = B.beliefs.T
    if delta == 0:
        return B.subset(np.arange(B.m), delta=0.0)
    kept = [0]
    for j in range(1, X.shape[0]):
        d = np.linalg.norm(X[kept] - X[j], axis=1)
        if d.min() >= delta:
            kept.append(j)
    logger.debug("delta-subsample kept %d of %d columns", len(kept), B.m)
    return B.subset(np.array(kept), delta=float(delta))


def knn_graph(B: BeliefMatrix, K: int) -> NeighbourhoodGraph:
    """Symmetrised unweighted K-nearest-neighbour graph, ties broken by lower index."""
    m = B.m
    if K < 1 or K >= m:
        raise ValueError(f"need 1 <= K < m, got K={K}, m={m}")
    X = B.beliefs.T
    selected = np.empty((m, K), dtype=np.int64)
    for lo in range(0, m, KNN_BLOCK):
        hi = min(lo + KNN_BLOCK, m)
        D = cdist(X[lo:hi], X)
        D[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        selected[lo:hi] = np.argsort(D, axis=1, kind="stable")[:, :K]

    nbrs: List[set] = [set() for _ in range(m)]
    for i in range(m):
        for j in selected[i]:
            nbrs[i].add(int(j))
            nbrs[int(j)].add(i)
    adjacency = [np.array(sorted(s), dtype=np.int64) for s in nbrs]
    return NeighbourhoodGraph(selected, adjacency, K)


def belief_spectrum(B: BeliefMatrix) -> Dict[str, object]:
    """Singular values of B and its numerical rank."""
    s = np.linalg.svd(B.beliefs, compute_uv=False)
    return {"singular_values": s, "rank": numerical_rank(B.beliefs)}

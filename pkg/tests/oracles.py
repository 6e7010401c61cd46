"""Brute-force references used by the tests."""

from __future__ import annotations

import itertools
from typing import List

import numpy as np

from bsqz.types import Pomdp


def random_pomdp(seed: int, S: int = 3, A: int = 2, Z: int = 2, discount: float = 0.9) -> Pomdp:
    rng = np.random.default_rng(seed)
    T = rng.dirichlet(np.ones(S), size=(A, S))
    O = rng.dirichlet(np.ones(Z), size=(A, S))
    R = rng.uniform(-1.0, 1.0, size=(S, A))
    return Pomdp(T, O, R, discount)


def single_state(reward: float = 1.0, discount: float = 0.9) -> Pomdp:
    return Pomdp(np.ones((1, 1, 1)), np.ones((1, 1, 1)), np.full((1, 1), reward), discount)


def block_basis(n: int, k: int) -> np.ndarray:
    """Orthonormal nonnegative basis of the block-constant vectors used by synth_lowrank_pomdp."""
    F = np.zeros((n, k))
    for j, ix in enumerate(np.array_split(np.arange(n), k)):
        F[ix, j] = 1.0 / np.sqrt(len(ix))
    return F


def brute_backup_value(model: Pomdp, vectors: np.ndarray, b: np.ndarray) -> float:
    """max over a and every per-observation choice of vector, with explicit loops."""
    best = -np.inf
    S, Z = model.n_states, model.n_obs
    for a in range(model.n_actions):
        M = [model.transition[a] * model.observation[a][:, z][None, :] for z in range(Z)]
        for choice in itertools.product(range(len(vectors)), repeat=Z):
            alpha = model.reward[:, a].copy()
            for z, i in enumerate(choice):
                alpha = alpha + model.discount * M[z] @ vectors[i]
            best = max(best, float(sum(b[s] * alpha[s] for s in range(S))))
    return best


def upper_envelope(V: np.ndarray) -> np.ndarray:
    """Vectors of a two-state value function that are maximal somewhere on the belief simplex."""
    c = V[:, 0]
    m = V[:, 1] - V[:, 0]
    order = np.lexsort((c, m))
    lines: List[int] = []
    for i in order:
        if lines and np.isclose(m[lines[-1]], m[i], rtol=0, atol=1e-12):
            lines.pop()
        while len(lines) >= 2:
            i1, i2 = lines[-2], lines[-1]
            if (c[i1] - c[i]) * (m[i2] - m[i1]) <= (c[i1] - c[i2]) * (m[i] - m[i1]):
                lines.pop()
            else:
                break
        lines.append(i)
    keep = []
    for pos, i in enumerate(lines):
        lo = -np.inf if pos == 0 else (c[lines[pos - 1]] - c[i]) / (m[i] - m[lines[pos - 1]])
        hi = np.inf if pos == len(lines) - 1 else (c[i] - c[lines[pos + 1]]) / (m[lines[pos + 1]] - m[i])
        if hi >= -1e-12 and lo <= 1 + 1e-12:
            keep.append(i)
    return V[keep]


def exact_value_iteration(model: Pomdp, horizon: int = 300) -> np.ndarray:
    """Exact finite-horizon value function of a two-state POMDP, as alpha vectors."""
    assert model.n_states == 2
    gamma = np.zeros((1, 2))
    M = model.transition[:, None, :, :] * np.swapaxes(model.observation, 1, 2)[:, :, None, :]
    for _ in range(horizon):
        new = []
        for a in range(model.n_actions):
            acc = model.reward[:, a][None, :]
            for z in range(model.n_obs):
                proj = upper_envelope(model.discount * (gamma @ M[a, z].T))
                acc = upper_envelope((acc[:, None, :] + proj[None, :, :]).reshape(-1, 2))
            new.append(acc)
        gamma = upper_envelope(np.vstack(new))
    return gamma

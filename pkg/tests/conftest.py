from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from bsqz.io import parse_pomdp
from bsqz.pomdp import synth_lowrank_pomdp
from bsqz.types import BeliefMatrix, CompressionBasis, Pomdp
from tests.oracles import block_basis

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def tiger() -> Pomdp:
    return parse_pomdp(str(DATA / "tiger.pomdp"))


@pytest.fixture
def chain() -> Pomdp:
    return parse_pomdp(str(DATA / "chain.pomdp"))


@pytest.fixture
def belief_grid() -> np.ndarray:
    """201 two-state beliefs, one per row."""
    p = np.linspace(0.0, 1.0, 201)
    return np.column_stack([1.0 - p, p])


@pytest.fixture
def lowrank() -> Pomdp:
    return synth_lowrank_pomdp(k=3, n=12, seed=4)


@pytest.fixture
def lowrank_basis() -> CompressionBasis:
    F = block_basis(12, 3)
    return CompressionBasis(F, F.T.copy(), "block", True)


@pytest.fixture
def random_beliefs() -> BeliefMatrix:
    rng = np.random.default_rng(7)
    return BeliefMatrix(rng.dirichlet(np.ones(5), size=40).T)

from __future__ import annotations

import numpy as np
import pytest

from bsqz.compressed import (
    build_compressed,
    compress_belief,
    compress_beliefs,
    error_report,
    reconstruction_residual,
)
from bsqz.errors import DimensionMismatchError
from bsqz.linalg import inf_norm
from bsqz.sampling import sample_beliefs
from bsqz.types import CompressionBasis
from tests.oracles import block_basis, random_pomdp


def test_identity_basis_reproduces_model() -> None:
    model = random_pomdp(0, S=3)
    basis = CompressionBasis(np.eye(3), np.eye(3), "identity", True)
    cm = build_compressed(model, basis)
    np.testing.assert_allclose(cm.reward, model.reward)
    rep = error_report(model, basis, compressed=cm)
    assert rep.eps_R == 0.0 and rep.eps_T == 0.0
    assert rep.I_minus_A_inf == 0.0
    assert rep.A_inf == 1.0
    assert rep.contraction_margin == pytest.approx(model.discount)
    assert rep.value_gap_bound == 0.0


def test_block_basis_is_exact_on_lowrank_model(lowrank, lowrank_basis) -> None:
    rep = error_report(lowrank, lowrank_basis)
    B = sample_beliefs(lowrank, m=300, seed=1)
    assert rep.eps_T <= 1e-12
    assert reconstruction_residual(lowrank_basis, B) <= 1e-12
    # rewards are not block-constant, so R is only fitted in least squares
    assert rep.eps_R > 0


def test_maps_have_the_right_shapes(lowrank, lowrank_basis) -> None:
    cm = build_compressed(lowrank, lowrank_basis)
    assert cm.k == 3
    assert cm.maps.shape == (lowrank.n_actions, lowrank.n_obs, 3, 3)
    assert cm.discount == lowrank.discount


def test_value_gap_bound_formula() -> None:
    model = random_pomdp(3, S=4, Z=2, discount=0.5)
    F = block_basis(4, 2)
    basis = CompressionBasis(F, F.T.copy(), "block", True)
    rep = error_report(model, basis, v_sup=2.0)
    A = F @ F.T
    margin = 0.5 * inf_norm(A)
    assert rep.contraction_margin == pytest.approx(margin)
    expected = inf_norm(np.eye(4) - A) / (1 - margin) * (inf_norm(model.reward) + 0.5 * 2 * 2.0)
    assert rep.value_gap_bound == pytest.approx(expected)
    assert rep.v_sup == 2.0


def test_bound_is_unavailable_without_contraction() -> None:
    model = random_pomdp(4, S=2, discount=0.9)
    F = np.array([[2.0], [2.0]])
    basis = CompressionBasis(F, np.array([[0.5, 0.5]]), "scaled", True)
    rep = error_report(model, basis)
    assert rep.contraction_margin >= 1.0
    assert rep.value_gap_bound is None
    assert "bound unavailable" in rep.bound_note


def test_compress_belief_checks_dimension(lowrank_basis) -> None:
    b = np.full(12, 1 / 12)
    np.testing.assert_allclose(compress_belief(lowrank_basis, b), b @ lowrank_basis.F)
    with pytest.raises(DimensionMismatchError):
        compress_belief(lowrank_basis, np.ones(5) / 5)


def test_compress_beliefs_returns_rows(lowrank, lowrank_basis) -> None:
    B = sample_beliefs(lowrank, m=10, seed=0)
    assert compress_beliefs(lowrank_basis, B).shape == (10, 3)


def test_missing_decompression_map_is_rejected(lowrank) -> None:
    basis = CompressionBasis(block_basis(12, 3), None, "block", True)
    with pytest.raises(DimensionMismatchError):
        build_compressed(lowrank, basis)


def test_basis_for_other_model_is_rejected(lowrank_basis) -> None:
    with pytest.raises(DimensionMismatchError):
        error_report(random_pomdp(0, S=3), lowrank_basis)

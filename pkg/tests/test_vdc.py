from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from bsqz.config import VdcConfig
from bsqz.errors import RankDeficientBasisError
from bsqz.pomdp import obs_weighted_transitions
from bsqz.types import Pomdp
from bsqz.vdc import dependence_residual, error_sweep, fit_compressed_maps, krylov_basis, vdc_compress
from tests.oracles import random_pomdp


def _scaled_identity_model() -> Pomdp:
    R = np.array([[1.0, 0.0, 1.0], [0.0, 2.0, 2.0], [3.0, 1.0, 4.0], [0.0, 0.0, 0.0]])
    return Pomdp(np.stack([np.eye(4)] * 3), np.full((3, 4, 2), 0.5), R, 0.9)


def test_dependence_residual_cases() -> None:
    F = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
    assert dependence_residual(F, F @ np.array([0.3, -2.0])) <= 1e-12
    c = np.cross(F[:, 0], F[:, 1])
    assert dependence_residual(F, c) == pytest.approx(np.linalg.norm(c))
    assert dependence_residual(np.array([[1.0], [0.0]]), np.array([1.0, 1.0]) / np.sqrt(2)) == pytest.approx(
        1 / np.sqrt(2)
    )
    assert dependence_residual(np.zeros((3, 0)), np.array([3.0, 4.0, 0.0])) == 5.0


def test_closed_krylov_space_keeps_reward_columns() -> None:
    model = _scaled_identity_model()
    basis = krylov_basis(model, VdcConfig(mode="lossless-rank"))
    assert basis.k == 2
    np.testing.assert_array_equal(basis.F, model.reward[:, :2])
    assert basis.method == "vdc" and not basis.nonnegative
    assert basis.provenance["dependence_test"] == "rank"


def test_zero_reward_gives_empty_basis() -> None:
    m = random_pomdp(0)
    model = Pomdp(m.transition, m.observation, np.zeros_like(m.reward), m.discount)
    assert krylov_basis(model, VdcConfig()).k == 0


def test_lossless_rank_is_closed_under_the_maps(lowrank) -> None:
    basis = vdc_compress(lowrank, VdcConfig(mode="lossless-rank"))
    F = basis.F
    # reward columns plus block-constant images
    assert basis.k <= lowrank.n_actions + 3
    D = obs_weighted_transitions(lowrank).dense()
    for a in range(lowrank.n_actions):
        for z in range(lowrank.n_obs):
            for j in range(basis.k):
                c = D[a, z] @ F[:, j]
                assert dependence_residual(F, c) <= 1e-9 * (1.0 + np.linalg.norm(c))
    R_c, T_c = fit_compressed_maps(lowrank, F)
    assert np.abs(lowrank.reward - F @ R_c).max() <= 1e-9
    for a in range(lowrank.n_actions):
        for z in range(lowrank.n_obs):
            assert np.abs(D[a, z] @ F - F @ T_c[a, z]).max() <= 1e-9


def test_full_rank_random_model_keeps_every_direction() -> None:
    basis = vdc_compress(random_pomdp(4, S=6, A=2, Z=2), VdcConfig(mode="lossless-rank"))
    assert basis.k == 6


def test_lossy_greedy_first_pick_is_largest_reward_column() -> None:
    model = random_pomdp(11, S=6, A=3, Z=2)
    basis = krylov_basis(model, VdcConfig(mode="lossy-greedy", k=3))
    assert basis.k == 3
    j = int(np.argmax(np.linalg.norm(model.reward, axis=0)))
    np.testing.assert_array_equal(basis.F[:, 0], model.reward[:, j])


def test_lossy_greedy_picks_the_largest_residual_each_round() -> None:
    model = random_pomdp(12, S=6, A=2, Z=2)
    basis = krylov_basis(model, VdcConfig(mode="lossy-greedy", k=4))
    F = basis.F
    D = obs_weighted_transitions(model).dense()
    picked = basis.provenance["selection_residuals"]
    for i in range(basis.k):
        prefix = F[:, :i]
        candidates = [model.reward[:, a] for a in range(model.n_actions)]
        candidates += [D[a, z] @ F[:, j] for j in range(i) for a in range(2) for z in range(2)]
        best = max(dependence_residual(prefix, c) for c in candidates)
        assert picked[i] == pytest.approx(dependence_residual(prefix, F[:, i]), abs=1e-9)
        assert picked[i] >= best - 1e-9


def test_lossless_residual_threshold() -> None:
    model = random_pomdp(5, S=6, A=2, Z=2)
    loose = krylov_basis(model, VdcConfig(mode="lossless-residual", tau=0.5))
    tight = krylov_basis(model, VdcConfig(mode="lossless-residual", tau=1e-6))
    assert 1 <= loose.k <= tight.k <= 6
    assert loose.provenance["dependence_test"] == "residual"
    assert all(r >= 0.5 for r in loose.provenance["selection_residuals"])
    assert all(r >= 1e-6 for r in tight.provenance["selection_residuals"])


def test_orthonormal_square_basis_fits_exactly() -> None:
    model = random_pomdp(6, S=4)
    Q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))
    R_c, _ = fit_compressed_maps(model, Q)
    np.testing.assert_allclose(R_c, Q.T @ model.reward, atol=1e-12)
    assert np.abs(model.reward - Q @ R_c).max() <= 1e-12


def test_fit_is_a_least_squares_minimiser() -> None:
    model = random_pomdp(7, S=6)
    F = np.random.default_rng(1).normal(size=(6, 3))
    R_c, _ = fit_compressed_maps(model, F)
    base = np.linalg.norm(model.reward - F @ R_c)
    rng = np.random.default_rng(2)
    for _ in range(20):
        delta = rng.normal(size=R_c.shape)
        delta *= 1e-3 / np.linalg.norm(delta)
        assert np.linalg.norm(model.reward - F @ (R_c + delta)) >= base


def test_rank_deficient_basis_is_rejected() -> None:
    F = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(RankDeficientBasisError):
        fit_compressed_maps(random_pomdp(0), F)


def test_error_sweep_over_k_decreases_to_zero() -> None:
    model = random_pomdp(8, S=5, A=2, Z=2)
    df = error_sweep(model, VdcConfig(mode="lossy-greedy", k=2), [1, 2, 3, 4, 5])
    assert list(df.columns) == ["parameter", "value", "k", "eps_R", "eps_T"]
    assert df["k"].tolist() == [1, 2, 3, 4, 5]
    assert df["eps_R"].iloc[-1] <= 1e-9
    assert df["eps_T"].iloc[-1] <= 1e-9
    assert df["eps_R"].iloc[0] > 0.0


def test_vdc_config_validation() -> None:
    with pytest.raises(ValidationError):
        VdcConfig(mode="lossless-residual")
    with pytest.raises(ValidationError):
        VdcConfig(mode="lossy-greedy", k=0)

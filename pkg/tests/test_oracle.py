import math

import numpy as np
import pytest

from nnmc.errors import IllPosedError, ParameterError
from nnmc.model import add_noise, gen_low_rank
from nnmc.oracle import adversarial_noise, min_eigenpair, oracle_least_squares, oracle_rms_estimate
from nnmc.rng import RngSeed
from nnmc.sampling import ObservationSet, project_omega, sample_uniform
from nnmc.subspace import TangentSpace, isometry_bounds, project_T, tangent_from_matrix


def instance(n1, n2, r, p, seed):
    M = gen_low_rank(n1, n2, r, rng=RngSeed(seed)).M
    om = sample_uniform(n1, n2, int(round(p * n1 * n2)), RngSeed(seed, 1))
    return M, tangent_from_matrix(M), om


def row_space_operator_matrix(T, om):
    # X = W V^T with W free: coordinates vec(W), operator W -> (P_Omega(W V^T)) V
    n1, n2 = T.shape
    r = T.rank
    B = np.kron(np.eye(n1), T.V)  # columns: vec(e_i v_k^T), orthonormal
    w = om.mask.ravel().astype(float)
    return B.T @ (w[:, None] * B)


def test_estimate_examples():
    assert oracle_rms_estimate(600, 600, 2, 72000, 1.0) == pytest.approx(math.sqrt(2396 / 72000))
    assert oracle_rms_estimate(600, 600, 2, 72000, 1.0) == pytest.approx(0.18242, abs=1e-5)
    assert oracle_rms_estimate(10, 10, 0, 50, 1.0) == 0.0
    assert oracle_rms_estimate(10, 10, 2, 50, 0.0) == 0.0
    with pytest.raises(ParameterError):
        oracle_rms_estimate(10, 10, 2, 0, 1.0)


def test_noiseless_consistent_system():
    M, T, om = instance(50, 40, 2, 0.3, 0)
    rep = oracle_least_squares(project_omega(M, om), om, T, M=M)
    assert rep.error_frobenius <= 1e-6 * np.linalg.norm(M)
    assert rep.df == T.dim == 2 * (50 + 40 - 2)


def test_full_grid_reduces_to_projection():
    rng = np.random.default_rng(0)
    M, T, _ = instance(20, 15, 2, 1.0, 1)
    Y = rng.standard_normal((20, 15))
    rep = oracle_least_squares(Y, ObservationSet.full(20, 15), T)
    np.testing.assert_allclose(rep.m_oracle, project_T(T, Y), atol=1e-8)


def test_singular_operator_is_ill_posed():
    M, T, _ = instance(8, 8, 1, 1.0, 2)
    mask = np.ones((8, 8), bool)
    mask[3] = False
    om = ObservationSet.from_mask(mask)
    with pytest.raises(IllPosedError):
        oracle_least_squares(project_omega(M, om), om, T)
    with pytest.raises(IllPosedError):
        oracle_least_squares(project_omega(M, om), om, T, check_isometry=True)


def test_isometry_check_rejects_hidden_singularity():
    # every line sampled, yet the 2x2 support pattern leaves a direction of T unseen
    U = np.eye(4)[:, :1]
    V = np.eye(4)[:, :1]
    T = TangentSpace(U, V)
    om = ObservationSet.from_pairs(4, 4, [(0, 1), (1, 0), (1, 1), (2, 2), (3, 3), (2, 3), (3, 2)])
    with pytest.raises(IllPosedError):
        oracle_least_squares(np.zeros((4, 4)), om, T, check_isometry=True)


def test_predicted_rms_field():
    M, T, om = instance(60, 60, 2, 0.4, 3)
    obs = add_noise(M, om, 0.7, RngSeed(3))
    rep = oracle_least_squares(obs.Y_omega, om, T, M=M, sigma=0.7)
    assert rep.predicted_rms == pytest.approx(oracle_rms_estimate(60, 60, 2, len(om), 0.7))
    assert rep.to_dict()["df"] == T.dim


def test_stochastic_error_large_instance():
    # n = 600, r = 2, p = 0.2, sigma = 1: a few trials already sit near sqrt(df/m)
    n = 600
    errs = []
    for s in range(3):
        M, T, om = instance(n, n, 2, 0.2, s)
        obs = add_noise(M, om, 1.0, RngSeed(s))
        errs.append(oracle_least_squares(obs.Y_omega, om, T, M=M).error_frobenius / n)
    assert abs(np.mean(errs) / math.sqrt(2396 / 72000) - 1) <= 0.15


def test_adversarial_noise_norm_and_error():
    n = 100
    M, T, om = instance(n, n, 1, 0.5, 0)
    delta = 2.0
    Z = adversarial_noise(T, om, delta)
    assert np.linalg.norm(Z) == pytest.approx(delta, rel=1e-6)
    np.testing.assert_array_equal(project_omega(Z, om), Z)
    lam_min, _ = isometry_bounds(T, om)
    err = oracle_least_squares(project_omega(M, om) + Z, om, T, M=M).error_frobenius
    assert err == pytest.approx(delta / math.sqrt(lam_min), rel=1e-4)


def test_adversarial_error_in_isometry_range():
    n, p = 100, 0.5
    M, T, om = instance(n, n, 1, p, 0)
    lo, hi = isometry_bounds(T, om)
    Z = adversarial_noise(T, om, 1.0)
    ratio = oracle_least_squares(project_omega(M, om) + Z, om, T, M=M).error_frobenius
    # ratio = lambda_min^{-1/2}; the isometry bounds would place it in [sqrt(2/(3p)), sqrt(2/p)]
    assert ratio == pytest.approx(1 / math.sqrt(lo), rel=1e-4)
    assert math.sqrt(2 / (3 * p)) <= ratio <= math.sqrt(2 / p)


def test_adversarial_full_grid_full_rank():
    M = np.random.default_rng(0).standard_normal((6, 5))
    T = tangent_from_matrix(M)
    om = ObservationSet.full(6, 5)
    lam, _ = min_eigenpair(T, om)
    assert lam == pytest.approx(1.0, abs=1e-8)
    Z = adversarial_noise(T, om, 0.3)
    err = oracle_least_squares(M + Z, om, T, M=M).error_frobenius
    assert err == pytest.approx(0.3, rel=1e-6)


def test_adversarial_zero_delta():
    _, T, om = instance(20, 20, 1, 0.5, 1)
    np.testing.assert_array_equal(adversarial_noise(T, om, 0.0), 0.0)
    with pytest.raises(ParameterError):
        adversarial_noise(T, om, -1.0)


def test_adversarial_noise_is_worst_case():
    # no random noise of the same norm produces a larger T-oracle error
    n = 40
    M, T, om = instance(n, n, 1, 0.5, 4)
    delta = 1.0
    Y0 = project_omega(M, om)
    worst = oracle_least_squares(Y0 + adversarial_noise(T, om, delta), om, T, M=M).error_frobenius
    rng = np.random.default_rng(0)
    for _ in range(200):
        Z = project_omega(rng.standard_normal((n, n)), om)
        Z *= delta / np.linalg.norm(Z)
        err = oracle_least_squares(Y0 + Z, om, T, M=M).error_frobenius
        assert err <= worst * (1 + 1e-6)


def test_row_space_oracle_noiseless():
    M, T, om = instance(30, 25, 2, 0.4, 5)
    rep = oracle_least_squares(project_omega(M, om), om, T, M=M, row_space_only=True)
    assert rep.error_frobenius <= 1e-6 * np.linalg.norm(M)
    assert rep.df == 2 * 30


@pytest.mark.parametrize("seed", range(4))
def test_row_space_spectrum_within_tangent_envelope(seed):
    # T0 is a subspace of T, so its compressed operator's spectrum interlaces
    n1, n2 = 40, 30
    M, T, om = instance(n1, n2, 2, 0.4, seed)
    lo, hi = isometry_bounds(T, om)
    ev = np.linalg.eigvalsh(row_space_operator_matrix(T, om))
    assert ev[0] >= lo - 1e-6
    assert ev[-1] <= hi + 1e-6


def test_row_space_error_against_explicit_normal_equations():
    n1, n2 = 30, 20
    M, T, om = instance(n1, n2, 2, 0.5, 6)
    obs = add_noise(M, om, 1.0, RngSeed(6))
    rep = oracle_least_squares(obs.Y_omega, om, T, M=M, row_space_only=True)
    B = np.kron(np.eye(n1), T.V)
    A = row_space_operator_matrix(T, om)
    coef = np.linalg.solve(A, B.T @ obs.Y_omega.ravel())
    np.testing.assert_allclose(rep.m_oracle.ravel(), B @ coef, atol=1e-7)


def test_oracle_mean_error_concentrates():
    n, p = 200, 0.3
    ratios = []
    for s in range(20):
        M, T, om = instance(n, n, 2, p, s)
        obs = add_noise(M, om, 1.0, RngSeed(s))
        rep = oracle_least_squares(obs.Y_omega, om, T, M=M)
        ratios.append(rep.error_frobenius / math.sqrt(T.dim / om.fraction))
    assert abs(np.mean(ratios) - 1) <= 0.15

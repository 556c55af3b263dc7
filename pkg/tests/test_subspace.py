import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnmc.core import nuclear_norm, svd
from nnmc.errors import IllPosedError, ParameterError, PreconditionError
from nnmc.model import gen_low_rank
from nnmc.rng import RngSeed
from nnmc.sampling import ObservationSet, project_omega, sample_uniform
from nnmc.subspace import (TangentSpace, build_certificate_candidate, cg_solve, explicit_isometry_bounds,
                           isometry_bounds, certificate_gap, normal_operator, project_T, project_T_perp, tangent_basis,
                           tangent_from_matrix, verify_certificate)


def random_tangent(n1, n2, r, seed):
    return tangent_from_matrix(gen_low_rank(n1, n2, r, 1.0, RngSeed(seed)).M)


def test_tangent_from_diag():
    T = tangent_from_matrix(np.diag([3.0, 1.0, 0.0]))
    assert T.rank == 2
    np.testing.assert_allclose(np.abs(T.U), np.eye(3)[:, :2], atol=1e-15)
    np.testing.assert_allclose(np.abs(T.V), np.eye(3)[:, :2], atol=1e-15)


def test_tangent_threshold_robust():
    M = gen_low_rank(12, 9, 2, 1.0, RngSeed(1)).M
    T1 = tangent_from_matrix(M)
    T2 = tangent_from_matrix(M + 1e-15 * np.random.default_rng(0).standard_normal(M.shape))
    assert T2.rank == 2
    np.testing.assert_allclose(T1.U @ T1.U.T, T2.U @ T2.U.T, atol=1e-12)


def test_full_rank_tangent_has_no_complement():
    T = tangent_from_matrix(np.random.default_rng(0).standard_normal((5, 4)))
    X = np.random.default_rng(1).standard_normal((5, 4))
    np.testing.assert_allclose(project_T_perp(T, X), 0.0, atol=1e-12)


def test_tangent_zero_matrix():
    with pytest.raises(ParameterError):
        tangent_from_matrix(np.zeros((3, 3)))


def test_tangent_requires_orthonormal():
    with pytest.raises(ParameterError):
        TangentSpace(np.ones((3, 1)), np.eye(3)[:, :1])


def test_dimension_of_T_by_basis_rank():
    for n1, n2, r in [(4, 3, 1), (5, 5, 2), (6, 4, 3)]:
        T = random_tangent(n1, n2, r, 0)
        B = tangent_basis(T)
        assert np.linalg.matrix_rank(B) == T.dim == r * (n1 + n2 - r)
        np.testing.assert_allclose(B.T @ B, np.eye(T.dim), atol=1e-10)


def test_project_T_on_T_element():
    T = random_tangent(6, 5, 2, 3)
    X = np.outer(T.U[:, 0], np.random.default_rng(0).standard_normal(5))
    np.testing.assert_allclose(project_T(T, X), X, atol=1e-12)


def test_project_T_small_example():
    T = TangentSpace(np.eye(2)[:, :1], np.eye(2)[:, :1])
    np.testing.assert_array_equal(project_T(T, np.diag([0.0, 1.0])), 0.0)


def test_projection_orthogonality():
    T = random_tangent(8, 6, 2, 4)
    X = np.random.default_rng(2).standard_normal((8, 6))
    assert abs(np.vdot(project_T(T, X), project_T_perp(T, X))) <= 1e-10


def test_projection_shape_mismatch():
    T = random_tangent(4, 4, 1, 0)
    with pytest.raises(ParameterError):
        project_T(T, np.zeros((4, 5)))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 4), st.integers(0, 2**32))
def test_geometry_identities(n1, n2, r, seed):
    r = min(r, n1, n2)
    T = random_tangent(n1, n2, r, seed)
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((2, n1, n2))
    PX = project_T(T, X)
    np.testing.assert_allclose(PX + project_T_perp(T, X), X, atol=1e-10)
    np.testing.assert_allclose(project_T(T, PX), PX, atol=1e-10)
    assert abs(np.vdot(PX, Y) - np.vdot(X, project_T(T, Y))) <= 1e-10
    # T-perp condition: P_U W = 0 and W P_V = 0
    W = project_T_perp(T, X)
    np.testing.assert_allclose(T.U.T @ W, 0.0, atol=1e-10)
    np.testing.assert_allclose(W @ T.V, 0.0, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 7), st.integers(2, 7), st.integers(0, 2**32))
def test_subgradient_inequality(n1, n2, seed):
    rng = np.random.default_rng(seed)
    r = 1 + seed % min(n1, n2)
    M = gen_low_rank(n1, n2, r, 1.0, RngSeed(seed)).M
    T = tangent_from_matrix(M)
    W = project_T_perp(T, rng.standard_normal((n1, n2)))
    s = svd(W).singular_values[0]
    # full rank leaves T-perp empty; W is then only rounding noise
    W = W / s if s > 1e-8 else np.zeros_like(W)
    Z = T.sign_matrix() + W
    H = rng.standard_normal((n1, n2))
    assert nuclear_norm(M + H) >= nuclear_norm(M) + np.vdot(Z, H) - 1e-8


def test_isometry_full_grid():
    T = random_tangent(10, 8, 2, 1)
    lo, hi = isometry_bounds(T, ObservationSet.full(10, 8))
    assert lo == pytest.approx(1.0, abs=1e-6)
    assert hi == pytest.approx(1.0, abs=1e-6)


def test_isometry_empty():
    T = random_tangent(10, 8, 2, 1)
    assert isometry_bounds(T, sample_uniform(10, 8, 0))[1] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_isometry_matches_explicit(seed):
    n1, n2, r = 60, 50, 2
    T = random_tangent(n1, n2, r, seed)
    om = sample_uniform(n1, n2, 1200, RngSeed(seed, 1))
    lo, hi = isometry_bounds(T, om)
    elo, ehi = explicit_isometry_bounds(T, om)
    assert lo == pytest.approx(elo, abs=1e-5)
    assert hi == pytest.approx(ehi, abs=1e-5)


def test_isometry_log_squared_regime():
    # m = 3 n log^2 n samples, n <= 400, r = 2: isometry bounds inside [p/2, 3p/2] in >= 90% of seeds
    n, r = 100, 2
    m = int(3 * n * np.log(n) ** 2)
    p = m / n**2
    inside = 0
    for s in range(20):
        T = random_tangent(n, n, r, s)
        lo, hi = isometry_bounds(T, sample_uniform(n, n, m, RngSeed(s, 1)))
        inside += p / 2 <= lo and hi <= 1.5 * p
    assert inside >= 18


def test_cg_solves_psd_system():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((6, 6))
    A = B @ B.T + np.eye(6)
    b = rng.standard_normal((6, 1))
    x = cg_solve(lambda X: A @ X, b, tol=1e-12)
    np.testing.assert_allclose(A @ x, b, atol=1e-9)


def test_cg_singular_operator():
    with pytest.raises(IllPosedError):
        cg_solve(lambda X: np.zeros_like(X), np.ones((3, 1)))


def test_certificate_full_grid_is_sign_matrix():
    T = random_tangent(9, 7, 2, 2)
    lam = build_certificate_candidate(T, ObservationSet.full(9, 7))
    np.testing.assert_allclose(lam, T.sign_matrix(), atol=1e-8)


def test_certificate_residual_contract():
    n, r = 100, 1
    T = random_tangent(n, n, r, 0)
    om = sample_uniform(n, n, n * n // 2, RngSeed(0, 1))
    lam = build_certificate_candidate(T, om)
    rep = verify_certificate(lam, T, om)
    assert rep.pt_residual <= 1e-6 * np.sqrt(r)
    assert rep.supported_on_omega
    np.testing.assert_array_equal(project_omega(lam, om), lam)


def test_certificate_well_sampled_passes():
    T = random_tangent(100, 100, 1, 0)
    om = sample_uniform(100, 100, 5000, RngSeed(0, 1))
    rep = verify_certificate(build_certificate_candidate(T, om), T, om)
    assert rep.valid and rep.valid_half
    d = rep.to_dict()
    assert d["satisfies_half"] == (d["ptperp_norm"] <= 0.5)
    assert d["satisfies_one"] == (d["ptperp_norm"] < 1.0)


def test_certificate_zero_lambda_fails():
    T = random_tangent(8, 8, 2, 0)
    rep = verify_certificate(np.zeros((8, 8)), T, ObservationSet.full(8, 8))
    assert rep.pt_residual == pytest.approx(np.sqrt(2))
    assert not rep.valid


def test_certificate_off_support_detected():
    T = random_tangent(8, 8, 1, 0)
    om = sample_uniform(8, 8, 40, RngSeed(0, 1))
    lam = build_certificate_candidate(T, om)
    i, j = om.complement().pairs()[0]
    lam[i, j] = 1.0
    rep = verify_certificate(lam, T, om)
    assert not rep.supported_on_omega
    assert not rep.valid


def test_certificate_ill_posed():
    # a missing row leaves the normal operator singular on T
    T = random_tangent(6, 6, 1, 0)
    mask = np.ones((6, 6), bool)
    mask[2] = False
    with pytest.raises(IllPosedError):
        build_certificate_candidate(T, ObservationSet.from_mask(mask))


def _certified_instance(seed, n=40, r=1, m=1100):
    M = gen_low_rank(n, n, r, 1.0, RngSeed(seed)).M
    T = tangent_from_matrix(M)
    om = sample_uniform(n, n, m, RngSeed(seed, 1))
    lam = build_certificate_candidate(T, om)
    assert verify_certificate(lam, T, om).valid
    return M, T, om, lam


def test_certificate_inequality_zero_perturbation():
    M, T, om, lam = _certified_instance(0)
    assert certificate_gap(M, T, lam, np.zeros_like(M), om) == 0.0


def test_certificate_inequality_slack_random_null_perturbations():
    M, T, om, lam = _certified_instance(1)
    rng = np.random.default_rng(7)
    for k in range(100):
        scale = 10.0 ** rng.uniform(-3, 1)
        H = project_omega(rng.standard_normal(M.shape), om.complement()) * scale
        assert certificate_gap(M, T, lam, H, om) >= -1e-8


def test_certificate_inequality_requires_null_perturbation():
    M, T, om, lam = _certified_instance(2)
    with pytest.raises(PreconditionError):
        certificate_gap(M, T, lam, np.ones_like(M), om)


def test_certificate_inequality_flags_injectivity_failure():
    # with row 0 unsampled, e_0 v^T is in T and invisible to P_Omega
    n = 10
    M = gen_low_rank(n, n, 1, 1.0, RngSeed(4)).M
    T = tangent_from_matrix(M)
    mask = np.ones((n, n), bool)
    mask[0] = False
    om = ObservationSet.from_mask(mask)
    assert isometry_bounds(T, om)[0] < 1e-8
    H = np.outer(np.eye(n)[0], T.V[:, 0])
    with pytest.raises(PreconditionError, match="injective"):
        certificate_gap(M, T, np.zeros_like(M), H, om)


def test_normal_operator_psd():
    T = random_tangent(12, 10, 2, 5)
    om = sample_uniform(12, 10, 50, RngSeed(5, 1))
    A = normal_operator(T, om)
    rng = np.random.default_rng(0)
    for _ in range(10):
        X = project_T(T, rng.standard_normal((12, 10)))
        assert np.vdot(X, A(X)) >= -1e-12

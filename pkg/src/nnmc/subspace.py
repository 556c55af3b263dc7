"""Tangent space geometry at a low-rank matrix and dual certificates.

For M = U diag(s) V^T the tangent space T is spanned by matrices U X^T and
Y V^T. This module provides the orthogonal projections onto T and its
complement, the spectrum of the sampled normal operator P_T P_Omega P_T on T,
and construction/verification of dual certificates supported on Omega.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import RANK_TOL, as_matrix, check_same_shape, nuclear_norm, spectral_norm, svd
from .errors import IllPosedError, NumericalError, ParameterError, PreconditionError
from .rng import RngSeed
from .sampling import ObservationSet, project_omega

ILL_POSED_LAMBDA = 1e-8


@dataclass(frozen=True)
class TangentSpace:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=np.float64)
        V = np.asarray(self.V, dtype=np.float64)
        if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
            raise ParameterError("U and V must be 2-D with the same number of columns")
        r = U.shape[1]
        for name, B in (("U", U), ("V", V)):
            if np.max(np.abs(B.T @ B - np.eye(r)), initial=0.0) > 1e-10:
                raise ParameterError(f"{name} does not have orthonormal columns")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])

    @property
    def dim(self) -> int:
        n1, n2 = self.shape
        return self.rank * (n1 + n2 - self.rank)

    def sign_matrix(self) -> np.ndarray:
        return self.U @ self.V.T


def tangent_from_matrix(M, rank_tol: float = RANK_TOL) -> TangentSpace:
    M = as_matrix(M, "M")
    if not np.any(M):
        raise ParameterError("tangent space undefined for the zero matrix")
    res = svd(M)
    k = res.rank(rank_tol)
    return TangentSpace(np.array(res.U[:, :k]), np.array(res.V[:, :k]))


def _check(T: TangentSpace, X: np.ndarray) -> None:
    if X.shape != T.shape:
        raise ParameterError(f"matrix shape {X.shape} does not match tangent space {T.shape}")


def _pt(U: np.ndarray, V: np.ndarray, X: np.ndarray) -> np.ndarray:
    UtX = U.T @ X
    XV = X @ V
    return U @ UtX + (XV - U @ (UtX @ V)) @ V.T


def project_T(T: TangentSpace, X) -> np.ndarray:
    """P_U X + X P_V - P_U X P_V."""
    X = as_matrix(X)
    _check(T, X)
    return _pt(T.U, T.V, X)


def project_T_perp(T: TangentSpace, X) -> np.ndarray:
    """(I - P_U) X (I - P_V)."""
    X = as_matrix(X)
    _check(T, X)
    U, V = T.U, T.V
    W = X - U @ (U.T @ X)
    return W - (W @ V) @ V.T


def normal_operator(T: TangentSpace, omega: ObservationSet) -> Callable[[np.ndarray], np.ndarray]:
    """X -> P_T P_Omega P_T (X), acting on matrices already in T."""
    if omega.shape != T.shape:
        raise ParameterError("observation grid and tangent space shapes differ")
    mask = omega.mask
    U, V = T.U, T.V

    def apply(X: np.ndarray) -> np.ndarray:
        return _pt(U, V, np.where(mask, X, 0.0))

    return apply


def start_matrix(T: TangentSpace) -> np.ndarray:
    """Deterministic generic unit-norm element of T."""
    G = RngSeed(0, 0).generator(99).standard_normal(T.shape)
    X = project_T(T, G)
    return X / np.linalg.norm(X)


def power_iteration(apply, X0: np.ndarray, tol: float = 1e-6, max_iter: int = 100_000, shift: float | None = None, restrict=None):
    """Dominant eigenpair of a PSD operator (or of ``shift*I - A`` when ``shift`` is set).

    Stops when the eigen-residual ||A x - theta x|| is at most ``tol`` times the
    operator scale. Returns (theta, x) where theta is the Rayleigh quotient of
    the *unshifted* operator. ``restrict`` maps each iterate back onto the
    invariant subspace; without it rounding drift outside T is amplified by
    the shifted operator.
    """
    X = X0 / np.linalg.norm(X0)
    scale = None
    for _ in range(max_iter):
        AX = apply(X)
        theta = float(np.vdot(X, AX))
        resid = float(np.linalg.norm(AX - theta * X))
        if scale is None:
            scale = max(abs(shift) if shift is not None else abs(theta), np.linalg.norm(AX), 1e-300)
        if resid <= tol * scale:
            return theta, X
        W = shift * X - AX if shift is not None else AX
        if restrict is not None:
            W = restrict(W)
        nrm = np.linalg.norm(W)
        if nrm == 0.0:
            return theta, X
        X = W / nrm
    raise NumericalError(f"power iteration did not reach residual {tol} in {max_iter} iterations")


def isometry_bounds(T: TangentSpace, omega: ObservationSet, tol: float = 1e-6, max_iter: int = 100_000) -> tuple[float, float]:
    """Extreme eigenvalues (lambda_min, lambda_max) of P_T P_Omega P_T on T.

    lambda_max by power iteration, lambda_min by power iteration on
    lambda_max*I - P_T P_Omega P_T. Compare against p/2 and 3p/2.
    """
    A = normal_operator(T, omega)
    if len(omega) == 0:
        return 0.0, 0.0
    X0 = start_matrix(T)
    restrict = lambda X: _pt(T.U, T.V, X)  # noqa: E731
    lam_max, _ = power_iteration(A, X0, tol, max_iter, restrict=restrict)
    lam_min, _ = power_iteration(A, X0, tol, max_iter, shift=lam_max, restrict=restrict)
    return max(lam_min, 0.0), lam_max


def tangent_basis(T: TangentSpace) -> np.ndarray:
    """Orthonormal basis of T as columns of an (n1*n2) x dim matrix (row-major vec).

    Columns are u_k e_j^T followed by w_i v_k^T with w_i spanning the
    orthogonal complement of span(U). Only meant for small instances.
    """
    n1, n2 = T.shape
    r = T.rank
    Uperp = np.linalg.svd(T.U, full_matrices=True)[0][:, r:]
    return np.hstack([np.kron(T.U, np.eye(n2)), np.kron(Uperp, T.V)])


def operator_matrix(T: TangentSpace, omega: ObservationSet, basis: np.ndarray | None = None) -> np.ndarray:
    B = tangent_basis(T) if basis is None else basis
    w = omega.mask.ravel().astype(np.float64)
    return B.T @ (w[:, None] * B)


def explicit_isometry_bounds(T: TangentSpace, omega: ObservationSet) -> tuple[float, float]:
    """Dense eigendecomposition of P_T P_Omega P_T in an explicit basis of T."""
    ev = np.linalg.eigvalsh(operator_matrix(T, omega))
    return float(ev[0]), float(ev[-1])


def cg_solve(apply, rhs: np.ndarray, tol: float = 1e-8, max_iter: int | None = None, x0: np.ndarray | None = None) -> np.ndarray:
    """Conjugate gradients for a PSD operator on matrices (Frobenius inner product).

    Raises :class:`IllPosedError` when a search direction exhibits curvature
    below ``ILL_POSED_LAMBDA`` and :class:`NumericalError` when the relative
    residual target is not met within ``max_iter`` steps.
    """
    max_iter = max_iter or 10 * rhs.size
    bnorm = np.linalg.norm(rhs)
    X = np.zeros_like(rhs) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    R = rhs - apply(X) if x0 is not None else rhs.copy()
    P = R.copy()
    rr = float(np.vdot(R, R))
    for _ in range(max_iter):
        if math.sqrt(rr) <= tol * bnorm:
            return X
        AP = apply(P)
        pp = float(np.vdot(P, P))
        pAp = float(np.vdot(P, AP))
        if pAp <= ILL_POSED_LAMBDA * pp:
            raise IllPosedError(f"normal operator is singular on T (curvature {pAp / pp:.3e})")
        alpha = rr / pAp
        X += alpha * P
        R -= alpha * AP
        rr_new = float(np.vdot(R, R))
        P = R + (rr_new / rr) * P
        rr = rr_new
    if math.sqrt(rr) <= tol * bnorm:
        return X
    raise NumericalError(f"CG did not reach relative residual {tol} in {max_iter} iterations")


def solve_normal(T: TangentSpace, omega: ObservationSet, rhs: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Solve P_T P_Omega P_T X = rhs for X in T."""
    return cg_solve(normal_operator(T, omega), project_T(T, rhs), tol, 10 * T.dim)


@dataclass(frozen=True)
class CertificateReport:
    lam: np.ndarray
    supported_on_omega: bool
    pt_residual: float
    ptperp_norm: float
    satisfies_half: bool
    satisfies_one: bool
    pt_tol: float

    @property
    def valid(self) -> bool:
        """Dual certificate: supported on Omega, P_T(Lambda) = E, ||P_Tperp(Lambda)|| < 1."""
        return self.supported_on_omega and self.pt_residual <= self.pt_tol and self.satisfies_one

    @property
    def valid_half(self) -> bool:
        return self.valid and self.satisfies_half

    def to_dict(self) -> dict:
        return {
            "supported_on_omega": self.supported_on_omega,
            "pt_residual": self.pt_residual,
            "ptperp_norm": self.ptperp_norm,
            "satisfies_half": self.satisfies_half,
            "satisfies_one": self.satisfies_one,
            "valid": self.valid,
        }


def build_certificate_candidate(T: TangentSpace, omega: ObservationSet, E=None, tol: float = 1e-8, check_isometry: bool = True) -> np.ndarray:
    """Minimum-Frobenius-norm Lambda supported on Omega with P_T(Lambda) = E.

    Lambda = P_Omega X where X in T solves P_T P_Omega P_T X = E.
    """
    E = T.sign_matrix() if E is None else as_matrix(E, "E")
    if check_isometry:
        lam_min, _ = isometry_bounds(T, omega)
        if lam_min < ILL_POSED_LAMBDA:
            raise IllPosedError(f"lambda_min = {lam_min:.3e}; no certificate expected")
    X = solve_normal(T, omega, E, tol)
    return project_omega(X, omega)


def verify_certificate(lam, T: TangentSpace, omega: ObservationSet, E=None, tol: float = 1e-8) -> CertificateReport:
    lam = as_matrix(lam, "Lambda")
    E = T.sign_matrix() if E is None else as_matrix(E, "E")
    check_same_shape(lam, E)
    lam_norm = np.linalg.norm(lam)
    off = np.linalg.norm(np.where(omega.mask, 0.0, lam))
    supported = bool(off <= tol * lam_norm)
    pt_res = float(np.linalg.norm(project_T(T, lam) - E))
    perp = float(spectral_norm(project_T_perp(T, lam), tol=1e-9))
    return CertificateReport(
        lam=lam,
        supported_on_omega=supported,
        pt_residual=pt_res,
        ptperp_norm=perp,
        satisfies_half=perp <= 0.5,
        satisfies_one=perp < 1.0,
        pt_tol=1e-6 * max(1.0, float(np.linalg.norm(E))),
    )


def certificate_gap(M, T: TangentSpace, lam, H, omega: ObservationSet) -> float:
    """Slack of ||M+H||_* >= ||M||_* + (1 - ||P_Tperp(Lambda)||) ||P_Tperp(H)||_*.

    Valid for H with P_Omega(H) = 0 when Lambda is a dual certificate; the
    returned slack is nonnegative up to rounding. An Omega-null H lying in T
    contradicts injectivity of P_Omega on T and raises PreconditionError.
    """
    M = as_matrix(M, "M")
    H = as_matrix(H, "H")
    lam = as_matrix(lam, "Lambda")
    h_norm = np.linalg.norm(H)
    if np.linalg.norm(np.where(omega.mask, H, 0.0)) > 1e-10 * max(1.0, h_norm):
        raise PreconditionError("H must vanish on Omega")
    if h_norm == 0.0:
        return 0.0
    H_perp = project_T_perp(T, H)
    if np.linalg.norm(H_perp) <= 1e-10 * h_norm:
        raise PreconditionError("H lies in T and vanishes on Omega: P_Omega is not injective on T")
    a = spectral_norm(project_T_perp(T, lam), tol=1e-9)
    return nuclear_norm(M + H) - nuclear_norm(M) - (1.0 - a) * nuclear_norm(H_perp)

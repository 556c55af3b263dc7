"""Oracle baselines: least squares on a known tangent space.

With T (or only the row space) revealed, the best one can do is least squares
restricted to that subspace. These estimators give the error floor against
which nuclear-norm recovery is compared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import as_matrix
from .errors import IllPosedError, NumericalError, ParameterError
from .sampling import ObservationSet, project_omega
from .subspace import (ILL_POSED_LAMBDA, TangentSpace, _pt, cg_solve, isometry_bounds, normal_operator,
                       start_matrix)


@dataclass
class OracleReport:
    m_oracle: np.ndarray
    error_frobenius: float | None
    predicted_rms: float
    df: int

    def to_dict(self) -> dict:
        return {"error_frobenius": self.error_frobenius, "predicted_rms": self.predicted_rms, "df": self.df}


def oracle_rms_estimate(n1: int, n2: int, r: int, m: int, sigma: float) -> float:
    """Per-entry RMS error of the T-oracle under white noise: sigma * sqrt(df / m)."""
    if m <= 0:
        raise ParameterError("m must be positive")
    return sigma * math.sqrt(r * (n1 + n2 - r) / m)


def _row_space_ops(T: TangentSpace, omega: ObservationSet):
    V = T.V
    mask = omega.mask

    def project(X):
        return (X @ V) @ V.T

    def apply(X):
        return project(np.where(mask, X, 0.0))

    return project, apply


def oracle_least_squares(Y_omega, omega: ObservationSet, T: TangentSpace, M=None, sigma: float | None = None,
                         row_space_only: bool = False, tol: float = 1e-8, check_isometry: bool = False) -> OracleReport:
    """argmin over X in T of ||P_Omega(X - Y)||_F, via CG on the normal equations.

    ``row_space_only`` restricts to T0 = {Y V^T}, the stronger oracle that
    reveals only the row space. ``M`` (ground truth) enables the error field;
    ``sigma`` the predicted per-entry RMS. An unsampled row (or, for the full
    T, column) makes the normal operator singular and raises IllPosedError;
    ``check_isometry`` also computes lambda_min and rejects it below 1e-8.
    """
    Y = project_omega(Y_omega, omega)
    if omega.unsampled_rows() or (not row_space_only and omega.unsampled_cols()):
        raise IllPosedError("an unsampled row or column leaves the oracle normal equations singular")
    if check_isometry and not row_space_only:
        lam_min, _ = isometry_bounds(T, omega)
        if lam_min < ILL_POSED_LAMBDA:
            raise IllPosedError(f"lambda_min = {lam_min:.3e}; oracle normal equations singular")
    n1, n2 = T.shape
    r = T.rank
    if row_space_only:
        project, apply = _row_space_ops(T, omega)
        df = r * n1
    else:
        U, V = T.U, T.V

        def project(X):
            return _pt(U, V, X)

        apply = normal_operator(T, omega)
        df = T.dim
    try:
        X = cg_solve(apply, project(Y), tol, 10 * df)
    except NumericalError as exc:
        raise IllPosedError(f"oracle normal equations not solvable: {exc}") from exc
    err = None if M is None else float(np.linalg.norm(X - as_matrix(M, "M")))
    pred = oracle_rms_estimate(n1, n2, r, len(omega), sigma) if sigma is not None and len(omega) else math.nan
    return OracleReport(X, err, pred, df)


def min_eigenpair(T: TangentSpace, omega: ObservationSet, tol: float = 1e-6, max_iter: int = 5000) -> tuple[float, np.ndarray]:
    """Smallest eigenpair of P_T P_Omega P_T on T by inverse iteration (CG inner solves).

    Stops when the Rayleigh quotient changes by less than ``tol`` relative.
    """
    A = normal_operator(T, omega)
    X = start_matrix(T)
    lam = float(np.vdot(X, A(X)))
    if lam < ILL_POSED_LAMBDA:
        raise IllPosedError("normal operator is singular on T")
    for _ in range(max_iter):
        W = cg_solve(A, X, 1e-10, 10 * T.dim)
        W = _pt(T.U, T.V, W)
        X = W / np.linalg.norm(W)
        lam_new = float(np.vdot(X, A(X)))
        if abs(lam_new - lam) <= tol * lam_new:
            return lam_new, X
        lam = lam_new
    raise NumericalError(f"inverse iteration did not converge in {max_iter} steps")


def adversarial_noise(T: TangentSpace, omega: ObservationSet, delta: float, tol: float = 1e-6) -> np.ndarray:
    """Noise Z = delta * lambda_min^{-1/2} P_Omega(Z') with Z' the minimal eigenvector.

    ||Z||_F = delta and the T-oracle error for this Z equals
    delta / sqrt(lambda_min), the largest over all noise of norm delta.
    """
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    if delta == 0:
        return np.zeros(T.shape)
    _, Zp = min_eigenpair(T, omega, tol)
    Z = project_omega(Zp, omega)
    # ||P_Omega Z'||^2 is the Rayleigh quotient, so this normalization is exact
    return delta * Z / np.linalg.norm(Z)

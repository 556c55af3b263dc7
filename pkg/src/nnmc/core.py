"""Dense matrix primitives: validated SVD, norms and inner products.

Matrices are plain 2-D float64 numpy arrays. Every public function validates
its inputs with :func:`as_matrix`, which rejects NaN/Inf entries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError, ParameterError

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


def as_matrix(X, name: str = "X") -> np.ndarray:
    A = np.asarray(X, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ParameterError(f"{name} contains non-finite entries")
    return A


def check_same_shape(X: np.ndarray, Y: np.ndarray) -> None:
    if X.shape != Y.shape:
        raise DimensionError(f"shape mismatch: {X.shape} vs {Y.shape}")


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``X = U @ diag(singular_values) @ V.T``.

    ``U`` is n1 x k, ``V`` is n2 x k with k = min(n1, n2); singular values are
    nonincreasing. The left singular vectors follow a sign convention (largest
    magnitude entry nonnegative) so results are reproducible.
    """

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def rank(self, rel_tol: float = RANK_TOL) -> int:
        s = self.singular_values
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int(np.count_nonzero(s > rel_tol * s[0]))

    def reconstruct(self, k: int | None = None) -> np.ndarray:
        k = self.singular_values.size if k is None else k
        return (self.U[:, :k] * self.singular_values[:k]) @ self.V[:, :k].T


def _fix_signs(U: np.ndarray, V: np.ndarray) -> None:
    # argmax picks the lowest index among ties
    idx = np.argmax(np.abs(U), axis=0)
    flip = U[idx, np.arange(U.shape[1])] < 0
    U[:, flip] *= -1.0
    V[:, flip] *= -1.0


def svd(X) -> SvdResult:
    X = as_matrix(X)
    try:
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    V = Vt.T.copy()
    _fix_signs(U, V)
    for a in (U, s, V):
        a.setflags(write=False)
    return SvdResult(U, s, V)


def spectral_norm(X, tol: float = 1e-10, max_iter: int | None = None) -> float:
    """Largest singular value by power iteration on ``X.T @ X``.

    The start vector is the normalized all-ones vector. Iteration stops once the
    eigen-residual of the Rayleigh quotient drops below ``tol`` relative to the
    current estimate, which bounds the distance to an eigenvalue of X^T X.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    X = as_matrix(X)
    n = X.shape[1]
    if not np.any(X):
        return 0.0
    # homogeneous in X; rescaling keeps X^T X v clear of under/overflow
    scale = float(np.max(np.abs(X)))
    X = X / scale
    max_iter = max_iter or 100 * n + 1000

    v = np.full(n, 1.0 / np.sqrt(n))
    theta = 0.0
    fallback_used = False
    for _ in range(max_iter):
        w = X.T @ (X @ v)
        theta = float(v @ w)
        if theta <= 0.0:
            # start vector is (numerically) in the null space: perturb toward e1
            if fallback_used:
                return 0.0
            fallback_used = True
            v = v + 0.5 ** np.arange(n)
            v /= np.linalg.norm(v)
            continue
        resid = np.linalg.norm(w - theta * v)
        v = w / np.linalg.norm(w)
        if resid <= tol * theta:
            break
    else:
        logger.warning("spectral_norm: power iteration hit %d iterations; using SVD", max_iter)
        return scale * float(svd(X).singular_values[0])
    return scale * float(np.sqrt(theta))


def frobenius_norm(X) -> float:
    return float(np.linalg.norm(as_matrix(X)))


def nuclear_norm(X) -> float:
    return float(np.sum(svd(X).singular_values))


def inner_product(X, Y) -> float:
    """Trace inner product <X, Y> = trace(X^T Y)."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    check_same_shape(X, Y)
    return float(np.vdot(X, Y))

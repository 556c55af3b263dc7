"""Nuclear-norm recovery from sampled entries.

The workhorse is a proximal-gradient iteration with continuation for

    minimize  0.5 * ||P_Omega(X - Y)||_F^2 + mu * ||X||_*

whose prox step is singular-value soft-thresholding. The data-constrained
form (minimize ||X||_* subject to ||P_Omega(X - Y)||_F <= delta) is solved by
bisection on mu.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import RANK_TOL, as_matrix, nuclear_norm, spectral_norm, svd
from .errors import ParameterError
from .sampling import ObservationSet, project_omega

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    mu: float = 1.0
    step: float = 1.0
    rel_tol: float = 1e-5
    max_iters: int = 2000
    continuation_factor: float = 0.25
    continuation_start_scale: float = 1.0
    # final stage also waits until the stationarity residual is below opt_tol * mu
    opt_tol: float = 5e-4

    def __post_init__(self):
        if self.mu <= 0:
            raise ParameterError("mu must be positive")
        if not 0 < self.step < 2:
            raise ParameterError("step must lie in (0, 2)")
        if self.rel_tol <= 0 or self.max_iters < 1 or self.opt_tol <= 0:
            raise ParameterError("tolerances and iteration cap must be positive")
        if not 0 < self.continuation_factor < 1:
            raise ParameterError("continuation_factor must lie in (0, 1)")
        if self.continuation_start_scale <= 0:
            raise ParameterError("continuation_start_scale must be positive")


@dataclass
class SolverReport:
    m_hat: np.ndarray
    iterations: int
    final_mu: float
    data_residual: float
    objective_trace: list[float] = field(default_factory=list)
    # index into objective_trace where each continuation stage begins
    stage_starts: list[int] = field(default_factory=list)
    stationarity: float = 0.0
    flags: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return not self.flags.get("non_converged", False) and not self.flags.get("bracket_failure", False)

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_mu": self.final_mu,
            "data_residual": self.data_residual,
            "stationarity": self.stationarity,
            "rank": int(svd(self.m_hat).rank()) if np.any(self.m_hat) else 0,
            "flags": self.flags,
        }


def svt(X, tau: float) -> np.ndarray:
    """Singular-value soft-thresholding, the prox of tau * ||.||_*."""
    if tau < 0:
        raise ParameterError("tau must be nonnegative")
    out, _ = _svt(as_matrix(X), tau)
    return out


def _svt(X: np.ndarray, tau: float) -> tuple[np.ndarray, float]:
    # returns the thresholded matrix and its nuclear norm
    res = svd(X)
    s = res.singular_values - tau
    k = int(np.count_nonzero(s > 0))
    if k == 0:
        return np.zeros_like(X), 0.0
    return (res.U[:, :k] * s[:k]) @ res.V[:, :k].T, float(np.sum(s[:k]))


def choose_mu(n1: int, n2: int, m: int, sigma: float) -> float:
    """Regularization level at the noise floor, with p = m / (n1 n2).

    Square matrices use sqrt(2 n p) * sigma, rectangular ones
    (sqrt(n1) + sqrt(n2)) * sqrt(p) * sigma.
    """
    if n1 <= 0 or n2 <= 0 or m <= 0 or sigma < 0:
        raise ParameterError("choose_mu needs positive dimensions and m, nonnegative sigma")
    p = m / (n1 * n2)
    if n1 == n2:
        return math.sqrt(2 * n1 * p) * sigma
    return (math.sqrt(n1) + math.sqrt(n2)) * math.sqrt(p) * sigma


def stability_bound(p: float, n1: int, n2: int, delta: float) -> float:
    """Error envelope 4 sqrt(C_p min(n1, n2) / p) delta + 2 delta, C_p = 2 + p."""
    if not 0 < p <= 1:
        raise ParameterError("p must lie in (0, 1]")
    cp = 2.0 + p
    return 4.0 * math.sqrt(cp * min(n1, n2) / p) * delta + 2.0 * delta


def objective(X, Y_omega, omega: ObservationSet, mu: float) -> float:
    R = project_omega(X, omega) - project_omega(Y_omega, omega)
    return 0.5 * float(np.sum(R * R)) + mu * nuclear_norm(X)


def optimality_residual(M_hat, Y_omega, omega: ObservationSet, mu: float) -> float:
    """min over subgradients G of ||M_hat||_* of ||P_Omega(M_hat - Y) + mu G||_F.

    Uses the SVD of M_hat: G = E + W with E the sign matrix and W in T-perp
    with ||W|| <= 1, so the tangent part must cancel exactly and the
    orthogonal part only up to spectral norm mu.
    """
    M_hat = as_matrix(M_hat)
    R = project_omega(M_hat - Y_omega, omega)
    res = svd(M_hat)
    k = res.rank(RANK_TOL) if np.any(M_hat) else 0
    U, V = res.U[:, :k], res.V[:, :k]
    UtR = U.T @ R
    RV = R @ V
    PT_R = U @ UtR + (RV - U @ (UtR @ V)) @ V.T
    tangent = np.linalg.norm(PT_R + mu * (U @ V.T))
    perp = R - PT_R
    sv = np.linalg.svd(perp, compute_uv=False)
    excess = np.linalg.norm(np.maximum(sv - mu, 0.0))
    return float(math.hypot(tangent, excess))


def solve_regularized(Y_omega, omega: ObservationSet, opts: SolverOptions, x0=None, mu_start: float | None = None) -> SolverReport:
    """Proximal gradient with geometric continuation on mu.

    Stages run at mu_k = max(start * factor^k, mu) where ``start`` defaults to
    ``continuation_start_scale * ||P_Omega(Y)||``. A stage ends when the
    relative Frobenius change of the iterate drops below ``rel_tol``.
    """
    Y = as_matrix(Y_omega, "Y_omega")
    if Y.shape != omega.shape:
        raise ParameterError("Y_omega shape does not match the observation grid")
    mask = omega.mask
    if np.any(Y[~mask]):
        raise ParameterError("Y_omega must vanish off Omega")

    flags: dict = {}
    if omega.has_unsampled_lines():
        flags["unsampled_rows"] = omega.unsampled_rows()
        flags["unsampled_cols"] = omega.unsampled_cols()
        logger.warning("observation set leaves %d rows / %d columns unsampled",
                       len(flags["unsampled_rows"]), len(flags["unsampled_cols"]))

    mu, step = opts.mu, opts.step
    X = np.zeros_like(Y) if x0 is None else as_matrix(x0, "x0").copy()
    y_spec = spectral_norm(Y, tol=1e-8)
    if mu_start is None:
        mu_start = opts.continuation_start_scale * y_spec
    stages = [mu]
    level = mu_start
    while level > mu:
        stages.insert(-1, level)
        level *= opts.continuation_factor
    if x0 is None:
        # from X = 0, any stage with mu_k >= ||P_Omega(Y)|| has solution exactly 0
        while len(stages) > 1 and stages[0] >= y_spec:
            stages.pop(0)

    # floor for the relative-change test so near-zero iterates can terminate
    x_floor = 1e-8 * float(np.linalg.norm(Y))
    trace: list[float] = []
    starts: list[int] = []
    it = 0
    stationarity = math.inf
    non_converged = False
    for s_idx, mu_k in enumerate(stages):
        final = s_idx == len(stages) - 1
        starts.append(len(trace))
        while True:
            if it >= opts.max_iters:
                non_converged = True
                break
            it += 1
            resid = np.where(mask, X - Y, 0.0)
            X_new, nuc = _svt(X - step * resid, step * mu_k)
            diff = X_new - X
            r_new = np.where(mask, X_new - Y, 0.0)
            trace.append(0.5 * float(np.sum(r_new * r_new)) + mu_k * nuc)
            dnorm = float(np.linalg.norm(diff))
            xnorm = float(np.linalg.norm(X_new))
            # ||P_Omega(X_new - Y) + mu G|| for the subgradient G implied by this prox step
            stationarity = float(np.linalg.norm(diff / step - np.where(mask, diff, 0.0))) if dnorm else 0.0
            X = X_new
            small = dnorm <= opts.rel_tol * max(xnorm, x_floor)
            if small and (not final or stationarity <= opts.opt_tol * mu):
                break
        if non_converged:
            break

    if non_converged:
        flags["non_converged"] = True
        logger.warning("solve_regularized hit max_iters=%d", opts.max_iters)
    data_res = float(np.linalg.norm(np.where(mask, X - Y, 0.0)))
    return SolverReport(X, it, mu, data_res, trace, starts, stationarity, flags)


def solve_constrained(Y_omega, omega: ObservationSet, delta: float, opts: SolverOptions | None = None,
                      rel_tol: float = 0.01, max_bisections: int = 30) -> SolverReport:
    """Minimize ||X||_* subject to ||P_Omega(X - Y)||_F <= delta via bisection on mu.

    The regularized solution's data residual is nondecreasing in mu, so the
    target residual ``delta`` is bracketed on [1e-8 mu0, mu0] with
    mu0 = ||P_Omega(Y)|| and bisected (in log mu) until it is met within
    ``rel_tol`` relative. ``delta = 0`` is the mu -> 0 limit and is solved
    directly at mu = 1e-12 mu0, where the data residual is ~1e-10 mu0.
    """
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    Y = project_omega(Y_omega, omega)
    base = opts or SolverOptions()
    y_norm = float(np.linalg.norm(Y))
    if y_norm <= delta:
        return SolverReport(np.zeros_like(Y), 0, math.inf, y_norm, flags={"zero_feasible": True})

    mu0 = spectral_norm(Y, tol=1e-8)
    lo, hi = 1e-8 * mu0, mu0
    if delta == 0.0:
        # exact-fit limit: opt_tol * mu is below attainable accuracy, so a tight
        # relative-change test governs alone
        exact = replace(base, mu=1e-12 * mu0, opt_tol=math.inf, rel_tol=min(base.rel_tol, 1e-10),
                        max_iters=max(base.max_iters, 10_000))
        rep = solve_regularized(Y, omega, exact)
        rep.flags["bisection_steps"] = 0
        return rep

    # residual(hi) = ||P_Omega(Y)||_F > delta since the solution there is 0
    best: SolverReport | None = None
    warm, warm_mu = None, None
    rep = solve_regularized(Y, omega, replace(base, mu=lo))
    if rep.data_residual > delta:
        rep.flags["bracket_failure"] = True
        rep.flags["closest_residual"] = rep.data_residual
        return rep
    best, warm, warm_mu = rep, rep.m_hat, lo
    for step_i in range(1, max_bisections + 1):
        mid = math.sqrt(lo * hi)
        start = warm_mu if warm_mu > mid else mid
        rep = solve_regularized(Y, omega, replace(base, mu=mid), x0=warm, mu_start=start)
        if abs(rep.data_residual - delta) < abs(best.data_residual - delta):
            best = rep
        if abs(rep.data_residual - delta) <= rel_tol * delta:
            rep.flags["bisection_steps"] = step_i
            return rep
        if rep.data_residual > delta:
            hi = mid
        else:
            lo = mid
        warm, warm_mu = rep.m_hat, mid
    best.flags["bracket_failure"] = True
    best.flags["closest_residual"] = best.data_residual
    best.flags["bisection_steps"] = max_bisections
    return best


def diagnostics_cone_tube(M, M_hat, Y_omega, omega: ObservationSet, delta: float) -> tuple[float, float]:
    """Return (||M||_* - ||M_hat||_*, ||P_Omega(M_hat - M)||_F).

    For a feasible M the first is >= 0 and the second <= 2 delta.
    """
    M = as_matrix(M, "M")
    M_hat = as_matrix(M_hat, "M_hat")
    cone = nuclear_norm(M) - nuclear_norm(M_hat)
    tube = float(np.linalg.norm(project_omega(M_hat - M, omega)))
    return cone, tube

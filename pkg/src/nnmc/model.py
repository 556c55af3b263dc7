"""Synthetic low-rank instances, noisy observations and incoherence metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RANK_TOL, SvdResult, as_matrix, svd
from .errors import IngestionError, ParameterError
from .rng import RngSeed
from .sampling import ObservationSet, project_omega

# A1 needs every entry of P_U and P_V
MAX_A1_DIM = 2000


def default_factor_std(n: int) -> float:
    """Std of the factor entries: their variance is 20/sqrt(n)."""
    return math.sqrt(20.0 / math.sqrt(n))


@dataclass(frozen=True)
class LowRankInstance:
    M: np.ndarray
    rank: int
    factor_std: float
    seed: RngSeed


@dataclass(frozen=True)
class NoisyObservations:
    omega: ObservationSet
    Y_omega: np.ndarray
    noise_std: float
    delta: float


def gen_low_rank(n1: int, n2: int, r: int, factor_std: float | None = None, rng: RngSeed | None = None) -> LowRankInstance:
    """``M = M_L @ M_R.T`` with iid N(0, factor_std^2) factor entries."""
    if not 1 <= r <= min(n1, n2):
        raise ParameterError(f"rank must lie in [1, {min(n1, n2)}], got {r}")
    if factor_std is None:
        factor_std = default_factor_std(max(n1, n2))
    if factor_std <= 0:
        raise ParameterError("factor_std must be positive")
    rng = rng or RngSeed()
    g = rng.generator(0)
    left = factor_std * g.standard_normal((n1, r))
    right = factor_std * g.standard_normal((n2, r))
    return LowRankInstance(left @ right.T, r, float(factor_std), rng)


def delta_estimate(m: int, sigma: float) -> float:
    """High-probability bound on ||P_Omega(Z)||_F for white noise: sqrt((m + sqrt(8m)) sigma^2)."""
    return math.sqrt((m + math.sqrt(8 * m)) * sigma**2)


def add_noise(M, omega: ObservationSet, noise_std: float, rng: RngSeed | None = None) -> NoisyObservations:
    if noise_std < 0:
        raise ParameterError("noise_std must be nonnegative")
    M = as_matrix(M, "M")
    Y = project_omega(M, omega)
    delta = 0.0
    if noise_std > 0:
        g = (rng or RngSeed()).generator(2)
        z = noise_std * g.standard_normal(len(omega))
        Y.flat[omega.indices] += z
        delta = float(np.linalg.norm(z))
    return NoisyObservations(omega, Y, float(noise_std), delta)


def _leading(M, rank_tol: float = RANK_TOL) -> SvdResult:
    M = as_matrix(M, "M")
    if not np.any(M):
        raise ParameterError("metric undefined for the zero matrix")
    res = svd(M)
    k = res.rank(rank_tol)
    return SvdResult(res.U[:, :k], res.singular_values[:k], res.V[:, :k])


def incoherence_mu_B(M) -> float:
    """Smallest mu_B with ||u_k||_inf^2 <= mu_B/n1 and ||v_k||_inf^2 <= mu_B/n2."""
    lead = _leading(M)
    n1, n2 = lead.U.shape[0], lead.V.shape[0]
    return float(max(n1 * np.max(lead.U**2), n2 * np.max(lead.V**2)))


def sign_matrix(M) -> np.ndarray:
    lead = _leading(M)
    return lead.U @ lead.V.T


def strong_incoherence(M) -> tuple[float, float]:
    """Return (mu1, mu2): the smallest parameters meeting A1 and A2 respectively.

    The strong incoherence parameter is ``max(mu1, mu2)``.
    """
    lead = _leading(M)
    U, V = lead.U, lead.V
    n1, n2, r = U.shape[0], V.shape[0], U.shape[1]
    if max(n1, n2) > MAX_A1_DIM:
        raise ParameterError(f"A1 evaluation is capped at dimension {MAX_A1_DIM}")

    def a1(B: np.ndarray, n: int) -> float:
        P = B @ B.T
        P[np.diag_indices(n)] -= r / n
        return float(np.max(np.abs(P)) * n / math.sqrt(r))

    mu1 = max(a1(U, n1), a1(V, n2))
    E = U @ V.T
    mu2 = float(np.max(np.abs(E)) * math.sqrt(n1 * n2) / math.sqrt(r))
    return mu1, mu2


def make_surrogate(n1: int, n2: int, rank: int = 2, noise_fraction: float = 0.05, rng: RngSeed | None = None) -> np.ndarray:
    """Approximately low-rank test matrix: rank-``rank`` signal plus dense noise
    scaled to ``noise_fraction`` of the signal's Frobenius norm."""
    rng = rng or RngSeed()
    L = gen_low_rank(n1, n2, rank, 1.0, rng).M
    noise = rng.generator(7).standard_normal((n1, n2))
    return L + noise_fraction * np.linalg.norm(L) / np.linalg.norm(noise) * noise


def write_matrix_csv(path, X, header: bool = True) -> None:
    X = as_matrix(X)
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {X.shape[0]} {X.shape[1]}\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path, allow_missing: bool = False) -> np.ndarray:
    """Parse a CSV matrix; empty fields become NaN when ``allow_missing``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    declared = None
    rows: list[list[float]] = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#"):
            if lineno == 1:
                try:
                    declared = tuple(int(t) for t in line[1:].split())
                except ValueError:
                    raise IngestionError(f"{path}:1: malformed header {line!r}") from None
                if len(declared) != 2:
                    raise IngestionError(f"{path}:1: header must be '# rows cols'")
            continue
        if not line.strip():
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise IngestionError(
                f"{path}:{lineno}: ragged row {len(rows) + 1} has {len(fields)} fields, expected {width}"
            )
        vals = []
        for f in fields:
            f = f.strip()
            if f == "":
                if not allow_missing:
                    raise IngestionError(f"{path}:{lineno}: missing entry in row {len(rows) + 1}")
                vals.append(math.nan)
                continue
            try:
                v = float(f)
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: cannot parse {f!r}") from None
            if not math.isfinite(v):
                raise IngestionError(f"{path}:{lineno}: non-finite value {f!r}")
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    X = np.array(rows, dtype=np.float64)
    if declared is not None and declared != X.shape:
        raise IngestionError(f"{path}: header declares {declared}, data is {X.shape}")
    return X


def observations_from_csv(path) -> tuple[np.ndarray, ObservationSet]:
    """Read a CSV with empty fields as unobserved entries."""
    X = read_matrix_csv(path, allow_missing=True)
    observed = ~np.isnan(X)
    omega = ObservationSet.from_mask(observed)
    return np.where(observed, X, 0.0), omega

"""Experiment orchestration: trial loops, sweeps, the real-data protocol, I/O.

A run is described by an :class:`ExperimentConfig`; each trial draws its
instance, sampling pattern and noise from its own RNG stream, so records are
reproducible bit for bit and independent of execution order.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import as_matrix, svd
from .errors import IngestionError, ParameterError
from .model import add_noise, default_factor_std, gen_low_rank, read_matrix_csv, write_matrix_csv
from .oracle import oracle_least_squares, oracle_rms_estimate
from .rng import RngSeed
from .sampling import ObservationSet, sample_bernoulli, sample_uniform
from .solver import SolverOptions, choose_mu, solve_constrained, solve_regularized, stability_bound
from .subspace import build_certificate_candidate, tangent_from_matrix, verify_certificate

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# empirical fit of recovery RMS to the oracle estimate, used for reference curves
ORACLE_FIT = 1.68
AGGREGATE_KEYS = ("rms_error", "oracle_rms", "oracle_estimate", "ratio", "delta", "m_over_df", "iterations")

ingest_csv = read_matrix_csv


@dataclass(frozen=True)
class ExperimentConfig:
    n1: int = 100
    n2: int = 100
    rank: int = 2
    sampling: str = "uniform"
    p: float = 0.2
    noise_std: float = 1.0
    trials: int = 20
    base_seed: int = 0
    mode: str = "reg"
    mu: float | None = None
    delta_source: str = "realized"
    factor_std: float | None = None
    with_oracle: bool = True
    with_certificate: bool = False
    rel_tol: float = 1e-5
    max_iters: int = 2000
    continuation_factor: float = 0.25
    sweep_axis: str = "none"
    grid: tuple = ()
    max_resamples: int = 10

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))

    @property
    def df(self) -> int:
        return self.rank * (self.n1 + self.n2 - self.rank)

    @property
    def expected_m(self) -> int:
        return int(round(self.p * self.n1 * self.n2))

    def at(self, x) -> "ExperimentConfig":
        """Config for one grid point of the sweep."""
        if self.sweep_axis == "none":
            return self
        if self.sweep_axis == "n":
            return replace(self, n1=int(x), n2=int(x), sweep_axis="none", grid=())
        if self.sweep_axis == "p":
            return replace(self, p=float(x), sweep_axis="none", grid=())
        if self.sweep_axis == "r":
            return replace(self, rank=int(x), sweep_axis="none", grid=())
        raise ParameterError(f"unknown sweep axis {self.sweep_axis!r}")

    def validate(self) -> None:
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if self.sampling not in ("uniform", "bernoulli"):
            raise ParameterError(f"sampling must be 'uniform' or 'bernoulli', got {self.sampling!r}")
        if self.mode not in ("reg", "constrained"):
            raise ParameterError(f"mode must be 'reg' or 'constrained', got {self.mode!r}")
        if self.delta_source not in ("realized", "estimate"):
            raise ParameterError("delta_source must be 'realized' or 'estimate'")
        if self.sweep_axis != "none":
            if not self.grid:
                raise ParameterError("sweep grid is empty")
            for x in self.grid:
                self.at(x).validate()
            return
        if self.n1 < 1 or self.n2 < 1:
            raise ParameterError("dimensions must be positive")
        if not 1 <= self.rank <= min(self.n1, self.n2):
            raise ParameterError(f"rank {self.rank} outside [1, {min(self.n1, self.n2)}]")
        if not 0 < self.p <= 1:
            raise ParameterError("p must lie in (0, 1]")
        if self.df >= self.expected_m:
            raise ParameterError(
                f"infeasible point: df = {self.df} >= m = {self.expected_m} (n={self.n1}x{self.n2}, r={self.rank}, p={self.p})"
            )
        if self.noise_std < 0:
            raise ParameterError("noise_std must be nonnegative")
        if self.mode == "reg" and self.mu is None and self.noise_std == 0:
            raise ParameterError("noise_std = 0 needs an explicit mu in reg mode")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**{**d, "grid": tuple(d.get("grid", ()))})


@dataclass
class ExperimentRecord:
    kind: str
    config: dict
    points: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    # wall-clock data lives apart from the reproducible payload
    timing: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "config": self.config,
            "points": self.points,
            "violations": self.violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise IngestionError(f"unsupported schema version {d.get('schema_version')}")
        return cls(d["kind"], d["config"], d["points"], d["violations"], schema_version=d["schema_version"])


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    mean = math.fsum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def aggregate(trials: list[dict]) -> dict:
    """Mean and sample std of each tracked quantity over non-excluded trials."""
    kept = [t for t in trials if not t.get("excluded")]
    out = {"n_trials": len(kept)}
    for key in AGGREGATE_KEYS:
        vals = [t[key] for t in kept if t.get(key) is not None and not (isinstance(t[key], float) and math.isnan(t[key]))]
        if vals:
            out[f"{key}_mean"], out[f"{key}_std"] = _mean_std(vals)
    return out


def _sample(cfg: ExperimentConfig, seed: RngSeed) -> ObservationSet:
    g = seed.generator(1)
    if cfg.sampling == "uniform":
        return sample_uniform(cfg.n1, cfg.n2, cfg.expected_m, g)
    return sample_bernoulli(cfg.n1, cfg.n2, cfg.p, g)


def run_trial(cfg: ExperimentConfig, trial_index: int) -> tuple[dict, float]:
    """One trial: generate, sample, corrupt, solve, benchmark. Returns (record, seconds)."""
    t0 = time.perf_counter()
    factor_std = cfg.factor_std or default_factor_std(max(cfg.n1, cfg.n2))
    for attempt in range(cfg.max_resamples + 1):
        seed = RngSeed.for_trial(cfg.base_seed, trial_index, attempt)
        inst = gen_low_rank(cfg.n1, cfg.n2, cfg.rank, factor_std, seed)
        omega = _sample(cfg, seed)
        if not omega.has_unsampled_lines():
            break
        logger.info("trial %d attempt %d left a row/column unsampled; resampling", trial_index, attempt)
    obs = add_noise(inst.M, omega, cfg.noise_std, seed)
    n1, n2, r = cfg.n1, cfg.n2, cfg.rank
    m = len(omega)
    p_hat = m / (n1 * n2)
    df = r * (n1 + n2 - r)
    mu = cfg.mu if cfg.mu is not None else choose_mu(n1, n2, m, cfg.noise_std)

    opts = SolverOptions(mu=mu, rel_tol=cfg.rel_tol, max_iters=cfg.max_iters,
                         continuation_factor=cfg.continuation_factor)
    excluded = False
    if cfg.mode == "reg":
        rep = solve_regularized(obs.Y_omega, omega, opts)
        if not rep.converged:
            rep = solve_regularized(obs.Y_omega, omega, replace(opts, max_iters=2 * opts.max_iters))
            excluded = not rep.converged
    else:
        from .model import delta_estimate
        delta = obs.delta if cfg.delta_source == "realized" else delta_estimate(m, cfg.noise_std)
        rep = solve_constrained(obs.Y_omega, omega, delta, opts)
        if not rep.converged:
            rep = solve_constrained(obs.Y_omega, omega, delta, replace(opts, max_iters=2 * opts.max_iters))
            excluded = not rep.converged

    err = float(np.linalg.norm(rep.m_hat - inst.M))
    scale = math.sqrt(n1 * n2)
    estimate = oracle_rms_estimate(n1, n2, r, m, cfg.noise_std)
    bound = stability_bound(p_hat, n1, n2, obs.delta)
    rec = {
        "trial": trial_index,
        "seed": seed.seed,
        "stream": seed.stream,
        "attempts": attempt + 1,
        "m": m,
        "m_over_df": m / df,
        "delta": obs.delta,
        "mu": rep.final_mu if cfg.mode == "constrained" else mu,
        "rms_error": err / scale,
        "oracle_estimate": estimate,
        "ratio": (err / scale) / estimate if estimate > 0 else None,
        "stability_bound": bound,
        "stability_ok": bool(err <= bound) if cfg.noise_std > 0 else None,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "excluded": excluded,
        "oracle_rms": None,
        "certificate": None,
    }
    T = None
    if cfg.with_oracle:
        T = tangent_from_matrix(inst.M)
        orep = oracle_least_squares(obs.Y_omega, omega, T, M=inst.M, sigma=cfg.noise_std)
        rec["oracle_rms"] = orep.error_frobenius / scale
    if cfg.with_certificate:
        T = T or tangent_from_matrix(inst.M)
        lam = build_certificate_candidate(T, omega, check_isometry=False)
        rec["certificate"] = verify_certificate(lam, T, omega).to_dict()
    return rec, time.perf_counter() - t0


def _run_trial_star(args):
    return run_trial(*args)


def run_point(cfg: ExperimentConfig, workers: int = 1) -> tuple[list[dict], list[float]]:
    jobs = [(cfg, i) for i in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_trial_star, jobs))
    else:
        results = [run_trial(*j) for j in jobs]
    results.sort(key=lambda rt: rt[0]["trial"])
    return [r for r, _ in results], [t for _, t in results]


def run_experiment(cfg: ExperimentConfig, kind: str = "experiment", workers: int = 1) -> ExperimentRecord:
    cfg.validate()
    record = ExperimentRecord(kind, cfg.to_dict())
    xs = cfg.grid if cfg.sweep_axis != "none" else (None,)
    runtimes = []
    for x in xs:
        pc = cfg.at(x) if x is not None else cfg
        trials, secs = run_point(pc, workers)
        runtimes.append(secs)
        point = {
            "axis": cfg.sweep_axis,
            "x": x,
            "n1": pc.n1,
            "n2": pc.n2,
            "rank": pc.rank,
            "p": pc.p,
            "df": pc.df,
            "trials": trials,
            "aggregate": aggregate(trials),
        }
        record.points.append(point)
        for t in trials:
            if t["stability_ok"] is False:
                record.violations.append({"x": x, "trial": t["trial"], "rms_error": t["rms_error"],
                                          "stability_bound": t["stability_bound"]})
    record.timing = {"trial_seconds": runtimes, "total_seconds": float(sum(map(sum, runtimes)))}
    return record


def table1_config(ns=(100, 200, 500, 1000), trials: int = 20, base_seed: int = 0, p: float = 0.2, **kw) -> ExperimentConfig:
    return ExperimentConfig(rank=2, p=p, noise_std=1.0, trials=trials, base_seed=base_seed,
                            sweep_axis="n", grid=tuple(ns), **kw)


def run_table1(base_seed: int = 0, ns=(100, 200, 500, 1000), trials: int = 20, workers: int = 1,
               include_full_observation: bool = False, **kw) -> ExperimentRecord:
    """Mean RMS error versus n at 20% sampling, rank 2, unit noise, mu = sqrt(2np).

    ``include_full_observation`` appends a p = 1 leg at the smallest n through
    the same pipeline; its RMS should sit below the raw-noise level of 1.
    """
    cfg = table1_config(ns, trials, base_seed, **kw)
    record = run_experiment(cfg, "table1", workers)
    if include_full_observation:
        full = replace(cfg.at(min(ns)), p=1.0)
        extra = run_experiment(full, "table1", workers)
        for pt in extra.points:
            pt["axis"], pt["x"] = "full_observation", min(ns)
        record.points.extend(extra.points)
        record.violations.extend(extra.violations)
        record.timing["full_observation_seconds"] = extra.timing["total_seconds"]
    return record


def p_grid_for_ratios(n: int, r: int, ratios) -> tuple[float, ...]:
    """Sampling fractions giving m/df equal to each ratio on an n x n rank-r instance."""
    df = r * (2 * n - r)
    return tuple(ratio * df / (n * n) for ratio in ratios)


FIGURE2_PRESETS = {
    "p": dict(n1=600, n2=600, rank=2, p=0.2, sweep_axis="p", grid=p_grid_for_ratios(600, 2, (2, 3, 4, 5, 6, 8, 10))),
    "n": dict(rank=2, p=0.2, sweep_axis="n", grid=(100, 200, 300, 400, 500, 600, 700, 800, 900, 1000)),
    "r": dict(n1=600, n2=600, p=0.2, sweep_axis="r", grid=tuple(range(1, 11))),
}


def figure2_config(axis: str, **overrides) -> ExperimentConfig:
    if axis not in FIGURE2_PRESETS:
        raise ParameterError(f"axis must be one of {sorted(FIGURE2_PRESETS)}")
    return ExperimentConfig(**{**FIGURE2_PRESETS[axis], **overrides})


def run_figure2_sweep(axis: str, config: ExperimentConfig | None = None, workers: int = 1) -> ExperimentRecord:
    """Recovery RMS, oracle RMS and the oracle estimate along one sweep axis."""
    cfg = config if config is not None else figure2_config(axis)
    if cfg.sweep_axis != axis:
        raise ParameterError(f"config sweeps {cfg.sweep_axis!r}, requested {axis!r}")
    return run_experiment(cfg, f"figure2_{axis}", workers)


def plot_rows(record: ExperimentRecord) -> list[dict]:
    rows = []
    for pt in record.points:
        agg = pt["aggregate"]
        est = agg.get("oracle_estimate_mean", math.nan)
        rows.append({
            "x": pt["x"],
            "m_over_df": agg.get("m_over_df_mean", math.nan),
            "rms_mean": agg.get("rms_error_mean", math.nan),
            "rms_std": agg.get("rms_error_std", math.nan),
            "oracle_mean": agg.get("oracle_rms_mean", math.nan),
            "oracle_std": agg.get("oracle_rms_std", math.nan),
            "estimate": est,
            "oracle_x1.68": ORACLE_FIT * agg.get("oracle_rms_mean", math.nan),
            "estimate_x1.68": ORACLE_FIT * est,
            "ratio_mean": agg.get("ratio_mean", math.nan),
        })
    return rows


def write_results(record: ExperimentRecord, path) -> None:
    """Write ``path`` (JSON record), ``path.tsv`` (plot data) and ``path.timing.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.to_json())
    rows = plot_rows(record) if record.kind != "real" else []
    if rows:
        cols = list(rows[0])
        lines = ["\t".join(cols)] + ["\t".join(repr(r[c]) for c in cols) for r in rows]
        path.with_name(path.name + ".tsv").write_text("\n".join(lines) + "\n")
    path.with_name(path.name + ".timing.json").write_text(json.dumps(record.timing, indent=2) + "\n")


def load_results(path) -> ExperimentRecord:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    return ExperimentRecord.from_dict(d)


def verify_aggregates(record: ExperimentRecord) -> bool:
    """Recompute every stored aggregate from its per-trial values."""
    return all(aggregate(pt["trials"]) == pt["aggregate"] for pt in record.points if "trials" in pt)


# --- real-data protocol -----------------------------------------------------

def truncation_errors(M, ks=(1, 2, 5, 10)) -> dict:
    """Relative error ||M_k - M||_F / ||M||_F of the best rank-k approximations."""
    M = as_matrix(M, "M")
    res = svd(M)
    total = float(np.linalg.norm(res.singular_values))
    out = {}
    for k in ks:
        if k < res.singular_values.size:
            out[str(k)] = float(np.linalg.norm(res.singular_values[k:])) / total
    return out


def estimate_noise_scale(Y_omega, omega: ObservationSet) -> float:
    """Robust noise scale of the observed entries after removing a heavily
    regularized pilot fit: 1.4826 * median absolute deviation of the residuals."""
    Y = np.where(omega.mask, Y_omega, 0.0)
    pilot_mu = 0.1 * float(svd(Y).singular_values[0])
    pilot = solve_regularized(Y, omega, SolverOptions(mu=pilot_mu)).m_hat
    resid = (Y - pilot).ravel()[omega.indices]
    return float(1.4826 * np.median(np.abs(resid - np.median(resid))))


def cross_validate_mu(Y_omega, omega: ObservationSet, mus, folds: int = 5, rng: RngSeed | None = None,
                      opts: SolverOptions | None = None) -> list[dict]:
    """Held-out mean squared error of each mu, averaged over entry folds of Omega."""
    rng = rng or RngSeed()
    opts = opts or SolverOptions()
    mus = sorted(mus, reverse=True)
    perm = rng.generator(5).permutation(omega.indices)
    chunks = np.array_split(perm, folds)
    errs = np.zeros(len(mus))
    Yf = np.asarray(Y_omega).ravel()
    for held in chunks:
        train = ObservationSet(omega.rows, omega.cols, np.setdiff1d(omega.indices, held))
        Ytr = np.where(train.mask, Y_omega, 0.0)
        warm, warm_mu = None, None
        for i, mu in enumerate(mus):
            rep = solve_regularized(Ytr, train, replace(opts, mu=mu), x0=warm, mu_start=warm_mu)
            warm, warm_mu = rep.m_hat, mu
            errs[i] += float(np.mean((rep.m_hat.ravel()[held] - Yf[held]) ** 2)) / folds
    return [{"mu": float(mu), "heldout_mse": float(e)} for mu, e in zip(mus, errs)]


def run_real_data(matrix, observe_fraction: float, mu_override: float | None = None, base_seed: int = 0,
                  folds: int = 5, n_mu: int = 10, opts: SolverOptions | None = None) -> ExperimentRecord:
    """Subsample a full matrix, recover it, and compare with truncated SVDs.

    ``matrix`` is an array or a CSV path. Without ``mu_override`` mu is picked
    by ``folds``-fold cross-validation over ``n_mu`` log-spaced values centred
    on choose_mu at a robust noise-scale estimate.
    """
    t0 = time.perf_counter()
    source = None
    if isinstance(matrix, (str, Path)):
        source = str(matrix)
        matrix = ingest_csv(matrix)
    M = as_matrix(matrix, "matrix")
    if not 0 < observe_fraction <= 1:
        raise ParameterError("observe_fraction must lie in (0, 1]")
    n1, n2 = M.shape
    seed = RngSeed(base_seed, 0)
    m = int(round(observe_fraction * n1 * n2))
    omega = sample_uniform(n1, n2, m, seed.generator(1))
    Y = np.where(omega.mask, M, 0.0)
    opts = opts or SolverOptions()

    point: dict = {"n1": n1, "n2": n2, "m": m, "observe_fraction": observe_fraction, "source": source}
    if mu_override is not None:
        mu, point["mu_source"] = float(mu_override), "override"
    else:
        sigma_hat = estimate_noise_scale(Y, omega)
        centre = choose_mu(n1, n2, m, sigma_hat)
        mus = np.geomspace(centre / 10, centre * 10, n_mu)
        cv = cross_validate_mu(Y, omega, mus, folds, seed, opts)
        best = min(cv, key=lambda c: c["heldout_mse"])
        # mu scales like sqrt(p); training folds see (folds - 1) / folds of Omega
        mu = best["mu"] * math.sqrt(folds / (folds - 1))
        point.update(noise_estimate=sigma_hat, mu_centre=centre, cv=cv, mu_source="cross_validation")
    rep = solve_regularized(Y, omega, replace(opts, mu=mu))
    rel = float(np.linalg.norm(rep.m_hat - M) / np.linalg.norm(M))
    point.update(mu=mu, relative_error=rel, truncation_errors=truncation_errors(M),
                 iterations=rep.iterations, converged=rep.converged)
    record = ExperimentRecord("real", {"observe_fraction": observe_fraction, "mu_override": mu_override,
                                       "base_seed": base_seed, "folds": folds, "n_mu": n_mu}, [point])
    record.timing = {"total_seconds": time.perf_counter() - t0}
    return record


def write_instance(directory, inst_M, Y_omega, omega: ObservationSet, meta: dict) -> None:
    from .sampling import write_observations
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(d / "truth.csv", inst_M)
    write_observations(d / "observations.tsv", Y_omega, omega)
    (d / "instance.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")

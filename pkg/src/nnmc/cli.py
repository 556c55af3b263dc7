"""Command-line entry point: ``nnmc <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` holding flat ``key = value``
lines named like the long flags (dashes or underscores); explicit flags win.
Exit status: 0 on success, 2 when a stability-envelope breach is recorded,
1 on any error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import IngestionError, ParameterError
from .model import add_noise, gen_low_rank, incoherence_mu_B, read_matrix_csv, strong_incoherence, write_matrix_csv
from .oracle import oracle_least_squares, oracle_rms_estimate
from .rng import RngSeed
from .sampling import read_observations, sample_bernoulli, sample_uniform
from .solver import SolverOptions, choose_mu, solve_constrained, solve_regularized, stability_bound
from .subspace import build_certificate_candidate, isometry_bounds, tangent_from_matrix, verify_certificate

logger = logging.getLogger("nnmc")

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def read_config(path) -> dict:
    """Parse flat ``key = value`` text; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise IngestionError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    sys.stdout.write(text)


def _load_instance(args):
    """(M or None, Y, omega) from --instance DIR or --truth/--obs files."""
    if args.instance:
        d = Path(args.instance)
        truth, obs = d / "truth.csv", d / "observations.tsv"
    else:
        truth, obs = args.truth, args.obs
    if obs is None:
        raise ParameterError("need --instance DIR or --obs FILE")
    Y, omega = read_observations(obs)
    M = read_matrix_csv(truth) if truth and Path(truth).exists() else None
    return M, Y, omega


def cmd_generate(args) -> int:
    seed = RngSeed(args.seed)
    inst = gen_low_rank(args.n1, args.n2 or args.n1, args.rank, args.factor_std, seed)
    n1, n2 = inst.M.shape
    if args.sampling == "uniform":
        omega = sample_uniform(n1, n2, int(round(args.p * n1 * n2)), seed.generator(1))
    else:
        omega = sample_bernoulli(n1, n2, args.p, seed.generator(1))
    obs = add_noise(inst.M, omega, args.sigma, seed)
    meta = {"n1": n1, "n2": n2, "rank": args.rank, "p": args.p, "m": len(omega), "sigma": args.sigma,
            "delta": obs.delta, "seed": args.seed, "factor_std": inst.factor_std, "sampling": args.sampling}
    out = args.out or "instance"
    harness.write_instance(out, inst.M, obs.Y_omega, omega, meta)
    _emit(meta, None)
    return EXIT_OK


def cmd_complete(args) -> int:
    M, Y, omega = _load_instance(args)
    n1, n2 = omega.shape
    m = len(omega)
    opts = SolverOptions(rel_tol=args.rel_tol, max_iters=args.max_iters)
    if args.mode == "constrained":
        if args.delta is None:
            raise ParameterError("--mode constrained needs --delta")
        rep = solve_constrained(Y, omega, args.delta, opts)
    else:
        mu = args.mu
        if mu is None:
            if args.sigma is None:
                raise ParameterError("--mode reg needs --mu or --sigma")
            mu = choose_mu(n1, n2, m, args.sigma)
        from dataclasses import replace
        rep = solve_regularized(Y, omega, replace(opts, mu=mu))
    summary = rep.summary()
    status = EXIT_OK
    if M is not None:
        err = float(np.linalg.norm(rep.m_hat - M))
        summary["rms_error"] = err / math.sqrt(n1 * n2)
        delta = args.delta
        if delta is None and args.instance:
            delta = json.loads((Path(args.instance) / "instance.json").read_text()).get("delta")
        if delta:
            bound = stability_bound(m / (n1 * n2), n1, n2, delta)
            summary["stability_bound"] = bound
            summary["stability_ok"] = err <= bound
            if err > bound:
                status = EXIT_VIOLATION
    if args.estimate_out:
        write_matrix_csv(args.estimate_out, rep.m_hat)
    _emit(summary, args.out)
    return status


def cmd_certify(args) -> int:
    M, _, omega = _load_instance(args)
    if M is None:
        raise ParameterError("certify needs the ground-truth matrix")
    T = tangent_from_matrix(M)
    lo, hi = isometry_bounds(T, omega)
    lam = build_certificate_candidate(T, omega, check_isometry=False)
    rep = verify_certificate(lam, T, omega)
    mu1, mu2 = strong_incoherence(M)
    payload = {"rank": T.rank, "p": omega.fraction, "isometry_bounds": [lo, hi],
               "mu_B": incoherence_mu_B(M), "strong_incoherence": [mu1, mu2], "certificate": rep.to_dict()}
    _emit(payload, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    M, Y, omega = _load_instance(args)
    if M is None:
        raise ParameterError("oracle needs the ground-truth matrix")
    T = tangent_from_matrix(M)
    n1, n2 = M.shape
    scale = math.sqrt(n1 * n2)
    payload = {"df": T.dim, "m": len(omega)}
    for name, row_only in (("tangent", False), ("row_space", True)):
        rep = oracle_least_squares(Y, omega, T, M=M, row_space_only=row_only)
        payload[f"{name}_rms"] = rep.error_frobenius / scale
    if args.sigma is not None:
        payload["estimate"] = oracle_rms_estimate(n1, n2, T.rank, len(omega), args.sigma)
    _emit(payload, args.out)
    return EXIT_OK


def _finish(record, args) -> int:
    if args.out:
        harness.write_results(record, args.out)
    summary = [{"x": pt["x"], "axis": pt["axis"], **pt.get("aggregate", {})} for pt in record.points]
    sys.stdout.write(json.dumps({"kind": record.kind, "points": summary, "violations": len(record.violations)},
                                sort_keys=True, indent=2) + "\n")
    return EXIT_VIOLATION if record.violations else EXIT_OK


def cmd_table1(args) -> int:
    rec = harness.run_table1(args.seed, ns=args.ns, trials=args.trials, workers=args.workers,
                             include_full_observation=args.full_observation)
    return _finish(rec, args)


def cmd_sweep(args) -> int:
    overrides = {"trials": args.trials, "base_seed": args.seed}
    if args.n is not None:
        overrides.update(n1=args.n, n2=args.n)
    if args.rank is not None:
        overrides["rank"] = args.rank
    if args.p is not None:
        overrides["p"] = args.p
    if args.grid:
        overrides["grid"] = _floats(args.grid) if args.axis == "p" else _ints(args.grid)
    elif args.ratios:
        n = overrides.get("n1", harness.FIGURE2_PRESETS["p"]["n1"])
        r = overrides.get("rank", 2)
        overrides["grid"] = harness.p_grid_for_ratios(n, r, _floats(args.ratios))
    cfg = harness.figure2_config(args.axis, **overrides)
    return _finish(harness.run_figure2_sweep(args.axis, cfg, args.workers), args)


def cmd_real(args) -> int:
    rec = harness.run_real_data(args.file, args.fraction, mu_override=args.mu, base_seed=args.seed)
    if args.out:
        harness.write_results(rec, args.out)
    pt = rec.points[0]
    _emit({k: pt[k] for k in ("mu", "mu_source", "relative_error", "truncation_errors", "m")}, None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=20)
    common.add_argument("--out", default=None)
    common.add_argument("--config", default=None, help="flat key = value file; flags override it")
    common.add_argument("-v", "--verbose", action="store_true")

    inst = argparse.ArgumentParser(add_help=False)
    inst.add_argument("--instance", default=None, help="directory written by 'generate'")
    inst.add_argument("--truth", default=None)
    inst.add_argument("--obs", default=None)

    parser = argparse.ArgumentParser(prog="nnmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthesize an instance directory")
    p.add_argument("--n1", type=int, default=100)
    p.add_argument("--n2", type=int, default=None)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--p", type=float, default=0.2)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--factor-std", type=float, default=None)
    p.add_argument("--sampling", choices=("uniform", "bernoulli"), default="uniform")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("complete", parents=[common, inst], help="recover a matrix from observations")
    p.add_argument("--mode", choices=("reg", "constrained"), default="reg")
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--rel-tol", type=float, default=1e-5)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--estimate-out", default=None, help="CSV path for the recovered matrix")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("certify", parents=[common, inst], help="tangent-space and certificate diagnostics")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("oracle", parents=[common, inst], help="oracle least-squares baselines")
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("table1", parents=[common], help="RMS error versus n at 20%% sampling")
    p.add_argument("--ns", type=_ints, default=(100, 200, 500, 1000))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--full-observation", action="store_true")
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("sweep", parents=[common], help="recovery versus oracle along one axis")
    p.add_argument("--axis", choices=("n", "p", "r"), required=True)
    p.add_argument("--grid", default=None, help="comma-separated grid values")
    p.add_argument("--ratios", default=None, help="p axis only: comma-separated m/df targets")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("real", parents=[common], help="subsample and recover a full matrix from CSV")
    p.add_argument("--file", required=True)
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--mu", type=float, default=None)
    p.set_defaults(func=cmd_real)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = known.get(key)
        if action is None or key in ("config", "help"):
            raise IngestionError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        if action.const is True and action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(raw) if action.type else raw
    # defaults from the file sit below anything given on the command line
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (ValueError, ArithmeticError, OSError) as exc:
        sys.stderr.write(f"nnmc: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

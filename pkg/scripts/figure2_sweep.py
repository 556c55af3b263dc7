"""Recovery RMS against the oracle along one axis (p, n or r).

    python scripts/figure2_sweep.py --axis p --n 300 --ratios 3,5,8 --trials 20
"""
import argparse
import logging

from nnmc.harness import figure2_config, p_grid_for_ratios, run_figure2_sweep, write_results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", choices=("p", "n", "r"), default="p")
    ap.add_argument("--n", type=int, default=None, help="override the fixed n of the p and r presets")
    ap.add_argument("--ratios", default=None, help="p axis: m/df targets, e.g. 2,3,4,5,6,8,10")
    ap.add_argument("--grid", default=None, help="explicit comma-separated grid")
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    kw = {"trials": args.trials, "base_seed": args.seed}
    if args.n:
        kw.update(n1=args.n, n2=args.n)
    if args.grid:
        conv = float if args.axis == "p" else int
        kw["grid"] = tuple(conv(x) for x in args.grid.split(","))
    elif args.axis == "p" and (args.ratios or args.n):
        ratios = tuple(float(x) for x in (args.ratios or "2,3,4,5,6,8,10").split(","))
        kw["grid"] = p_grid_for_ratios(kw.get("n1", 600), 2, ratios)
    cfg = figure2_config(args.axis, **kw)
    rec = run_figure2_sweep(args.axis, cfg, args.workers)
    write_results(rec, args.out or f"results/figure2_{args.axis}.json")

    print(f"{'x':>10} {'m/df':>6} {'rms':>8} {'oracle':>8} {'est':>8} {'ratio':>6} {'max':>6}")
    for pt in rec.points:
        a = pt["aggregate"]
        worst = max(t["ratio"] for t in pt["trials"])
        print(f"{pt['x']:>10.4g} {a['m_over_df_mean']:>6.2f} {a['rms_error_mean']:>8.4f} "
              f"{a['oracle_rms_mean']:>8.4f} {a['oracle_estimate_mean']:>8.4f} {a['ratio_mean']:>6.3f} {worst:>6.3f}")
    return 2 if rec.violations else 0


if __name__ == "__main__":
    raise SystemExit(main())

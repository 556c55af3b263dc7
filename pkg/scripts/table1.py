"""Reproduce the RMS-versus-n table (rank 2, 20% sampling, unit noise).

    python scripts/table1.py --ns 100,200 --trials 20 --out results/table1.json
"""
import argparse
import logging

from nnmc.harness import run_table1, write_results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ns", default="100,200,500,1000")
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--full-observation", action="store_true")
    ap.add_argument("--out", default="results/table1.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    ns = tuple(int(n) for n in args.ns.split(","))
    rec = run_table1(args.seed, ns=ns, trials=args.trials, workers=args.workers,
                     include_full_observation=args.full_observation)
    write_results(rec, args.out)
    reference = {100: 0.99, 200: 0.61, 500: 0.34, 1000: 0.24}
    print(f"{'n':>6} {'p':>5} {'mean rms':>9} {'std':>7} {'ref':>6}")
    for pt in rec.points:
        a = pt["aggregate"]
        ref = reference.get(pt["n1"]) if pt["axis"] == "n" else None
        print(f"{pt['n1']:>6} {pt['p']:>5.2f} {a['rms_error_mean']:>9.4f} {a['rms_error_std']:>7.4f} "
              f"{'' if ref is None else ref:>6}")
    if rec.violations:
        print(f"stability envelope violated in {len(rec.violations)} trials")
    return 2 if rec.violations else 0


if __name__ == "__main__":
    raise SystemExit(main())

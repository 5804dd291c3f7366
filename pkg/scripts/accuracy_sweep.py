#!/usr/bin/env python3
"""Outer iterations needed per accuracy level, with a log-linear fit for each network size.

    python3 scripts/accuracy_sweep.py --sizes 2x10,5x50,10x100 --seeds 5
"""
import argparse
import math

from hiergame import KINDS, fit_linearity, sweep_epsilon


def sizes(text):
    return [tuple(int(v) for v in part.split("x")) for part in text.split(",")]


def floats(text):
    return [float(v) for v in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", choices=KINDS, default="crowd_sensing")
    ap.add_argument("--sizes", type=sizes, default=[(2, 10), (5, 50), (10, 100)])
    ap.add_argument("--epsilons", type=floats, default=[1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
                    help="comma-separated, decreasing")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", help="write the sweep table CSV here")
    args = ap.parse_args()

    table = sweep_epsilon(args.kind, args.sizes, args.epsilons, range(args.seeds))
    if args.out:
        table.to_csv(args.out)

    print("size      " + "".join(f"{e:>9.0e}" for e in args.epsilons) + "   slope    R^2")
    for size in table.sizes():
        sub = table.for_size(size)
        fit = fit_linearity(sub)
        its = "".join(f"{r.iterations:9.1f}" for r in sub.rows)
        r2 = "n/a" if math.isnan(fit.r2) else f"{fit.r2:.4f}"
        print(f"{size[0]}x{size[1]:<7}{its}   {fit.slope:5.2f}  {r2}")
    pooled = fit_linearity(table)
    print(f"pooled over sizes: slope {pooled.slope:.2f} per decade, R^2 {pooled.r2:.4f}")


if __name__ == "__main__":
    main()

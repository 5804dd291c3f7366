#!/usr/bin/env python3
"""Epsilon per outer iteration on a generated network, against the uncoordinated baseline.

    python3 scripts/convergence_curve.py --controllers 10 --agents 100 --out curve.csv
"""
import argparse
import csv

from hiergame import KINDS, baseline_uncoordinated, centralized_optimum, gen_scenario, solve_mlmf


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", choices=KINDS, default="crowd_sensing")
    ap.add_argument("--controllers", type=int, default=10)
    ap.add_argument("--agents", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write iteration,epsilon,baseline_epsilon rows here")
    ap.add_argument("--plot", help="save a log-scale PNG here (needs matplotlib)")
    args = ap.parse_args()

    inst = gen_scenario(args.kind, args.controllers, args.agents, seed=args.seed)
    ref = centralized_optimum(inst)
    eps = solve_mlmf(inst, reference=ref).trace.column("epsilon")
    base = baseline_uncoordinated(inst, reference=ref)[1][-1].epsilon

    print(f"{args.kind} {args.controllers}x{args.agents} seed {args.seed}: F* = {ref.total:.6g}")
    print(f"uncoordinated baseline epsilon: {base:.3e}")
    for k, e in enumerate(eps):
        print(f"{k:4d}  {e:.3e}")
    hit = next((k for k, e in enumerate(eps) if e <= 1e-3), None)
    print(f"first epsilon <= 1e-3 at outer iteration {hit}")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["outer_iter", "epsilon", "baseline_epsilon"])
            w.writerows([k, repr(float(e)), repr(base)] for k, e in enumerate(eps))
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy(range(len(eps)), eps, marker="o", label="coordinated pricing")
        ax.axhline(base, color="grey", ls="--", label="uncoordinated baseline")
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("epsilon")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=150)


if __name__ == "__main__":
    main()

"""``hiergame`` command line: generate, solve, sweep, verify.

Exit codes: 0 success, 2 validation failure, 3 non-convergence,
4 infeasibility, 64 usage error. Progress goes to stderr; files and the
stdout summary are machine output only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .admm import AdmmOptions
from .basic import BasicSolveOptions
from .errors import (ConvexityError, HierGameError, InfeasibleError, InstanceMismatchError,
                     NonConvergenceError, ParameterError, ValidationError)
from .harness import SOLVER_FORMS, fit_linearity, run_experiment, sweep_epsilon, write_json
from .model import Allocation, ValidationReport, epsilon, load_instance, save_instance
from .oracle import centralized_optimum, kkt_check
from .scenarios import KINDS, ScenarioParams, gen_scenario

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGENCE, EXIT_INFEASIBLE, EXIT_USAGE = 0, 2, 3, 4, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _size(text):
    try:
        nc, na = text.lower().split("x")
        return int(nc), int(na)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 10x100, got {text!r}") from None


def _sizes(text):
    return [_size(t) for t in text.split(",") if t]


def _epsilons(text):
    """``1e-1:1e-5`` (every decade in between) or a comma list."""
    try:
        if ":" in text:
            hi, lo = (float(t) for t in text.split(":"))
            a, b = np.log10(hi), np.log10(lo)
            if a <= b or a != round(a) or b != round(b):
                raise ValueError
            return [float(10.0 ** k) for k in range(int(a), int(b) - 1, -1)]
        return [float(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"epsilons must be a decade range like 1e-1:1e-5 or a comma list, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hiergame", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hiergame {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a seeded scenario instance")
    g.add_argument("--kind", choices=KINDS, required=True)
    g.add_argument("--controllers", type=int, required=True)
    g.add_argument("--agents", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-coupling", action="store_true", help="omit coupling constraints")
    g.add_argument("--out-of-regime", action="store_true", help="log-concave agent costs")
    g.add_argument("--out", required=True)
    g.add_argument("--quiet", action="store_true")

    s = sub.add_parser("solve", help="run a solver on an instance file")
    s.add_argument("--instance", required=True)
    s.add_argument("--solver", choices=["auto", *SOLVER_FORMS], default="auto")
    s.add_argument("--tol", type=float, default=1e-8, help="price and inner-loop tolerance")
    s.add_argument("--max-outer", type=int, default=10_000)
    s.add_argument("--rho", type=float, default=1.0)
    s.add_argument("--oracle", action="store_true", help="score every iteration against the oracle")
    s.add_argument("--trace")
    s.add_argument("--summary")
    s.add_argument("--timing", action="store_true", help="fill the wall_ms trace column")
    s.add_argument("--quiet", action="store_true")

    w = sub.add_parser("sweep", help="iterations-to-epsilon table over sizes and seeds")
    w.add_argument("--kind", choices=KINDS, default="crowd_sensing")
    w.add_argument("--sizes", type=_sizes, default=[(2, 10), (5, 50), (10, 100)])
    w.add_argument("--epsilons", type=_epsilons, default=[1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    w.add_argument("--seeds", type=int, default=5, help="use seeds 0..N-1")
    w.add_argument("--tol", type=float, default=1e-8)
    w.add_argument("--out", required=True)
    w.add_argument("--summary")
    w.add_argument("--quiet", action="store_true")

    v = sub.add_parser("verify", help="check an allocation against the oracle and KKT system")
    v.add_argument("--instance", required=True)
    v.add_argument("--allocation", required=True, help="solve summary JSON or a list of records")
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--quiet", action="store_true")
    return p


def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


def _options(args):
    opts = BasicSolveOptions(tol_price=args.tol, max_outer=getattr(args, "max_outer", 10_000))
    admm = AdmmOptions(rho=getattr(args, "rho", 1.0), tol_primal=args.tol, tol_dual=args.tol)
    return opts, admm


def cmd_generate(args):
    params = ScenarioParams(coupling=not args.no_coupling, out_of_regime=args.out_of_regime)
    inst = gen_scenario(args.kind, args.controllers, args.agents, params, args.seed)
    save_instance(inst, args.out)
    _say(args, f"wrote {args.kind} {inst.form} instance: {len(inst.cells)} cells, "
               f"{len(inst.constraints)} constraints -> {args.out}")
    return EXIT_OK


def cmd_solve(args):
    inst = load_instance(args.instance)
    opts, admm = _options(args)
    oracle = centralized_optimum(inst) if args.oracle else None
    config = {"instance": str(args.instance), "solver": args.solver, "tol": args.tol,
              "max_outer": args.max_outer, "rho": args.rho, "oracle": args.oracle}
    result, trace = run_experiment(inst, args.solver, opts, admm, oracle, trace_path=args.trace,
                                   summary_path=args.summary, timing=args.timing, config=config)
    s = result.summary
    eps = "" if s["final_epsilon"] is None else f", final epsilon {s['final_epsilon']:.3e}"
    _say(args, f"{result.solver}: {s['iterations']} outer iterations{eps}")
    if args.summary is None:
        json.dump(s, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


def cmd_sweep(args):
    opts = BasicSolveOptions(tol_price=args.tol)
    admm = AdmmOptions(tol_primal=args.tol, tol_dual=args.tol)
    seeds = list(range(args.seeds))
    table = sweep_epsilon(args.kind, args.sizes, args.epsilons, seeds, opts, admm)
    table.to_csv(args.out)
    summary = {"config": {"kind": args.kind, "sizes": args.sizes, "epsilons": args.epsilons,
                          "seeds": seeds, "tol": args.tol},
               "rows": table.to_records(), "fit": None, "fit_by_size": {}}
    if len(args.epsilons) >= 3:
        summary["fit"] = fit_linearity(table)._asdict()
        summary["fit_by_size"] = {f"{nc}x{na}": fit_linearity(table.for_size((nc, na)))._asdict()
                                  for nc, na in table.sizes()}
    for r in table.rows:
        _say(args, f"{r.n_controllers}x{r.n_agents} eps={r.epsilon:g}: {r.iterations:g} iterations"
                   + (f" ({len(r.failures)} failed)" if r.failures else ""))
    if summary["fit"]:
        f = summary["fit"]
        _say(args, f"fit: slope {f['slope']:.3f} per decade, R^2 {f['r2']:.4f}")
    if args.summary:
        write_json(args.summary, summary)
    return EXIT_OK


def _load_allocation(path, inst):
    data = json.loads(Path(path).read_text())
    duals = None
    if isinstance(data, dict):
        duals = data.get("duals") or None
        data = data.get("allocation", [])
    try:
        x = {(r["agent"], r["controller"]): float(r["x"]) for r in data}
    except (TypeError, KeyError) as exc:
        raise ValidationError(ValidationReport(
            [f"allocation records need agent, controller and x fields ({exc})"])) from None
    alloc = Allocation(x)
    alloc.to_array(inst)
    return alloc, duals


def cmd_verify(args):
    inst = load_instance(args.instance)
    alloc, duals = _load_allocation(args.allocation, inst)
    ref = centralized_optimum(inst)
    eps = epsilon(inst, alloc, ref)
    report = kkt_check(inst, alloc, duals if duals is not None else ref, args.tol)
    bound = args.tol * (1 + abs(ref.total))
    ok = eps <= bound and report.feasibility <= args.tol
    out = {"instance_id": inst.instance_id, "epsilon": eps, "epsilon_bound": bound,
           "kkt": report.to_dict(), "passed": ok,
           "multipliers": "allocation file" if duals is not None else "oracle"}
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    _say(args, f"epsilon {eps:.3e} (bound {bound:.3e}), KKT max residual "
               f"{max(report.stationarity, report.feasibility, report.complementarity):.3e}: "
               + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, NonConvergenceError):
        return EXIT_NONCONVERGENCE
    if isinstance(exc, (ValidationError, ConvexityError, InstanceMismatchError)):
        return EXIT_VALIDATION
    if isinstance(exc, (UsageError, ParameterError)):
        return EXIT_USAGE
    return EXIT_VALIDATION


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (HierGameError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"hiergame: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())

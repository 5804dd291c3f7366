"""Experiment plumbing: solver dispatch, traces on disk, epsilon sweeps.

Iteration counts are always outer iterations (price rounds). The count for
accuracy ``eps`` is the first outer iteration whose epsilon is ``<= eps``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from ._layout import Layout, thread_count
from .admm import AdmmOptions, violation
from .basic import BasicSolveOptions, check_reference, initial_prices, require_form, solve_basic
from .errors import HierGameError, NonConvergenceError, ParameterError
from .extended import solve_mlmf, solve_single_controller_coupled
from .model import (Allocation, Controller, GameInstance, PriceProfile, agent_utility,
                    objective_values)
from .oracle import OracleResult, centralized_optimum
from .scalar import Quadratic, argmin_shifted
from .scenarios import ScenarioParams, gen_scenario
from .trace import SolveTrace, TraceRow, array_hash

log = logging.getLogger(__name__)

SOLVER_FORMS = {
    "basic": "basic",
    "coupled": "single-controller-coupled",
    "mlmf": "mlmf",
    "baseline": "mlmf",
}
BASELINE_LABEL = "baseline: uncoordinated best responses + Euclidean projection (stand-in)"


def solver_for(inst: GameInstance) -> str:
    return {v: k for k, v in SOLVER_FORMS.items() if k != "baseline"}[inst.form]


class SolveOutcome(NamedTuple):
    allocation: Allocation
    prices: PriceProfile | None
    duals: dict
    trace: SolveTrace


def solve(inst, solver="auto", opts=None, admm=None, reference=None) -> SolveOutcome:
    """Run one solver by name and flatten its result."""
    if solver == "auto":
        solver = solver_for(inst)
    if solver not in SOLVER_FORMS:
        raise ParameterError(f"unknown solver {solver!r}; expected one of {sorted(SOLVER_FORMS)}")
    if solver == "basic":
        res = solve_basic(inst, opts, reference=reference)
        return SolveOutcome(res.allocation, res.prices, {}, res.trace)
    if solver == "coupled":
        res = solve_single_controller_coupled(inst, opts, admm, reference=reference)
        return SolveOutcome(res.allocation, res.prices, dict(res.duals.lam), res.trace)
    if solver == "mlmf":
        res = solve_mlmf(inst, opts, admm, reference=reference)
        return SolveOutcome(res.allocation, res.prices, res.duals.merged(), res.trace)
    alloc, trace = baseline_uncoordinated(inst, opts, reference=reference)
    return SolveOutcome(alloc, None, {}, trace)


@dataclass
class ExperimentResult:
    solver: str
    outcome: SolveOutcome | None
    summary: dict


def summarize(inst, solver, outcome, reference=None, config=None) -> dict:
    trace = outcome.trace
    out = {
        "config": dict(config or {}),
        "instance_id": inst.instance_id,
        "seed": inst.seed,
        "kind": inst.kind,
        "form": inst.form,
        "solver": solver,
        "label": trace.label or solver,
        "iterations": len(trace),
        "inner_iterations": int(sum(r.inner_iters for r in trace)),
        "final_max_price_delta": trace[-1].max_price_delta if len(trace) else None,
        "final_epsilon": trace[-1].epsilon if trace.has_epsilon else None,
        "objective_values": [float(v) for v in objective_values(inst, outcome.allocation)],
        "allocation": outcome.allocation.to_records(),
        "prices": None,
        "agent_utilities": None,
        "duals": dict(outcome.duals),
    }
    if outcome.prices is not None:
        out["prices"] = [{"agent": a, "controller": c, "theta": v}
                         for (a, c), v in outcome.prices.theta.items()]
        out["agent_utilities"] = {a.id: agent_utility(inst, outcome.allocation, outcome.prices, a.id)
                                  for a in inst.agents}
    if reference is not None:
        out["oracle"] = {"values": [float(v) for v in reference.values], "total": reference.total}
    return out


def run_experiment(inst: GameInstance, solver: str = "auto", opts: BasicSolveOptions | None = None,
                   admm: AdmmOptions | None = None, oracle: OracleResult | None = None,
                   trace_path=None, summary_path=None, timing: bool = False,
                   config: dict | None = None):
    """Solve ``inst`` and write the trace CSV and summary JSON.

    Solver errors propagate, but only after whatever trace exists (at least
    the header) has been written to ``trace_path``.

    Returns ``(ExperimentResult, SolveTrace)``.
    """
    if solver == "auto":
        solver = solver_for(inst)
    try:
        outcome = solve(inst, solver, opts, admm, reference=oracle)
    except HierGameError as exc:
        partial = getattr(exc, "trace", None)
        if not isinstance(partial, SolveTrace):
            partial = SolveTrace()
        if trace_path is not None:
            partial.to_csv(trace_path, timing=timing)
        raise
    summary = summarize(inst, solver, outcome, oracle, config)
    if trace_path is not None:
        outcome.trace.to_csv(trace_path, timing=timing)
    if summary_path is not None:
        write_json(summary_path, summary)
    return ExperimentResult(solver, outcome, summary), outcome.trace


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# -- epsilon tables ----------------------------------------------------------

def _check_epsilons(epsilons):
    eps = [float(e) for e in epsilons]
    if not eps or any(not (e > 0 and math.isfinite(e)) for e in eps):
        raise ParameterError("epsilons must be finite and > 0")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ParameterError("epsilons must be strictly decreasing")
    return eps


def crossings(trace: SolveTrace, epsilons) -> list:
    """First-crossing outer iteration per epsilon (None if never reached)."""
    return [trace.first_crossing(e) for e in _check_epsilons(epsilons)]


@dataclass
class SweepRow:
    n_controllers: int
    n_agents: int
    epsilon: float
    iterations: float
    per_seed: list = field(default_factory=list)
    failures: list = field(default_factory=list)


@dataclass
class SweepTable:
    rows: list = field(default_factory=list)
    kind: str = ""

    def __len__(self):
        return len(self.rows)

    def sizes(self):
        return list(dict.fromkeys((r.n_controllers, r.n_agents) for r in self.rows))

    def for_size(self, size) -> "SweepTable":
        return SweepTable([r for r in self.rows if (r.n_controllers, r.n_agents) == tuple(size)],
                          self.kind)

    def iterations_at(self, eps, size=None) -> float:
        rows = self.rows if size is None else self.for_size(size).rows
        vals = [r.iterations for r in rows if math.isclose(r.epsilon, eps, rel_tol=1e-12)]
        if not vals:
            raise ParameterError(f"no row with epsilon {eps}")
        return vals[0] if len(vals) == 1 else float(np.mean(vals))

    def to_records(self):
        return [asdict(r) for r in self.rows]

    def to_csv(self, path=None) -> str:
        lines = ["n_controllers,n_agents,epsilon,iterations,seeds_ok,seeds_failed"]
        for r in self.rows:
            it = "nan" if math.isnan(r.iterations) else repr(float(r.iterations))
            lines.append(f"{r.n_controllers},{r.n_agents},{r.epsilon!r},{it},"
                         f"{len(r.per_seed)},{len(r.failures)}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def table_from_traces(traces: dict, epsilons, size=(1, 1)) -> SweepTable:
    """Rows of mean first-crossing counts over ``traces`` (seed -> trace)."""
    eps = _check_epsilons(epsilons)
    table = SweepTable()
    per = {s: crossings(t, eps) for s, t in traces.items()}
    for k, e in enumerate(eps):
        ok = [per[s][k] for s in per if per[s][k] is not None]
        bad = [s for s in per if per[s][k] is None]
        mean = float(np.mean(ok)) if ok else math.nan
        table.rows.append(SweepRow(size[0], size[1], e, mean, ok, bad))
    return table


def _sweep_job(kind, size, seed, params, opts, admm):
    inst = gen_scenario(kind, size[0], size[1], params, seed)
    ref = centralized_optimum(inst)
    outcome = solve(inst, "auto", opts, admm, reference=ref)
    return outcome.trace


def sweep_epsilon(kind: str, sizes: Sequence, epsilons: Sequence, seeds: Sequence,
                  opts: BasicSolveOptions | None = None, admm: AdmmOptions | None = None,
                  params: ScenarioParams | None = None, threads: int | None = None) -> SweepTable:
    """Iterations-to-epsilon table, one solve per (size, seed).

    Each solve runs to the solver's own tolerance and every epsilon is read
    off the same trace. A failed solve is listed under ``failures`` for the
    affected rows and does not stop the sweep.
    """
    eps = _check_epsilons(epsilons)
    sizes = [tuple(int(v) for v in s) for s in sizes]
    seeds = list(seeds)
    if not sizes or not seeds:
        raise ParameterError("need at least one size and one seed")
    jobs = [(size, seed) for size in sizes for seed in seeds]
    workers = min(threads or thread_count(), len(jobs))

    def run(job):
        try:
            return _sweep_job(kind, job[0], job[1], params, opts, admm)
        except HierGameError as exc:
            log.warning("sweep %s size %s seed %s failed: %s", kind, job[0], job[1], exc)
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    table = SweepTable(kind=kind)
    for size in sizes:
        traces, errors = {}, []
        for (sz, seed), res in zip(jobs, results):
            if sz != size:
                continue
            if isinstance(res, Exception):
                errors.append(seed)
            else:
                traces[seed] = res
        part = table_from_traces(traces, eps, size)
        for row in part.rows:
            row.failures = sorted(set(row.failures) | set(errors), key=seeds.index)
        table.rows.extend(part.rows)
    return table


class LinearityFit(NamedTuple):
    slope: float
    intercept: float
    r2: float
    degenerate: bool


def fit_linearity(table) -> LinearityFit:
    """OLS of iterations on ``log10(1/eps)``.

    ``table`` is a :class:`SweepTable` (all rows are pooled; use
    :meth:`SweepTable.for_size` for one size) or a sequence of
    ``(epsilon, iterations)`` pairs. A constant iteration column has no
    defined R^2 and comes back flagged ``degenerate``.
    """
    if isinstance(table, SweepTable):
        pairs = [(r.epsilon, r.iterations) for r in table.rows if not math.isnan(r.iterations)]
    else:
        pairs = [(float(e), float(n)) for e, n in table]
    if len({e for e, _ in pairs}) < 3:
        raise ParameterError("linearity fit needs at least 3 distinct epsilon values")
    if any(e <= 0 for e, _ in pairs):
        raise ParameterError("epsilons must be > 0")
    x = np.log10(1.0 / np.array([e for e, _ in pairs]))
    y = np.array([n for _, n in pairs])
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-300:
        return LinearityFit(0.0, intercept, math.nan, True)
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    return LinearityFit(slope, intercept, 1.0 - ss_res / ss_tot, False)


# -- uncoordinated baseline ----------------------------------------------------

def euclidean_projection(inst: GameInstance, y) -> np.ndarray:
    """Closest point to ``y`` (cell order) satisfying every constraint and box."""
    y = np.asarray(y, dtype=float)
    idx = inst.cell_index
    controllers = [
        Controller(c.id, {a: Quadratic(0.5, float(y[idx[(a, c.id)]])) for a in c.task_terms},
                   c.demand_constraints)
        for c in inst.controllers
    ]
    proj = GameInstance("mlmf", controllers, list(inst.agents), inst.seed, inst.kind)
    return centralized_optimum(proj, cross_check=False).allocation.to_array(proj)


def baseline_uncoordinated(inst: GameInstance, opts: BasicSolveOptions | None = None,
                           reference: OracleResult | None = None):
    """Stand-in for play without the coordinating multipliers.

    Cells run the basic price loop as if no constraint existed; each iterate
    is then projected onto the feasible set, and the trace scores that
    projected allocation. Returns ``(Allocation, SolveTrace)``.
    """
    opts = opts or BasicSolveOptions()
    require_form(inst, "mlmf")
    check_reference(inst, reference)
    free = Layout(inst, constraints=[])
    full = Layout(inst)
    ref_values = None if reference is None else np.asarray(reference.values, dtype=float)
    theta = initial_prices(inst, free, opts.theta0)
    y = free.lo.copy()
    trace = SolveTrace(label=BASELINE_LABEL)
    for p in range(opts.max_outer):
        t0 = time.perf_counter()
        y = free.best_response(-theta, y, 0.0, y, threads=opts.threads)
        theta_next = free.g.grad(y)
        delta = float(np.max(np.abs(theta_next - theta))) if free.n else 0.0
        x = euclidean_projection(inst, y) if full.m else y
        viol = violation(full.A @ x - full.b, full.is_eq)
        trace.append(TraceRow(
            outer_iter=p,
            max_price_delta=delta,
            primal_residual=float(np.linalg.norm(viol)),
            agent_residual=float(np.linalg.norm(viol[full.family == "agent"])),
            controller_residual=float(np.linalg.norm(viol[full.family == "controller"])),
            epsilon=None if ref_values is None else
            float(np.linalg.norm(full.objective_values(x) - ref_values)),
            wall_ms=1e3 * (time.perf_counter() - t0),
            prices_hash=array_hash(theta_next),
            alloc_hash=array_hash(x),
        ))
        theta = theta_next
        if delta <= opts.tol_price:
            return Allocation.from_array(inst, x), trace
    raise NonConvergenceError(
        f"baseline prices still moving after {opts.max_outer} outer iterations", trace=trace)


# -- certificates ----------------------------------------------------------------

def nash_certificate(inst: GameInstance, allocation: Allocation, prices: PriceProfile,
                     duals: dict | None = None, points: int = 1000, cells=None) -> float:
    """Largest gain any single cell gets from a unilateral deviation.

    A cell's payoff is its incentive value with the coupling multipliers
    priced in, ``-(f + g - theta*x + (A^T lam) x)``; deviations range over a
    regular grid of ``points`` values in the cell's box plus the exact best
    response. Returns the maximum improvement (>= 0).
    """
    layout = Layout(inst)
    x = allocation.to_array(inst)
    theta = prices.to_array(inst)
    lam = np.array([float((duals or {}).get(n, 0.0)) for n in layout.names])
    lin = -theta + (layout.AT @ lam if layout.m else 0.0)
    pick = range(layout.n) if cells is None else [inst.cell_index[c] for c in cells]
    worst = 0.0
    for k in pick:
        a, c = layout.cells[k]
        psi = inst.f((a, c)) + inst.g((a, c))
        grid = np.linspace(layout.lo[k], layout.hi[k], points)
        best = argmin_shifted(psi, lin[k], 0.0, 0.0, (layout.lo[k], layout.hi[k]))
        cand = np.append(grid, best)
        vals = psi.value(cand) + lin[k] * cand
        here = float(psi.value(x[k]) + lin[k] * x[k])
        worst = max(worst, here - float(np.min(vals)))
    return worst


def individual_rationality(inst: GameInstance, allocation: Allocation, prices: PriceProfile) -> dict:
    return {a.id: agent_utility(inst, allocation, prices, a.id) for a in inst.agents}

"""Extended forms: the price loop with an ADMM inner loop.

With one controller the coupling constraints tie different agents together
and the controller owns their multipliers. With several controllers the
agents additionally own multipliers on their capacity constraints, which tie
the resources they give to different controllers. Both sides use the same
inner iteration; at fixed prices it returns a feasible allocation, and the
outer loop then resets every cell price to the agent's marginal cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ._layout import Layout
from .admm import AdmmOptions, DualState, check_feasible, run_admm
from .basic import BasicSolveOptions, price_loop, require_form
from .errors import InfeasibleError, NonConvergenceError
from .model import Allocation, GameInstance, PriceProfile
from .trace import SolveTrace


@dataclass(frozen=True)
class TwoSidedDuals:
    controller_duals: dict = field(default_factory=dict)
    agent_duals: dict = field(default_factory=dict)

    def merged(self) -> dict:
        return {**self.controller_duals, **self.agent_duals}


class CoupledResult(NamedTuple):
    allocation: Allocation
    prices: PriceProfile
    duals: DualState
    trace: SolveTrace


class MlmfResult(NamedTuple):
    allocation: Allocation
    prices: PriceProfile
    duals: TwoSidedDuals
    trace: SolveTrace


def _solve_nested(inst, opts, admm_opts, reference, label=""):
    layout = Layout(inst)
    try:
        check_feasible(layout.lo, layout.hi, layout.A, layout.b, layout.is_eq)
    except InfeasibleError as exc:
        raise InfeasibleError(str(exc), trace=SolveTrace(label=label)) from None
    state = {"lam": np.zeros(layout.m), "theta": None}

    def inner(theta, x_prev):
        run_opts = admm_opts
        if admm_opts.inexact_ratio is not None and state["theta"] is not None:
            step = float(np.max(np.abs(theta - state["theta"]), initial=0.0))
            scale = min(1.0, max(admm_opts.inexact_ratio * step, admm_opts.tol_floor)
                        / admm_opts.tol_primal)
            run_opts = replace(admm_opts, tol_primal=admm_opts.tol_primal * scale,
                               tol_dual=admm_opts.tol_dual * scale)
        state["theta"] = theta

        def solve_cells(linear, center, weight, guess):
            return layout.best_response(linear - theta, center, weight, guess, threads=opts.threads)

        try:
            x, lam, history, fam = run_admm(solve_cells, layout.A, layout.b, layout.is_eq,
                                            x_prev, state["lam"], run_opts, families=layout.family)
        except NonConvergenceError as exc:
            # a tightened solve that still meets the caller's tolerance is good enough
            h = exc.trace
            if run_opts is admm_opts or not (h.primal[-1] <= admm_opts.tol_primal
                                             and h.dual[-1] <= admm_opts.tol_dual):
                raise
            history = h
            x, lam, fam = exc.last
        state["lam"] = lam
        fam_lam = {f: float(np.linalg.norm(lam[layout.family == f])) for f in ("agent", "controller")}
        return x, {
            "agent_dual": fam_lam["agent"],
            "controller_dual": fam_lam["controller"],
            "inner_iters": len(history),
            "primal": history.primal[-1],
            "agent": fam.get("agent", 0.0),
            "controller": fam.get("controller", 0.0),
        }

    x, theta, trace, _ = price_loop(inst, layout, inner, opts, reference, label=label)
    lam = state["lam"]
    ctrl = {n: float(v) for n, v, f in zip(layout.names, lam, layout.family) if f == "controller"}
    agent = {n: float(v) for n, v, f in zip(layout.names, lam, layout.family) if f == "agent"}
    return (Allocation.from_array(inst, x), PriceProfile.from_array(inst, theta), ctrl, agent, trace)


def solve_single_controller_coupled(inst: GameInstance, opts: BasicSolveOptions | None = None,
                                    admm: AdmmOptions | None = None, reference=None) -> CoupledResult:
    """One controller, agents coupled by controller-owned linear constraints.

    At exit the allocation is feasible to ``admm.tol_primal`` and the prices
    equal marginal costs, so the allocation satisfies the KKT system of
    minimizing the controller objective under the coupling constraints.
    """
    opts = opts or BasicSolveOptions()
    admm = admm or AdmmOptions()
    require_form(inst, "single-controller-coupled")
    alloc, prices, ctrl, _, trace = _solve_nested(inst, opts, admm, reference)
    return CoupledResult(alloc, prices, DualState(ctrl), trace)


def solve_mlmf(inst: GameInstance, opts: BasicSolveOptions | None = None,
               admm: AdmmOptions | None = None, reference=None) -> MlmfResult:
    """Several controllers and agents with multipliers on both sides.

    The fixed point minimizes the sum of all controller objectives subject
    to both constraint families (the hierarchical social optimum).
    """
    opts = opts or BasicSolveOptions()
    admm = admm or AdmmOptions()
    require_form(inst, "mlmf")
    alloc, prices, ctrl, agent, trace = _solve_nested(inst, opts, admm, reference)
    return MlmfResult(alloc, prices, TwoSidedDuals(ctrl, agent), trace)

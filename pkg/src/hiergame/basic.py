"""Price loop for one controller and uncongested agents.

Each round every agent maximizes its incentive function
``-f(x) + theta*x - g(x)`` against the current price, then the controller
resets each price to the agent's marginal cost ``g'(x)``. The loop stops once
no price moves by more than ``tol_price``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from ._layout import Layout
from .errors import InstanceMismatchError, NonConvergenceError, ParameterError, ValidationError
from .model import Allocation, GameInstance, PriceProfile, validate_instance
from .scalar import Box, ScalarFn, argmin_shifted
from .trace import SolveTrace, TraceRow, array_hash


@dataclass(frozen=True)
class BasicSolveOptions:
    """Outer-loop settings.

    ``theta0`` is ``"marginal_cost"`` (start every price at ``g'(0)``) or a
    mapping cell -> explicit starting price.
    """

    theta0: str | Mapping = "marginal_cost"
    tol_price: float = 1e-8
    max_outer: int = 10_000
    threads: int | None = None

    def __post_init__(self):
        if not self.tol_price > 0:
            raise ParameterError("tol_price must be > 0")
        if self.max_outer < 1:
            raise ParameterError("max_outer must be >= 1")
        if isinstance(self.theta0, str) and self.theta0 != "marginal_cost":
            raise ParameterError("theta0 must be 'marginal_cost' or a mapping of prices")


class BasicResult(NamedTuple):
    allocation: Allocation
    prices: PriceProfile
    trace: SolveTrace


def agent_best_response(f: ScalarFn, g: ScalarFn, theta: float, box: Box) -> float:
    """Maximizer of ``-f(x) + theta*x - g(x)`` over ``box``."""
    return argmin_shifted(f + g, -theta, 0.0, 0.0, box)


def price_update(g: ScalarFn, x: float) -> float:
    """Marginal cost ``g'(x)``."""
    return float(g.grad(x))


def initial_prices(inst, layout, theta0):
    if isinstance(theta0, str):
        return layout.g.grad(np.zeros(layout.n))
    try:
        return np.array([float(theta0[c]) for c in layout.cells])
    except KeyError as exc:
        raise ParameterError(f"theta0 is missing cell {exc.args[0]}") from None


def check_reference(inst, reference):
    if reference is not None and reference.instance_id != inst.instance_id:
        raise InstanceMismatchError(
            f"reference is for instance {reference.instance_id}, not {inst.instance_id}")


def require_form(inst: GameInstance, form: str):
    report = validate_instance(inst)
    if inst.form != form:
        report.errors.insert(0, f"solver expects form {form!r} but instance form is {inst.form!r}")
    if not report.ok:
        raise ValidationError(report)
    return report


def price_loop(inst, layout, inner, opts: BasicSolveOptions, reference=None, label=""):
    """Shared outer iteration of all three game forms.

    ``inner(theta, x_prev)`` returns the allocation answering prices
    ``theta`` together with a dict of inner-loop statistics.
    """
    check_reference(inst, reference)
    ref_values = None if reference is None else np.asarray(reference.values, dtype=float)
    theta = initial_prices(inst, layout, opts.theta0)
    x = layout.lo.copy()
    trace = SolveTrace(label=label)
    for p in range(opts.max_outer):
        t0 = time.perf_counter()
        try:
            x, info = inner(theta, x)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"outer iteration {p}: {exc}", trace=trace,
                                      inner_history=exc.trace) from exc
        theta_next = layout.g.grad(x)
        delta = float(np.max(np.abs(theta_next - theta))) if layout.n else 0.0
        eps = None
        if ref_values is not None:
            eps = float(np.linalg.norm(layout.objective_values(x) - ref_values))
        trace.append(TraceRow(
            outer_iter=p,
            max_price_delta=delta,
            inner_iters=info.get("inner_iters", 1),
            primal_residual=info.get("primal", 0.0),
            agent_residual=info.get("agent", 0.0),
            controller_residual=info.get("controller", 0.0),
            agent_dual_norm=info.get("agent_dual", 0.0),
            controller_dual_norm=info.get("controller_dual", 0.0),
            epsilon=eps,
            wall_ms=1e3 * (time.perf_counter() - t0),
            prices_hash=array_hash(theta_next),
            alloc_hash=array_hash(x),
        ))
        theta = theta_next
        if delta <= opts.tol_price:
            return x, theta, trace, info
    raise NonConvergenceError(
        f"prices still moving after {opts.max_outer} outer iterations", trace=trace)


def solve_basic(inst: GameInstance, opts: BasicSolveOptions | None = None, reference=None) -> BasicResult:
    """Run the price loop on a basic-form instance.

    Parameters
    ----------
    inst : GameInstance
        Instance with ``form == "basic"``.
    opts : BasicSolveOptions, optional
    reference : OracleResult, optional
        When given, every trace row records epsilon against it.

    Returns
    -------
    BasicResult
        ``(allocation, prices, trace)``; prices are the marginal costs at the
        returned allocation.
    """
    opts = opts or BasicSolveOptions()
    require_form(inst, "basic")
    layout = Layout(inst)

    def inner(theta, x_prev):
        x = layout.best_response(-theta, x_prev, 0.0, x_prev, threads=opts.threads)
        return x, {"inner_iters": 1}

    x, theta, trace, _ = price_loop(inst, layout, inner, opts, reference)
    return BasicResult(Allocation.from_array(inst, x), PriceProfile.from_array(inst, theta), trace)

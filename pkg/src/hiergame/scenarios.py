"""Seeded instance generators for the four wireless scenarios.

All draws are i.i.d. per cell with size-independent distributions, so
varying ``n_controllers``/``n_agents`` changes only the network size.

crowd_sensing
    quadratic model-fitting objectives, power-for-rate costs, a demand floor
    per controller (30% of its expected unconstrained supply) and a capacity
    per agent (150% of its expected share of demand), so capacities bind
    and demands stay slack.
caching
    as crowd sensing but only agent storage capacities, set to bind.
vehicular
    short contact windows (tight boxes) and one relay-capacity constraint
    per controller.
fog
    each fog node serves a few nearby controllers (sparse cells), small
    per-cell boxes and small tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._layout import Layout
from .admm import check_feasible
from .errors import InfeasibleError, ParameterError
from .model import Agent, Controller, GameInstance, LinearConstraint, validate_instance
from .scalar import LN2, Box, InvShannon, LogConcaveCost, Quadratic

KINDS = ("crowd_sensing", "caching", "vehicular", "fog")


@dataclass(frozen=True)
class ScenarioParams:
    """Distribution knobs; every range is a uniform ``(low, high)``."""

    coupling: bool = True
    out_of_regime: bool = False
    curvature: tuple = (0.75, 1.25)
    target: tuple = (1.0, 3.0)
    cost_ratio: tuple = (0.8, 1.2)
    bandwidth: tuple = (0.5, 2.0)
    box_hi: float = 4.0
    # demand: share of a controller's expected unconstrained supply;
    # capacity: margin over an agent's expected share of that demand
    demand_share: float = 0.3
    capacity_margin: float = 1.5
    storage_factor: tuple = (0.6, 0.9)
    relay_factor: tuple = (0.6, 0.9)
    window: tuple = (0.5, 2.0)
    fog_links: int = 2
    fog_target: tuple = (0.2, 1.0)
    fog_box_hi: float = 1.0
    log_alpha: tuple = (0.5, 1.5)
    log_beta: tuple = (0.2, 1.0)
    per_agent_units: bool = True

    def __post_init__(self):
        for name in ("curvature", "target", "cost_ratio", "bandwidth", "storage_factor",
                     "relay_factor", "window",
                     "fog_target", "log_alpha", "log_beta"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi and np.isfinite(hi)):
                raise ParameterError(f"{name} must be a range 0 < low <= high, got {(lo, hi)}")
        if not (self.demand_share > 0 and self.capacity_margin > 0):
            raise ParameterError("demand_share and capacity_margin must be > 0")
        if not (self.box_hi > 0 and self.fog_box_hi > 0):
            raise ParameterError("box sizes must be positive")
        if self.fog_links < 1:
            raise ParameterError("fog_links must be >= 1")


def gen_scenario(kind: str, n_controllers: int, n_agents: int,
                 params: ScenarioParams | None = None, seed: int = 0) -> GameInstance:
    """Draw one instance of ``kind``; identical arguments give identical instances."""
    if kind not in KINDS:
        raise ParameterError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    if n_controllers < 1 or n_agents < 1:
        raise ParameterError("need at least one controller and one agent")
    params = params or ScenarioParams()
    rng = np.random.default_rng(seed)
    cids = [f"c{j}" for j in range(n_controllers)]
    aids = [f"a{i}" for i in range(n_agents)]

    links = _links(kind, n_controllers, n_agents, params, rng)
    task = {c: {} for c in cids}
    cost = {a: {} for a in aids}
    boxes = {a: {} for a in aids}
    target_range = params.fog_target if kind == "fog" else params.target
    # one global scale leaves every best response unchanged; it only fixes the
    # unit of F (per member of a typical controller) so that epsilon does not
    # grow with the network
    unit = n_controllers / sum(map(len, links)) if params.per_agent_units else 1.0
    for i, a in enumerate(aids):
        for j in links[i]:
            c = cids[j]
            curv = rng.uniform(*params.curvature)
            target = rng.uniform(*target_range)
            task[c][a] = Quadratic(float(unit * curv), float(target), 0.0)
            if params.out_of_regime:
                cost[a][c] = LogConcaveCost(float(unit * rng.uniform(*params.log_alpha)),
                                            float(rng.uniform(*params.log_beta)))
            else:
                w = float(rng.uniform(*params.bandwidth))
                kappa = rng.uniform(*params.cost_ratio)
                cost[a][c] = InvShannon(_noise_power(kappa * 2.0 * unit * curv, target, w), w)
            if kind == "vehicular":
                hi = float(rng.uniform(*params.window))
            elif kind == "fog":
                hi = params.fog_box_hi
            else:
                hi = params.box_hi
            boxes[a][c] = Box(0.0, hi)

    ctrl_cons = {c: [] for c in cids}
    agent_cons = {a: [] for a in aids}
    if params.coupling:
        _constraints(kind, cids, aids, task, boxes, params, rng, ctrl_cons, agent_cons)

    has_cons = any(ctrl_cons.values()) or any(agent_cons.values())
    if n_controllers > 1:
        form = "mlmf"
    else:
        form = "single-controller-coupled" if has_cons else "basic"
    inst = GameInstance(
        form=form,
        controllers=[Controller(c, task[c], tuple(ctrl_cons[c])) for c in cids],
        agents=[Agent(a, cost[a], boxes[a], tuple(agent_cons[a])) for a in aids],
        seed=seed,
        kind=kind,
    )
    report = validate_instance(inst)
    if not report.ok:
        raise ParameterError("generated instance is invalid: " + "; ".join(report.errors))
    if has_cons:
        layout = Layout(inst)
        try:
            slack = check_feasible(layout.lo, layout.hi, layout.A, layout.b, layout.is_eq)
        except InfeasibleError:
            raise ParameterError("parameters give an infeasible constraint system") from None
        if slack <= 1e-9:
            raise ParameterError("parameters give a constraint system with no interior point")
    return inst


def _links(kind, nc, na, params, rng):
    if kind != "fog":
        return [list(range(nc)) for _ in range(na)]
    k = min(params.fog_links, nc)
    out = []
    for i in range(na):
        home = i % nc
        others = [j for j in range(nc) if j != home]
        extra = rng.choice(others, size=k - 1, replace=False) if k > 1 else []
        out.append(sorted([home, *map(int, extra)]))
    return out


def _constraints(kind, cids, aids, task, boxes, params, rng, ctrl_cons, agent_cons):
    mean_target = float(np.mean(params.fog_target if kind == "fog" else params.target))
    if kind in ("crowd_sensing", "fog"):
        for c in cids:
            members = list(task[c])
            if len(members) < 2:
                continue
            demand = params.demand_share * mean_target
            coef = _row_scale(params, members)
            ctrl_cons[c].append(LinearConstraint(f"demand:{c}", [((a, c), -coef) for a in members],
                                                 -float(demand * coef * len(members)), "le"))
    if kind in ("crowd_sensing", "fog", "caching"):
        for a in aids:
            served = list(boxes[a])
            if len(served) < 2:
                continue
            if kind == "caching":
                cap = rng.uniform(*params.storage_factor) * mean_target
            else:
                cap = params.capacity_margin * params.demand_share * mean_target
            coef = _row_scale(params, served)
            agent_cons[a].append(LinearConstraint(f"capacity:{a}", [((a, c), coef) for c in served],
                                                  float(cap * coef * len(served)), "le"))
    if kind == "vehicular":
        for c in cids:
            members = list(task[c])
            if len(members) < 2:
                continue
            reach = sum(min(mean_target, boxes[a][c].hi) for a in members)
            relay = rng.uniform(*params.relay_factor) * reach
            coef = _row_scale(params, members)
            ctrl_cons[c].append(LinearConstraint(f"relay:{c}", [((a, c), coef) for a in members],
                                                 float(relay * coef), "le"))


def _noise_power(curvature, x, w):
    # n0 that gives the power cost this second derivative at x
    return float(curvature * (w / LN2) ** 2 * 2.0 ** (-x / w))


def _row_scale(params, members):
    # rows read as averages, which keeps the inner loop's conditioning fixed
    return 1.0 / len(members) if params.per_agent_units else 1.0

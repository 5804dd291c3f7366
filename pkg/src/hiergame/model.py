"""Game instances, allocations, prices and the accuracy metric.

A *cell* is one (agent, controller) pair, written ``(agent_id, controller_id)``.
Each cell carries the controller's task term ``f``, the agent's cost term
``g``, a box and a scalar resource level.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import InstanceMismatchError, ParameterError
from .scalar import Box, LogConcaveCost, Sum, fn_from_dict

FORMS = ("basic", "single-controller-coupled", "mlmf")

Cell = tuple  # (agent_id, controller_id)


@dataclass(frozen=True)
class LinearConstraint:
    """``sum(coef * x[cell]) <= rhs`` (``kind="le"``) or ``== rhs`` (``kind="eq"``)."""

    name: str
    terms: tuple
    rhs: float
    kind: str = "le"

    def __post_init__(self):
        terms = tuple((tuple(cell) if isinstance(cell, list) else cell, float(coef))
                      for cell, coef in self.terms)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "rhs", float(self.rhs))
        if self.kind not in ("le", "eq"):
            raise ParameterError(f"constraint {self.name}: kind must be 'le' or 'eq'")
        if not any(coef != 0.0 for _, coef in terms):
            raise ParameterError(f"constraint {self.name}: needs a nonzero coefficient")
        if not np.isfinite(self.rhs) or not all(np.isfinite(c) for _, c in terms):
            raise ParameterError(f"constraint {self.name}: coefficients and rhs must be finite")

    @property
    def cells(self):
        return [cell for cell, _ in self.terms]

    def residual(self, x: Mapping) -> float:
        """``a.x - b`` (positive means violated for ``le``)."""
        return sum(coef * x[cell] for cell, coef in self.terms) - self.rhs

    def to_dict(self, owner, owner_id):
        return {
            "name": self.name,
            "owner": owner,
            "owner_id": owner_id,
            "kind": self.kind,
            "rhs": self.rhs,
            "terms": [[cell[0], cell[1], coef] for cell, coef in self.terms],
        }


@dataclass(frozen=True)
class Controller:
    id: str
    task_terms: dict = field(default_factory=dict)  # agent id -> f
    demand_constraints: tuple = ()


@dataclass(frozen=True)
class Agent:
    id: str
    cost_terms: dict = field(default_factory=dict)  # controller id -> g
    boxes: dict = field(default_factory=dict)  # controller id -> Box
    capacity_constraints: tuple = ()


@dataclass(frozen=True, eq=False)
class GameInstance:
    """Controllers, agents, per-cell terms and both constraint families."""

    form: str
    controllers: tuple
    agents: tuple
    seed: int | None = None
    kind: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "controllers", tuple(self.controllers))
        object.__setattr__(self, "agents", tuple(self.agents))

    @cached_property
    def cells(self) -> list:
        """Cells in controller-major order (the order of every internal array)."""
        return [(a.id, c.id) for c in self.controllers for a in self.agents if a.id in c.task_terms]

    @cached_property
    def cell_index(self) -> dict:
        return {cell: k for k, cell in enumerate(self.cells)}

    @cached_property
    def _controllers_by_id(self):
        return {c.id: c for c in self.controllers}

    @cached_property
    def _agents_by_id(self):
        return {a.id: a for a in self.agents}

    def controller(self, cid):
        return self._controllers_by_id[cid]

    def agent(self, aid):
        return self._agents_by_id[aid]

    def f(self, cell):
        return self.controller(cell[1]).task_terms[cell[0]]

    def g(self, cell):
        return self.agent(cell[0]).cost_terms[cell[1]]

    def box(self, cell):
        return self.agent(cell[0]).boxes[cell[1]]

    @property
    def controller_constraints(self):
        return [k for c in self.controllers for k in c.demand_constraints]

    @property
    def agent_constraints(self):
        return [k for a in self.agents for k in a.capacity_constraints]

    @property
    def constraints(self):
        """Controller-side constraints first, then agent-side ones."""
        return self.controller_constraints + self.agent_constraints

    def to_dict(self) -> dict:
        cons = [k.to_dict("controller", c.id) for c in self.controllers for k in c.demand_constraints]
        cons += [k.to_dict("agent", a.id) for a in self.agents for k in a.capacity_constraints]
        out = {
            "form": self.form,
            "controllers": [
                {"id": c.id, "task_terms": {aid: fn.to_dict() for aid, fn in c.task_terms.items()}}
                for c in self.controllers
            ],
            "agents": [
                {
                    "id": a.id,
                    "cost_terms": {cid: fn.to_dict() for cid, fn in a.cost_terms.items()},
                    "boxes": {cid: b.to_list() for cid, b in a.boxes.items()},
                }
                for a in self.agents
            ],
            "constraints": cons,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        if self.kind is not None:
            out["kind"] = self.kind
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @cached_property
    def instance_id(self) -> str:
        """Content hash; two instances with equal JSON share an id."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "GameInstance":
        try:
            cons = {}
            for k, raw in enumerate(data.get("constraints", [])):
                con = LinearConstraint(
                    name=raw.get("name", f"k{k}"),
                    terms=[((t[0], t[1]), t[2]) for t in raw["terms"]],
                    rhs=raw["rhs"],
                    kind=raw.get("kind", "le"),
                )
                owner = raw["owner"]
                if owner not in ("controller", "agent"):
                    raise ParameterError(f"constraint {con.name}: owner must be controller or agent")
                cons.setdefault((owner, raw["owner_id"]), []).append(con)
            controllers = [
                Controller(
                    id=c["id"],
                    task_terms={aid: fn_from_dict(fn) for aid, fn in c.get("task_terms", {}).items()},
                    demand_constraints=tuple(cons.pop(("controller", c["id"]), ())),
                )
                for c in data["controllers"]
            ]
            agents = [
                Agent(
                    id=a["id"],
                    cost_terms={cid: fn_from_dict(fn) for cid, fn in a.get("cost_terms", {}).items()},
                    boxes={cid: Box(*b) for cid, b in a.get("boxes", {}).items()},
                    capacity_constraints=tuple(cons.pop(("agent", a["id"]), ())),
                )
                for a in data["agents"]
            ]
            form = data["form"]
        except (KeyError, TypeError, IndexError) as exc:
            raise ParameterError(f"malformed instance document: {exc!r}") from None
        if cons:
            raise ParameterError(f"constraints with unknown owners: {sorted(cons)}")
        return cls(form=form, controllers=controllers, agents=agents,
                   seed=data.get("seed"), kind=data.get("kind"))


def save_instance(inst: GameInstance, path) -> None:
    Path(path).write_text(inst.to_json())


def load_instance(path) -> GameInstance:
    return GameInstance.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Allocation:
    """Resource level per cell."""

    x: dict

    @classmethod
    def from_array(cls, inst, values):
        return cls({cell: float(v) for cell, v in zip(inst.cells, values)})

    def to_array(self, inst) -> np.ndarray:
        try:
            return np.array([self.x[cell] for cell in inst.cells], dtype=float)
        except KeyError as exc:
            raise ParameterError(f"incomplete allocation: missing cell {exc.args[0]}") from None

    def __getitem__(self, cell):
        return self.x[cell]

    def to_records(self):
        return [{"agent": a, "controller": c, "x": v} for (a, c), v in self.x.items()]


@dataclass(frozen=True)
class PriceProfile:
    """Price per unit resource per cell."""

    theta: dict

    @classmethod
    def from_array(cls, inst, values):
        return cls({cell: float(v) for cell, v in zip(inst.cells, values)})

    def to_array(self, inst) -> np.ndarray:
        try:
            return np.array([self.theta[cell] for cell in inst.cells], dtype=float)
        except KeyError as exc:
            raise ParameterError(f"incomplete price profile: missing cell {exc.args[0]}") from None

    def __getitem__(self, cell):
        return self.theta[cell]


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_instance(inst: GameInstance) -> ValidationReport:
    """Collect every form, structure and convexity violation of ``inst``."""
    rep = ValidationReport()
    err = rep.errors.append

    if inst.form not in FORMS:
        err(f"unknown form {inst.form!r}; expected one of {FORMS}")
    cids = [c.id for c in inst.controllers]
    aids = [a.id for a in inst.agents]
    if len(set(cids)) != len(cids):
        err("duplicate controller ids")
    if len(set(aids)) != len(aids):
        err("duplicate agent ids")
    cset, aset = set(cids), set(aids)

    n_ctrl = len(inst.controllers)
    ctrl_cons = inst.controller_constraints
    agent_cons = inst.agent_constraints
    if inst.form == "basic":
        if n_ctrl != 1:
            err("basic form needs exactly one controller")
        if ctrl_cons or agent_cons:
            err("basic form admits no coupling constraints")
    elif inst.form == "single-controller-coupled":
        if n_ctrl != 1:
            err("single-controller-coupled form needs exactly one controller")
        if agent_cons:
            err("single-controller-coupled form admits only agent-coupling (controller-owned) constraints")
    elif inst.form == "mlmf":
        if n_ctrl < 1:
            err("mlmf form needs at least one controller")

    for c in inst.controllers:
        for aid, fn in c.task_terms.items():
            if aid not in aset:
                err(f"controller {c.id} has a task term for unknown agent {aid}")
            if not fn.is_convex:
                err(f"controller term not convex: cell ({aid}, {c.id})")
    for a in inst.agents:
        for cid, fn in a.cost_terms.items():
            if cid not in cset:
                err(f"agent {a.id} has a cost term for unknown controller {cid}")
                continue
            if a.id not in inst.controller(cid).task_terms:
                err(f"agent cost term without task term: cell ({a.id}, {cid})")
            parts = fn.terms if isinstance(fn, Sum) else (fn,)
            if any(isinstance(t, LogConcaveCost) for t in parts):
                rep.warnings.append(
                    f"agent cost outside guaranteed-convergence regime (log-concave): cell ({a.id}, {cid})")
            elif not fn.is_convex:
                err(f"agent cost not convex: cell ({a.id}, {cid})")
        for cid in a.boxes:
            if cid not in cset:
                err(f"agent {a.id} has a box for unknown controller {cid}")

    for a_id, c_id in inst.cells:
        agent = inst.agent(a_id)
        if c_id not in agent.cost_terms:
            err(f"cell ({a_id}, {c_id}) has a task term but no cost term")
        if c_id not in agent.boxes:
            err(f"cell ({a_id}, {c_id}) has no box")

    known = set(inst.cells)
    names = [k.name for k in inst.constraints]
    if len(set(names)) != len(names):
        err("duplicate constraint names")
    for c in inst.controllers:
        for k in c.demand_constraints:
            _check_constraint(k, known, err)
            if any(cell[1] != c.id for cell in k.cells):
                err(f"constraint {k.name}: controller {c.id} may only constrain its own cells")
            if inst.form != "basic" and len({cell[0] for cell in k.cells}) < 2:
                err(f"constraint {k.name}: agent-coupling constraint must span at least 2 agents")
    for a in inst.agents:
        for k in a.capacity_constraints:
            _check_constraint(k, known, err)
            if any(cell[0] != a.id for cell in k.cells):
                err(f"constraint {k.name}: agent {a.id} may only constrain its own cells")
            if inst.form != "basic" and len({cell[1] for cell in k.cells}) < 2:
                err(f"constraint {k.name}: controller-coupling constraint must span at least 2 controllers")
    return rep


def _check_constraint(k, known, err):
    for cell in k.cells:
        if cell not in known:
            err(f"constraint {k.name} references cell {cell} without both task and cost terms")


def objective_values(inst: GameInstance, alloc: Allocation) -> np.ndarray:
    """Per-controller objective ``F_j = sum_i f_ij(x_ij)``, in controller order."""
    out = np.zeros(len(inst.controllers))
    for j, c in enumerate(inst.controllers):
        for a in inst.agents:
            if a.id not in c.task_terms:
                continue
            try:
                out[j] += float(c.task_terms[a.id].value(alloc.x[(a.id, c.id)]))
            except KeyError:
                raise ParameterError(f"incomplete allocation: missing cell ({a.id}, {c.id})") from None
    return out


def epsilon(inst: GameInstance, alloc: Allocation, reference) -> float:
    """Euclidean distance between achieved and reference controller objectives."""
    if reference.instance_id != inst.instance_id:
        raise InstanceMismatchError(
            f"reference is for instance {reference.instance_id}, not {inst.instance_id}")
    gap = objective_values(inst, alloc) - np.asarray(reference.values, dtype=float)
    return float(np.linalg.norm(gap))


def agent_utility(inst: GameInstance, alloc: Allocation, prices: PriceProfile, agent_id) -> float:
    """``sum_j (theta_ij * x_ij - g_ij(x_ij))`` over the agent's cells."""
    agent = inst.agent(agent_id)
    total = 0.0
    for c in inst.controllers:
        if c.id not in agent.cost_terms:
            continue
        cell = (agent_id, c.id)
        try:
            x, th = alloc.x[cell], prices.theta[cell]
        except KeyError:
            raise ParameterError(f"incomplete allocation or prices at cell {cell}") from None
        total += th * x - float(agent.cost_terms[c.id].value(x))
    return total

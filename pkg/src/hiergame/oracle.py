"""Centralized reference solver and KKT verifier.

The oracle minimizes the total controller objective ``sum_j F_j`` under both
constraint families and the boxes. It works on the Lagrangian dual, whose
only constraints are ``mu >= 0`` on inequality rows, so projection is exact:

    maximize  D(mu) = sum_k min_{x in box_k} [f_k(x) + (A^T mu)_k x] - b.mu

``D`` is differentiable with gradient ``A x(mu) - b`` whenever every ``f_k``
is strictly convex; cells with flat objectives get a proximal-point outer
loop. The maximization is a projected Newton method on ``mu`` (the reduced
dual Hessian is a small dense matrix), falling back to a projected-gradient
step of size ``1/L`` whenever the Newton step fails to make progress. None
of this shares code with the game solvers beyond the scalar minimizer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._layout import Layout
from .admm import check_feasible
from .errors import ConvexityError, HierGameError, NonConvergenceError, ParameterError
from .model import Allocation, GameInstance
from .scalar import argmin_shifted


@dataclass
class OracleResult:
    instance_id: str
    allocation: Allocation
    values: np.ndarray
    multipliers: dict = field(default_factory=dict)
    iterations: int = 0
    grid_objective: float | None = None

    @property
    def total(self) -> float:
        return float(np.sum(self.values))

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "values": [float(v) for v in self.values],
            "total": self.total,
            "allocation": self.allocation.to_records(),
            "multipliers": dict(self.multipliers),
            "iterations": self.iterations,
            "grid_objective": self.grid_objective,
        }


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    feasibility: float
    complementarity: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.stationarity, self.feasibility, self.complementarity) <= self.tol

    def to_dict(self):
        return {"stationarity": self.stationarity, "feasibility": self.feasibility,
                "complementarity": self.complementarity, "tol": self.tol, "passed": self.passed}


def _strong_convexity(layout):
    m = np.empty(layout.n)
    for idx, fn in layout.f.groups:
        lo_h, hi_h = fn.hess(layout.lo[idx]), fn.hess(layout.hi[idx])
        m[idx] = np.minimum(lo_h, hi_h)
    return m


def _dual_solve(layout, center, delta, mu0, tol, max_iter=1000):
    """Projected Newton ascent on the dual, with a projected-gradient fallback."""
    A, AT, b, is_eq = layout.A, layout.AT, layout.b, layout.is_eq
    lo, hi = layout.lo, layout.hi
    guess = center.copy()

    def primal(mu):
        lin = AT @ mu
        x = np.empty(layout.n)
        for idx, fn in layout.f.groups:
            x[idx] = argmin_shifted(fn, lin[idx], center[idx], delta, (lo[idx], hi[idx]),
                                    x0=guess[idx])
        return x

    def evaluate(mu):
        x = primal(mu)
        r = A @ x - b
        val = float(np.sum(layout.f.value(x)) + mu @ r + 0.5 * delta * np.sum((x - center) ** 2))
        opt = np.where(is_eq | (mu > 0), np.abs(r), np.maximum(r, 0.0))
        return x, r, val, float(np.max(opt, initial=0.0))

    m_min = max(float(np.min(_strong_convexity(layout)) + delta), 1e-12)
    step_pg = m_min / max(_norm2_sq(A), 1e-300)
    mu = np.where(is_eq, mu0, np.maximum(mu0, 0.0))
    x, r, val, opt = evaluate(mu)
    for it in range(max_iter):
        if opt <= tol:
            return x, mu, it
        guess = x
        h = np.empty(layout.n)
        for idx, fn in layout.f.groups:
            h[idx] = fn.hess(x[idx])
        h += delta
        margin = 1e-12 * np.maximum(1.0, hi - lo)
        free_cells = (x > lo + margin) & (x < hi - margin) & (h > 0)
        free_rows = is_eq | (mu > 0) | (r > 0)
        d = np.zeros(layout.m)
        if np.any(free_rows) and np.any(free_cells):
            sub = A[free_rows][:, free_cells]
            K = (sub.multiply(1.0 / h[free_cells]) @ sub.T).toarray()
            K += 1e-12 * max(1.0, float(np.trace(K)) / K.shape[0]) * np.eye(K.shape[0])
            d[free_rows] = np.linalg.lstsq(K, r[free_rows], rcond=None)[0]
        best = None
        t = 1.0
        for _ in range(40 if np.any(d) else 0):
            cand = np.where(is_eq, mu + t * d, np.maximum(mu + t * d, 0.0))
            xc, rc, vc, oc = evaluate(cand)
            moved = float(r @ (cand - mu))
            if moved > 0 and vc >= val + 1e-4 * moved or oc < 0.5 * opt:
                best = (cand, xc, rc, vc, oc)
                break
            t *= 0.5
        if best is None:
            # gradient step, doubled while the dual keeps rising; this also
            # crosses flat regions where every cell sits on a bound
            t = step_pg
            for _ in range(60):
                cand = np.where(is_eq, mu + t * r, np.maximum(mu + t * r, 0.0))
                trial = (cand, *evaluate(cand))
                if best is not None and trial[3] <= best[3]:
                    break
                best = trial
                t *= 2.0
        mu, x, r, val, opt = best
    raise NonConvergenceError("oracle dual iteration did not reach the requested tolerance")


def _norm2_sq(A):
    if A.shape[0] == 0:
        return 0.0
    if min(A.shape) <= 2:
        return float(np.linalg.norm(A.toarray(), 2) ** 2)
    from scipy.sparse.linalg import svds
    try:
        s = svds(A, k=1, return_singular_vectors=False, random_state=0)
        return float(s[0] ** 2) * (1 + 1e-9)
    except Exception:
        return float(np.linalg.norm(A.toarray(), 2) ** 2)


def centralized_optimum(inst: GameInstance, tol: float = 1e-10, cross_check: bool = True,
                        max_prox: int = 10_000) -> OracleResult:
    """Minimize ``sum_j F_j`` subject to every constraint and box.

    Raises
    ------
    InfeasibleError
        If the constraints admit no point inside the boxes.
    ConvexityError
        If some controller term is not convex on its box.
    NonConvergenceError
        If the dual iteration stalls above ``tol``.
    """
    layout = Layout(inst)
    m_f = _strong_convexity(layout)
    if np.any(m_f < -1e-12):
        raise ConvexityError("oracle needs convex controller terms")
    check_feasible(layout.lo, layout.hi, layout.A, layout.b, layout.is_eq)
    iters = 0
    mu = np.zeros(layout.m)
    if layout.m == 0:
        x = np.empty(layout.n)
        for idx, fn in layout.f.groups:
            x[idx] = argmin_shifted(fn, 0.0, 0.0, 0.0, (layout.lo[idx], layout.hi[idx]))
    elif np.all(m_f > 1e-12):
        x, mu, iters = _dual_solve(layout, np.zeros(layout.n), 0.0, mu, tol)
    else:
        x = layout.lo.copy()
        for _ in range(max_prox):
            x_new, mu, k = _dual_solve(layout, x, 1.0, mu, tol)
            iters += k
            done = np.max(np.abs(x_new - x)) <= tol
            x = x_new
            if done:
                break
        else:
            raise NonConvergenceError("oracle proximal-point loop did not settle")

    result = OracleResult(
        instance_id=inst.instance_id,
        allocation=Allocation.from_array(inst, x),
        values=layout.objective_values(x),
        multipliers={n: float(v) for n, v in zip(layout.names, mu)},
        iterations=iters,
    )
    if cross_check and 0 < layout.n <= 4:
        _, grid_val = grid_search(inst)
        result.grid_objective = grid_val
        bound = _grid_bound(layout)
        if abs(grid_val - result.total) > bound:
            raise HierGameError(
                f"oracle disagrees with grid search: {result.total} vs {grid_val} (bound {bound})")
    return result


def _grid_points(n):
    return {1: 1_000_000, 2: 1000, 3: 100, 4: 30}[n]


def _grid_bound(layout, points=None):
    n = layout.n
    points = points or _grid_points(n)
    spacing = (layout.hi - layout.lo) / (points - 1)
    lip = np.maximum(np.abs(layout.f.grad(layout.lo)), np.abs(layout.f.grad(layout.hi)))
    return float(2.0 * np.sum(lip * spacing) * max(1.0, n)) + 1e-12


def grid_search(inst: GameInstance, points: int | None = None):
    """Brute-force minimizer over a regular grid (instances with <= 4 cells).

    Inequality rows must hold exactly; equality rows are accepted within
    the grid's own resolution. Returns
    ``(x, total objective)``.
    """
    layout = Layout(inst)
    n = layout.n
    if not 1 <= n <= 4:
        raise ParameterError("grid search supports 1 to 4 cells")
    points = points or _grid_points(n)
    axes = [np.linspace(l, h, points) for l, h in zip(layout.lo, layout.hi)]
    spacing = (layout.hi - layout.lo) / max(points - 1, 1)
    A = layout.A.toarray()
    slack = np.abs(A) @ spacing + 1e-12
    best_val, best_x = np.inf, None
    tail = min(n, 2)
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes[n - tail:], indexing="ij")], axis=1)
    for head in itertools.product(*axes[: n - tail]):
        grid = np.empty((mesh.shape[0], n))
        grid[:, : n - tail] = head
        grid[:, n - tail:] = mesh
        if layout.m:
            r = grid @ A.T - layout.b
            ok = np.all(np.where(layout.is_eq, np.abs(r) <= slack, r <= 1e-12), axis=1)
            if not np.any(ok):
                continue
            grid = grid[ok]
        vals = np.zeros(grid.shape[0])
        for idx, fn in layout.f.groups:
            for col, k in enumerate(idx):
                vals += _scalar(fn, col).value(grid[:, k])
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_x = float(vals[k]), grid[k].copy()
    if best_x is None:
        raise HierGameError("grid search found no feasible grid point")
    return best_x, best_val


def _scalar(fn, col):
    from .scalar import restrict
    return restrict(fn, np.array([col]))


def _multiplier_vector(layout, multipliers):
    if multipliers is None:
        multipliers = {}
    elif hasattr(multipliers, "merged"):
        multipliers = multipliers.merged()
    elif hasattr(multipliers, "lam"):
        multipliers = multipliers.lam
    elif isinstance(multipliers, OracleResult):
        multipliers = multipliers.multipliers
    if not isinstance(multipliers, Mapping):
        raise ParameterError("multipliers must map constraint names to values")
    return np.array([float(multipliers.get(n, 0.0)) for n in layout.names], dtype=float)


def kkt_check(inst: GameInstance, alloc: Allocation, multipliers, tol: float) -> KKTReport:
    """Max-norm residuals of the KKT system of the social problem.

    stationarity is the natural residual ``|x - clip(x - grad L, lo, hi)|``,
    feasibility covers constraint and box violations, and complementarity is
    ``|mu_r * r_r|`` on inequality rows plus any negative inequality multiplier.
    """
    layout = Layout(inst)
    x = alloc.to_array(inst)
    mu = _multiplier_vector(layout, multipliers)
    grad = layout.f.grad(np.clip(x, layout.lo, layout.hi))
    if layout.m:
        grad = grad + layout.AT @ mu
    stat = float(np.max(np.abs(x - np.clip(x - grad, layout.lo, layout.hi)), initial=0.0))
    box_viol = np.maximum(layout.lo - x, 0.0) + np.maximum(x - layout.hi, 0.0)
    feas = float(np.max(box_viol, initial=0.0))
    comp = 0.0
    if layout.m:
        r = layout.A @ x - layout.b
        viol = np.where(layout.is_eq, np.abs(r), np.maximum(r, 0.0))
        feas = max(feas, float(np.max(viol)))
        le = ~layout.is_eq
        if np.any(le):
            comp = float(max(np.max(np.abs(mu[le] * r[le])), np.max(np.maximum(-mu[le], 0.0))))
    return KKTReport(stat, feas, comp, tol)

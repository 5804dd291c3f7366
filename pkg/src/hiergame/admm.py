"""Jacobi-proximal ADMM for separable convex cells under linear coupling.

Every inner iteration updates all cells simultaneously; cell ``k`` solves

    min_x  psi_k(x) + (A^T lam_hat)_k * x + D_k/2 * (x - x_k)^2   over its box

where ``lam_hat = dual_update(lam, A x - b)`` is the multiplier the current
residuals call for. The multipliers are then moved by ``rho`` times the new
residuals (projected onto ``lam >= 0`` for inequalities). When each proximal
weight ``D_k`` dominates the matching Gershgorin row sum of ``rho A^T A`` the
iteration is a convergent linearized augmented-Lagrangian scheme.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import optimize, sparse

from ._layout import StackedTerms
from .errors import InfeasibleError, NonConvergenceError, ParameterError
from .scalar import Box, argmin_shifted

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdmmOptions:
    rho: float = 1.0
    tau: str | float = "auto"
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_inner: int = 50_000
    # inside a price loop, inner tolerances shrink to ratio * last price change
    # (never below tol_floor) so inner error cannot stall the outer iteration
    inexact_ratio: float | None = 1e-5
    tol_floor: float = 1e-13

    def __post_init__(self):
        if not self.rho > 0:
            raise ParameterError("rho must be > 0")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ParameterError("ADMM tolerances must be > 0")
        if self.inexact_ratio is not None and not self.inexact_ratio > 0:
            raise ParameterError("inexact_ratio must be > 0 or None")
        if not self.tol_floor > 0:
            raise ParameterError("tol_floor must be > 0")
        if self.max_inner < 1:
            raise ParameterError("max_inner must be >= 1")
        if self.tau != "auto" and not (isinstance(self.tau, (int, float)) and self.tau >= 0):
            raise ParameterError("tau must be 'auto' or a number >= 0")


@dataclass(frozen=True)
class DualState:
    """Multiplier per constraint name."""

    lam: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.lam[name]


@dataclass
class ResidualHistory:
    inner_iter: list = field(default_factory=list)
    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    min_le_dual: list = field(default_factory=list)

    def append(self, k, primal, dual, min_le):
        self.inner_iter.append(k)
        self.primal.append(primal)
        self.dual.append(dual)
        self.min_le_dual.append(min_le)

    def __len__(self):
        return len(self.inner_iter)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["inner_iter", "primal", "dual"])
        for row in zip(self.inner_iter, self.primal, self.dual):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


class AdmmResult(NamedTuple):
    allocation: dict
    duals: DualState
    history: ResidualHistory


def dual_update(lam, residual, rho, kind):
    """``lam + rho*residual``, projected onto ``lam >= 0`` for ``le`` rows.

    ``kind`` is ``"eq"``/``"le"`` or a boolean array marking equality rows.
    """
    step = np.asarray(lam, dtype=float) + rho * np.asarray(residual, dtype=float)
    if isinstance(kind, str):
        is_eq = kind == "eq"
    else:
        is_eq = np.asarray(kind, dtype=bool)
    out = np.where(is_eq, step, np.maximum(step, 0.0))
    return float(out) if out.ndim == 0 else out


def violation(r, is_eq):
    return np.where(is_eq, r, np.maximum(r, 0.0))


def gershgorin_weights(A) -> np.ndarray:
    """``w_k = sum_r |a_rk| * ||a_r||_1``, so ``diag(w) >= A^T A``."""
    absA = abs(A)
    row_l1 = np.asarray(absA.sum(axis=1)).ravel()
    return np.asarray(absA.T @ row_l1).ravel()


def proximal_weights(A, rho, tau):
    """Per-cell weight ``D_k = tau_k + rho * sum_r a_rk^2``."""
    own = np.asarray(A.multiply(A).sum(axis=0)).ravel()
    if tau == "auto":
        return rho * np.maximum(gershgorin_weights(A), own)
    return float(tau) + rho * own


def residual_norms(dx, r, is_eq, rho, weights):
    primal = float(np.linalg.norm(violation(r, is_eq)))
    dual = float(rho * np.linalg.norm(weights * dx))
    return primal, dual


def residuals(alloc: Mapping, alloc_prev: Mapping, constraints, rho: float):
    """(primal, dual) residual norms for allocations keyed by cell.

    primal is the 2-norm of constraint violations at ``alloc``; dual is
    ``rho * ||w * (alloc - alloc_prev)||`` with the coefficient weights
    ``w`` of :func:`gershgorin_weights`.
    """
    keys = list(alloc)
    A, b, is_eq = _matrix(keys, constraints)
    x = np.array([alloc[k] for k in keys], dtype=float)
    xp = np.array([alloc_prev[k] for k in keys], dtype=float)
    return residual_norms(x - xp, A @ x - b, is_eq, rho, gershgorin_weights(A))


def _matrix(keys, constraints):
    index = {k: i for i, k in enumerate(keys)}
    rows, cols, vals = [], [], []
    for r, con in enumerate(constraints):
        for cell, coef in con.terms:
            if cell not in index:
                raise ParameterError(f"constraint {con.name} references unknown cell {cell}")
            rows.append(r)
            cols.append(index[cell])
            vals.append(coef)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(constraints), len(keys)), dtype=float)
    b = np.array([c.rhs for c in constraints], dtype=float)
    is_eq = np.array([c.kind == "eq" for c in constraints], dtype=bool)
    return A, b, is_eq


def check_feasible(lo, hi, A, b, is_eq, tol=1e-9) -> float:
    """Largest uniform slack ``s`` of a feasible point (capped at 1).

    Maximizes ``s`` subject to ``A_eq x = b_eq``, ``A_le x + s <= b_le`` and
    ``lo + s <= x <= hi - s`` on non-degenerate boxes.

    Raises
    ------
    InfeasibleError
        If no point satisfies the constraints inside the boxes.
    """
    n = lo.size
    m = A.shape[0]
    if m == 0:
        return 1.0
    A = sparse.csr_matrix(A)
    free = (hi - lo) > 1e-12
    le = ~is_eq
    blocks_ub, rhs_ub = [], []
    if np.any(le):
        blocks_ub.append(sparse.hstack([A[le], np.ones((int(le.sum()), 1))]))
        rhs_ub.append(b[le])
    nf = int(free.sum())
    if nf:
        sel = sparse.identity(n, format="csr")[free]
        ones = np.ones((nf, 1))
        blocks_ub.append(sparse.hstack([-sel, ones]))
        rhs_ub.append(-lo[free])
        blocks_ub.append(sparse.hstack([sel, ones]))
        rhs_ub.append(hi[free])
    A_ub = sparse.vstack(blocks_ub).tocsr() if blocks_ub else None
    b_ub = np.concatenate(rhs_ub) if rhs_ub else None
    A_eq = b_eq = None
    if np.any(is_eq):
        A_eq = sparse.hstack([A[is_eq], np.zeros((int(is_eq.sum()), 1))]).tocsr()
        b_eq = b[is_eq]
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    bounds = [(l, h) for l, h in zip(lo, hi)] + [(None, 1.0)]
    res = optimize.linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                           bounds=bounds, method="highs")
    if res.status != 0 or -res.fun < -tol:
        raise InfeasibleError("coupling constraints admit no point inside the boxes")
    slack = float(-res.fun)
    if slack <= tol:
        log.warning("constraint system is feasible but has no strictly interior point")
    return slack


def run_admm(solve_cells, A, b, is_eq, x0, lam0, opts: AdmmOptions, families=None):
    """Array-level inner loop.

    ``solve_cells(linear, center, weight, start)`` must return the per-cell
    minimizers of ``psi_k(x) + linear_k x + weight_k/2 (x - center_k)^2``.
    Returns ``(x, lam, history, family_primal)`` where ``family_primal`` maps
    each family label to its own violation norm.
    """
    rho = opts.rho
    x = np.array(x0, dtype=float)
    m = A.shape[0]
    history = ResidualHistory()
    if m == 0:
        x = solve_cells(np.zeros_like(x), x, np.zeros_like(x), x)
        history.append(1, 0.0, 0.0, 0.0)
        return x, np.zeros(0), history, {}
    AT = A.T.tocsr()
    lam = np.array(lam0, dtype=float)
    weight = proximal_weights(A, rho, opts.tau)
    gw = gershgorin_weights(A)
    le = ~is_eq
    r = A @ x - b
    for k in range(1, opts.max_inner + 1):
        lam_hat = dual_update(lam, r, rho, is_eq)
        x_new = solve_cells(AT @ lam_hat, x, weight, x)
        r = A @ x_new - b
        lam = dual_update(lam, r, rho, is_eq)
        primal, dual = residual_norms(x_new - x, r, is_eq, rho, gw)
        history.append(k, primal, dual, float(lam[le].min()) if np.any(le) else 0.0)
        x = x_new
        if primal <= opts.tol_primal and dual <= opts.tol_dual:
            break
    else:
        exc = NonConvergenceError(
            f"ADMM inner loop did not converge in {opts.max_inner} iterations", trace=history)
        exc.last = (x, lam, _family_primal(r, is_eq, families))
        raise exc
    return x, lam, history, _family_primal(r, is_eq, families)


def _family_primal(r, is_eq, families):
    fam_primal = {}
    if families is not None:
        v = violation(r, is_eq)
        for fam in ("controller", "agent"):
            sel = families == fam
            fam_primal[fam] = float(np.linalg.norm(v[sel])) if np.any(sel) else 0.0
    return fam_primal


def admm_solve(cells, constraints: Sequence, duals0: DualState | None = None,
               opts: AdmmOptions | None = None, x0=None, check=True) -> AdmmResult:
    """Drive separable cells to a feasible consensus under linear constraints.

    Parameters
    ----------
    cells : mapping or sequence of (ScalarFn, Box)
        Per-cell convex objective ``psi`` and its box. A sequence is keyed by
        position, so constraint terms then name cells by integer index.
    constraints : sequence of LinearConstraint
    duals0 : DualState, optional
        Warm-start multipliers (missing names start at zero).
    x0 : mapping, optional
        Warm-start allocation; defaults to the box lower bounds.
    check : bool
        Run the feasibility pre-solve first.
    """
    opts = opts or AdmmOptions()
    items = list(cells.items()) if isinstance(cells, Mapping) else list(enumerate(cells))
    keys = [k for k, _ in items]
    psi = StackedTerms([fn for _, (fn, _) in items])
    boxes = [box if isinstance(box, Box) else Box(*box) for _, (_, box) in items]
    lo = np.array([bx.lo for bx in boxes], dtype=float)
    hi = np.array([bx.hi for bx in boxes], dtype=float)
    A, b, is_eq = _matrix(keys, constraints)
    if check:
        check_feasible(lo, hi, A, b, is_eq)
    lam0 = np.zeros(len(constraints))
    if duals0 is not None:
        lam0 = np.array([duals0.lam.get(c.name, 0.0) for c in constraints], dtype=float)
    start = lo.copy() if x0 is None else np.clip([x0[k] for k in keys], lo, hi)

    def solve_cells(linear, center, weight, guess):
        out = np.empty(len(keys))
        for idx, fn in psi.groups:
            out[idx] = argmin_shifted(fn, linear[idx], center[idx], weight[idx],
                                      (lo[idx], hi[idx]), x0=guess[idx])
        return out

    x, lam, history, _ = run_admm(solve_cells, A, b, is_eq, start, lam0, opts)
    duals = DualState({c.name: float(v) for c, v in zip(constraints, lam)})
    return AdmmResult({k: float(v) for k, v in zip(keys, x)}, duals, history)

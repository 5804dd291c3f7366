"""Array view of a GameInstance used by every solver.

Cells with the same function structure are stacked into one elementwise
function so a sweep over all agents is a handful of numpy calls.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import sparse

from .scalar import argmin_shifted, restrict, stack

MIN_CHUNK = 256


def thread_count() -> int:
    """Worker cap from ``HIERGAME_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("HIERGAME_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def _group(fns):
    groups = {}
    for k, fn in enumerate(fns):
        groups.setdefault(repr(fn.signature()), []).append(k)
    return [(np.array(idx), stack([fns[k] for k in idx])) for idx in groups.values()]


class StackedTerms:
    """A list of per-cell functions evaluated as a few stacked calls."""

    def __init__(self, fns):
        self.n = len(fns)
        self.groups = _group(fns) if fns else []

    def _apply(self, method, x):
        out = np.empty(self.n)
        for idx, fn in self.groups:
            out[idx] = getattr(fn, method)(x[idx])
        return out

    def value(self, x):
        return self._apply("value", x)

    def grad(self, x):
        return self._apply("grad", x)

    def hess(self, x):
        return self._apply("hess", x)


class Layout:
    def __init__(self, inst, constraints=None):
        self.inst = inst
        self.cells = inst.cells
        self.n = len(self.cells)
        index = inst.cell_index
        self.lo = np.array([inst.box(c).lo for c in self.cells], dtype=float)
        self.hi = np.array([inst.box(c).hi for c in self.cells], dtype=float)
        f_fns = [inst.f(c) for c in self.cells]
        g_fns = [inst.g(c) for c in self.cells]
        self.f = StackedTerms(f_fns)
        self.g = StackedTerms(g_fns)
        self.psi = StackedTerms([f + g for f, g in zip(f_fns, g_fns)])
        ctrl_pos = {c.id: j for j, c in enumerate(inst.controllers)}
        self.controller_of = np.array([ctrl_pos[c[1]] for c in self.cells], dtype=int)
        self.n_controllers = len(inst.controllers)

        if constraints is None:
            owned = [(k, "controller") for k in inst.controller_constraints]
            owned += [(k, "agent") for k in inst.agent_constraints]
        else:
            owned = list(constraints)
        self.constraints = [k for k, _ in owned]
        self.family = np.array([fam for _, fam in owned], dtype=object)
        self.names = [k.name for k in self.constraints]
        rows, cols, vals = [], [], []
        for r, k in enumerate(self.constraints):
            for cell, coef in k.terms:
                rows.append(r)
                cols.append(index[cell])
                vals.append(coef)
        self.m = len(self.constraints)
        self.A = sparse.csr_matrix((vals, (rows, cols)), shape=(self.m, self.n), dtype=float)
        self.AT = self.A.T.tocsr()
        self.b = np.array([k.rhs for k in self.constraints], dtype=float)
        self.is_eq = np.array([k.kind == "eq" for k in self.constraints], dtype=bool)
        self._chunks = {}

    def objective_values(self, x):
        return np.bincount(self.controller_of, weights=self.f.value(x), minlength=self.n_controllers)

    def best_response(self, linear, center, weight, x0, threads=None):
        """Per-cell ``argmin_shifted`` of ``f + g`` over the boxes."""
        threads = thread_count() if threads is None else threads
        out = np.empty(self.n)
        weight = np.broadcast_to(np.asarray(weight, dtype=float), (self.n,))
        for gi, (idx, fn) in enumerate(self.psi.groups):
            if threads <= 1 or idx.size < 2 * MIN_CHUNK:
                out[idx] = argmin_shifted(fn, linear[idx], center[idx], weight[idx],
                                          (self.lo[idx], self.hi[idx]), x0=x0[idx])
                continue
            parts = self._chunked(gi, threads)

            def run(part):
                sub_idx, sub_fn = part
                return argmin_shifted(sub_fn, linear[sub_idx], center[sub_idx], weight[sub_idx],
                                      (self.lo[sub_idx], self.hi[sub_idx]), x0=x0[sub_idx])

            with ThreadPoolExecutor(max_workers=threads) as pool:
                for (sub_idx, _), res in zip(parts, pool.map(run, parts)):
                    out[sub_idx] = res
        return out

    def _chunked(self, gi, threads):
        key = (gi, threads)
        if key not in self._chunks:
            idx, fn = self.psi.groups[gi]
            pieces = np.array_split(np.arange(idx.size), threads)
            self._chunks[key] = [(idx[p], restrict(fn, p)) for p in pieces if p.size]
        return self._chunks[key]

"""Per-outer-iteration solve records and their CSV form."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

CSV_COLUMNS = ("outer_iter", "epsilon", "max_price_delta", "inner_iters", "primal_residual",
               "agent_residual", "controller_residual", "wall_ms")


def array_hash(values) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype=float).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class TraceRow:
    outer_iter: int
    max_price_delta: float
    inner_iters: int = 1
    primal_residual: float = 0.0
    agent_residual: float = 0.0
    controller_residual: float = 0.0
    agent_dual_norm: float = 0.0
    controller_dual_norm: float = 0.0
    epsilon: float | None = None
    wall_ms: float = 0.0
    prices_hash: str = ""
    alloc_hash: str = ""


@dataclass
class SolveTrace:
    """Append-only list of :class:`TraceRow`; ``label`` tags baselines."""

    rows: list = field(default_factory=list)
    label: str = ""

    def append(self, row: TraceRow):
        if self.rows and row.outer_iter <= self.rows[-1].outer_iter:
            raise ParameterError("outer_iter must be strictly increasing")
        if not self.rows and row.outer_iter != 0:
            raise ParameterError("trace must start at outer_iter 0")
        if self.rows and (row.epsilon is None) != (self.rows[0].epsilon is None):
            raise ParameterError("epsilon must be present on every row or on none")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    @property
    def has_epsilon(self) -> bool:
        return bool(self.rows) and self.rows[0].epsilon is not None

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def first_crossing(self, eps: float):
        """Smallest ``outer_iter`` with ``epsilon <= eps``, or None."""
        if not self.has_epsilon:
            raise ParameterError("trace carries no epsilon column")
        for r in self.rows:
            if r.epsilon <= eps:
                return r.outer_iter
        return None

    def columns(self):
        return [c for c in CSV_COLUMNS if c != "epsilon" or self.has_epsilon]

    def to_csv(self, path=None, timing: bool = False) -> str:
        """Render (and optionally write) the trace.

        ``wall_ms`` is left blank unless ``timing`` is set, so default output
        is byte-stable across runs. The ``epsilon`` column only appears when
        the solve had an oracle reference.
        """
        cols = self.columns()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for r in self.rows:
            rec = []
            for c in cols:
                v = getattr(r, c)
                if c == "wall_ms":
                    rec.append(f"{v:.3f}" if timing else "")
                elif isinstance(v, float):
                    rec.append(_fmt(v))
                else:
                    rec.append(str(v))
            writer.writerow(rec)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "nan"
    return repr(float(v))

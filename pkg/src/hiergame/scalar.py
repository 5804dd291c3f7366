"""Closed families of smooth scalar functions and the shared scalar solve.

Every controller objective term ``f`` and agent cost term ``g`` is one of the
families below. Parameters are usually Python floats, but any family may also
hold equal-shape numpy arrays: such a *stacked* function evaluates
elementwise, which is how the solvers update thousands of cells at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import ClassVar

import numpy as np

from .errors import ConvexityError, DomainError, ParameterError

LN2 = math.log(2.0)

ARGMIN_TOL = 1e-14
ARGMIN_MAX_ITER = 200


def _finite(*values):
    return all(np.all(np.isfinite(v)) for v in values)


@dataclass(frozen=True)
class Box:
    """Closed interval ``[lo, hi]`` of resource units, ``0 <= lo <= hi``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not _finite(self.lo, self.hi):
            raise ParameterError(f"box bounds must be finite, got [{self.lo}, {self.hi}]")
        if np.any(np.asarray(self.lo) < 0):
            raise ParameterError(f"box lower bound must be >= 0, got {self.lo}")
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ParameterError(f"box requires lo <= hi, got [{self.lo}, {self.hi}]")

    def clip(self, x):
        return np.clip(x, self.lo, self.hi)

    def to_list(self):
        return [float(self.lo), float(self.hi)]


class ScalarFn:
    """Base class of the function families.

    Subclasses define ``value``, ``grad`` and ``hess`` analytically and
    report curvature bounds over a box.
    """

    family: ClassVar[str] = ""
    nonnegative_domain: ClassVar[bool] = False

    def _x(self, x):
        x = np.asarray(x, dtype=float)
        if self.nonnegative_domain and np.any(x < 0):
            raise DomainError(f"{self.family} is defined for x >= 0 only")
        return x

    def __call__(self, x):
        return self.value(x)

    def __add__(self, other):
        if not isinstance(other, ScalarFn):
            return NotImplemented
        left = self.terms if isinstance(self, Sum) else (self,)
        right = other.terms if isinstance(other, Sum) else (other,)
        return Sum(left + right)

    @property
    def is_convex(self) -> bool:
        return True

    def curvature_bounds(self, box: Box):
        """Return ``(m, L)`` with ``m <= f''(x) <= L`` on ``box``.

        Families with monotone curvature evaluate ``f''`` at the box ends,
        so the bounds are tight.
        """
        lo, hi = self.hess(box.lo), self.hess(box.hi)
        return np.minimum(lo, hi), np.maximum(lo, hi)

    def signature(self):
        return self.family

    def to_dict(self) -> dict:
        out = {"family": self.family}
        for f in fields(self):
            out[f.name] = float(getattr(self, f.name))
        return out


@dataclass(frozen=True)
class Quadratic(ScalarFn):
    """``a * (x - b)**2 + c``. Convex iff ``a >= 0``."""

    a: float
    b: float
    c: float = 0.0
    family: ClassVar[str] = "quadratic"

    def __post_init__(self):
        if not _finite(self.a, self.b, self.c):
            raise ParameterError("quadratic parameters must be finite")

    @property
    def is_convex(self):
        return bool(np.all(np.asarray(self.a) >= 0))

    def value(self, x):
        x = self._x(x)
        return self.a * (x - self.b) ** 2 + self.c

    def grad(self, x):
        x = self._x(x)
        return 2.0 * self.a * (x - self.b)

    def hess(self, x):
        x = self._x(x)
        return 2.0 * self.a + 0.0 * x


@dataclass(frozen=True)
class Linear(ScalarFn):
    """``s * x + c``."""

    s: float
    c: float = 0.0
    family: ClassVar[str] = "linear"

    def __post_init__(self):
        if not _finite(self.s, self.c):
            raise ParameterError("linear parameters must be finite")

    def value(self, x):
        x = self._x(x)
        return self.s * x + self.c

    def grad(self, x):
        x = self._x(x)
        return self.s + 0.0 * x

    def hess(self, x):
        x = self._x(x)
        return 0.0 * x + 0.0 * self.s


@dataclass(frozen=True)
class InvShannon(ScalarFn):
    """Transmit power needed for rate ``x``: ``n0 * (2**(x / w) - 1)``."""

    n0: float
    w: float
    family: ClassVar[str] = "inv_shannon"
    nonnegative_domain: ClassVar[bool] = True

    def __post_init__(self):
        if not _finite(self.n0, self.w):
            raise ParameterError("inv_shannon parameters must be finite")
        if np.any(np.asarray(self.n0) <= 0) or np.any(np.asarray(self.w) <= 0):
            raise ParameterError("inv_shannon requires n0 > 0 and w > 0")

    def value(self, x):
        x = self._x(x)
        return self.n0 * np.expm1(LN2 * x / self.w)

    def grad(self, x):
        x = self._x(x)
        return self.n0 * (LN2 / self.w) * np.exp2(x / self.w)

    def hess(self, x):
        x = self._x(x)
        return self.n0 * (LN2 / self.w) ** 2 * np.exp2(x / self.w)


@dataclass(frozen=True)
class LogConcaveCost(ScalarFn):
    """``alpha * log(1 + beta * x)``; concave, outside the convergence regime."""

    alpha: float
    beta: float
    family: ClassVar[str] = "log_concave"
    nonnegative_domain: ClassVar[bool] = True

    def __post_init__(self):
        if not _finite(self.alpha, self.beta):
            raise ParameterError("log_concave parameters must be finite")
        if np.any(np.asarray(self.alpha) <= 0) or np.any(np.asarray(self.beta) <= 0):
            raise ParameterError("log_concave requires alpha > 0 and beta > 0")

    @property
    def is_convex(self):
        return False

    def value(self, x):
        x = self._x(x)
        return self.alpha * np.log1p(self.beta * x)

    def grad(self, x):
        x = self._x(x)
        return self.alpha * self.beta / (1.0 + self.beta * x)

    def hess(self, x):
        x = self._x(x)
        return -self.alpha * self.beta**2 / (1.0 + self.beta * x) ** 2


@dataclass(frozen=True)
class PowerLaw(ScalarFn):
    """``a * x**p`` with ``a > 0`` and ``p >= 1``."""

    a: float
    p: float
    family: ClassVar[str] = "power_law"
    nonnegative_domain: ClassVar[bool] = True

    def __post_init__(self):
        if not _finite(self.a, self.p):
            raise ParameterError("power_law parameters must be finite")
        if np.any(np.asarray(self.a) <= 0) or np.any(np.asarray(self.p) < 1):
            raise ParameterError("power_law requires a > 0 and p >= 1")

    def value(self, x):
        x = self._x(x)
        return self.a * x**self.p

    def grad(self, x):
        x = self._x(x)
        return self.a * self.p * x ** (self.p - 1.0)

    def hess(self, x):
        x = self._x(x)
        # p == 1 would give 0 * inf at x == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            h = self.a * self.p * (self.p - 1.0) * x ** (self.p - 2.0)
        return np.where(np.asarray(self.p) == 1.0, 0.0, h)


@dataclass(frozen=True)
class Sum(ScalarFn):
    """Pointwise sum of ``terms``."""

    terms: tuple
    family: ClassVar[str] = "sum"

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms or not all(isinstance(t, ScalarFn) for t in terms):
            raise ParameterError("sum needs at least one ScalarFn term")
        object.__setattr__(self, "terms", terms)

    @property
    def nonnegative_domain(self):
        return any(t.nonnegative_domain for t in self.terms)

    @property
    def is_convex(self):
        return all(t.is_convex for t in self.terms)

    def value(self, x):
        return sum(t.value(x) for t in self.terms)

    def grad(self, x):
        return sum(t.grad(x) for t in self.terms)

    def hess(self, x):
        return sum(t.hess(x) for t in self.terms)

    def curvature_bounds(self, box):
        bounds = [t.curvature_bounds(box) for t in self.terms]
        return sum(b[0] for b in bounds), sum(b[1] for b in bounds)

    def signature(self):
        return ("sum", tuple(t.signature() for t in self.terms))

    def to_dict(self):
        return {"family": "sum", "terms": [t.to_dict() for t in self.terms]}


FAMILIES = {cls.family: cls for cls in (Quadratic, Linear, InvShannon, LogConcaveCost, PowerLaw)}


def fn_from_dict(data: dict) -> ScalarFn:
    """Inverse of ``ScalarFn.to_dict``."""
    data = dict(data)
    try:
        family = data.pop("family")
    except KeyError:
        raise ParameterError(f"function record without 'family': {data}") from None
    if family == "sum":
        return Sum(tuple(fn_from_dict(t) for t in data["terms"]))
    if family not in FAMILIES:
        raise ParameterError(f"unknown function family {family!r}")
    cls = FAMILIES[family]
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ParameterError(f"unknown fields for {family}: {sorted(unknown)}")
    try:
        return cls(**{k: float(v) for k, v in data.items()})
    except TypeError as exc:
        raise ParameterError(f"bad {family} record: {exc}") from None


def stack(fns) -> ScalarFn:
    """Combine same-signature functions into one elementwise function."""
    fns = list(fns)
    sig = fns[0].signature()
    if any(f.signature() != sig for f in fns[1:]):
        raise ParameterError("can only stack functions with identical structure")
    head = fns[0]
    if isinstance(head, Sum):
        return Sum(tuple(stack([f.terms[k] for f in fns]) for k in range(len(head.terms))))
    cls = type(head)
    kwargs = {fl.name: np.array([getattr(f, fl.name) for f in fns], dtype=float) for fl in fields(cls)}
    return cls(**kwargs)


def argmin_shifted(fn, linear_coef=0.0, prox_center=0.0, prox_weight=0.0, box=None,
                   *, x0=None, tol=ARGMIN_TOL, max_iter=ARGMIN_MAX_ITER):
    """Minimize ``fn(x) + linear_coef*x + prox_weight/2*(x - prox_center)**2`` on ``box``.

    Safeguarded Newton on the derivative with a bisection fallback. All
    arguments broadcast, so a stacked ``fn`` yields one minimizer per element.
    ``box`` is a :class:`Box` or a ``(lo, hi)`` pair of arrays; ``x0`` is an
    optional starting point (defaults to the prox center, clipped).

    Raises
    ------
    ConvexityError
        If the objective has negative curvature somewhere on the box.
    """
    if box is None:
        raise ParameterError("argmin_shifted needs a box")
    if not isinstance(box, Box):
        box = Box(np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float))
    c = np.asarray(linear_coef, dtype=float)
    z = np.asarray(prox_center, dtype=float)
    w = np.asarray(prox_weight, dtype=float)
    if np.any(w < 0):
        raise ParameterError("prox_weight must be >= 0")

    m, _ = fn.curvature_bounds(box)
    if np.any(m + w < -1e-12):
        raise ConvexityError("shifted subproblem is not convex on its box")

    lo = np.asarray(box.lo, dtype=float)
    hi = np.asarray(box.hi, dtype=float)
    shape = np.broadcast_shapes(lo.shape, hi.shape, c.shape, z.shape, w.shape,
                                np.shape(fn.grad(lo)))
    lo, hi, c, z, w = (np.broadcast_to(v, shape).astype(float) for v in (lo, hi, c, z, w))
    scalar_out = shape == ()
    lo, hi, c, z, w = (np.atleast_1d(v) for v in (lo, hi, c, z, w))

    def deriv(x):
        return fn.grad(x) + c + w * (x - z)

    d_lo = deriv(lo)
    d_hi = deriv(hi)
    x = np.where(d_lo >= 0, lo, np.where(d_hi <= 0, hi, 0.0))
    active = (d_lo < 0) & (d_hi > 0)
    if np.any(active):
        a, b = lo.copy(), hi.copy()
        start = z if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), shape)
        start = np.clip(np.atleast_1d(start), lo, hi)
        start = np.where((start > a) & (start < b), start, 0.5 * (a + b))
        x = np.where(active, start, x)
        step_old = b - a
        eps = 4 * np.finfo(float).eps
        for _ in range(max_iter):
            d = deriv(x)
            dd = fn.hess(x) + w
            done = (np.abs(d) <= tol) | ((b - a) <= eps * np.maximum(1.0, np.abs(x)))
            active &= ~done
            if not np.any(active):
                break
            a = np.where(active & (d < 0), x, a)
            b = np.where(active & (d > 0), x, b)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = x - d / dd
                use_newton = ((newton > a) & (newton < b) & np.isfinite(newton)
                              & (np.abs(2 * d) <= np.abs(step_old * dd)))
            xn = np.where(use_newton, newton, 0.5 * (a + b))
            step_old = np.where(active, np.abs(xn - x), step_old)
            x = np.where(active, xn, x)
    if scalar_out:
        return float(x[0])
    return x


def restrict(fn, idx):
    """Select elements ``idx`` of a stacked function (scalar params are kept)."""
    if isinstance(fn, Sum):
        return Sum(tuple(restrict(t, idx) for t in fn.terms))
    kwargs = {}
    for f in fields(fn):
        v = np.asarray(getattr(fn, f.name))
        kwargs[f.name] = v[idx] if v.ndim else v
    return type(fn)(**kwargs)

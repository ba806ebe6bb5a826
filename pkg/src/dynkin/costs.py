"""Stopping costs, their generator image and the transformed functions.

For a cost ``H`` the generator image is ``h = (L - r) H`` and the
transformed function is ``Hhat(y) = (H/phi)(F^{-1}(y))``. ``Hhat`` is convex
exactly where ``h > 0``; costs are classified by the sign pattern of ``h``
(one change from + to - is class ``A1``, from - to + is ``A2``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.optimize import brentq

from .diffusion import BoundaryClass, DiffusionSpec, TransformContext, _broadcast, resolvent_eval
from .errors import IntegralDivergence, MultipleSignChanges

SIGN_TOL = 1e-7
GRID_POINTS = 4096
LIMIT_POINTS = 10


@dataclass(frozen=True)
class SmoothFunction:
    """A C^2 function with optional analytic derivatives.

    Missing derivatives fall back to central differences: a two-point
    stencil with step ``h_fd`` for ``H'`` and a five-point stencil at a
    wider step for ``H''`` (a 1e-5 step would leave roundoff near 1e-6,
    above the sign tolerance used for classification).
    """

    f: Callable
    df: Callable | None = None
    d2f: Callable | None = None
    name: str = "H"
    h_fd: float = 1e-5
    expression: object = None

    def __call__(self, x):
        return _broadcast(self.f, x)

    def _step(self, x, h):
        return h * np.maximum(1.0, np.abs(np.asarray(x, dtype=float)))

    def d1(self, x):
        if self.df is not None:
            return _broadcast(self.df, x)
        h = self._step(x, self.h_fd)
        return (self(x + h) - self(x - h)) / (2 * h)

    def d2(self, x):
        if self.d2f is not None:
            return _broadcast(self.d2f, x)
        h = self._step(x, 100 * self.h_fd)
        return (-self(x + 2 * h) + 16 * self(x + h) - 30 * self(x)
                + 16 * self(x - h) - self(x - 2 * h)) / (12 * h * h)

    @classmethod
    def from_expression(cls, text, params=None, name=None, analytic=True):
        from .expr import Expression, parse

        e = text if isinstance(text, Expression) else parse(text, params)
        if analytic and e.differentiable:
            d1, d2 = e.derivative(1), e.derivative(2)
            return cls(e, d1, d2, name=name or e.text, expression=e)
        return cls(e, name=name or e.text, expression=e)

    @classmethod
    def constant(cls, c, name=None):
        c = float(c)
        return cls.from_expression(repr(c), name=name or repr(c))


def as_smooth(H, name=None) -> SmoothFunction:
    if isinstance(H, SmoothFunction):
        return H
    if isinstance(H, (str, int, float)):
        return SmoothFunction.from_expression(str(H), name=name)
    from .expr import Expression
    if isinstance(H, Expression):
        return SmoothFunction.from_expression(H, name=name)
    return SmoothFunction(H, name=name or getattr(H, "__name__", "H"))


def generator_apply(spec: DiffusionSpec, H, x):
    """``(1/2) sigma^2 H'' + mu H' - r H`` at interior points."""
    spec.check_interior(x)
    H = as_smooth(H)
    return 0.5 * spec.vol(x) ** 2 * H.d2(x) + spec.drift(x) * H.d1(x) - spec.rate(x) * H(x)


class HatFunction:
    """``Hhat(y) = (H/phi)(F^{-1}(y))`` with first and second derivatives.

    ``Hhat'`` uses ``(H' phi - H phi')/(W S')``, which is exact calculus and
    stays finite wherever ``H`` is smooth; the integral form is available as
    :meth:`deriv_integral` for cross-checks.
    """

    def __init__(self, ctx: TransformContext, H: SmoothFunction):
        self.ctx = ctx
        self.H = as_smooth(H)
        self.W = ctx.pair.wronskian

    def at_x(self, x):
        """``(y, Hhat, Hhat')`` at the point ``y = F(x)``."""
        p = self.ctx.pair
        lphi = p.log_phi(x)
        Hx = self.H(x)
        val = Hx * np.exp(-lphi)
        slope = (self.H.d1(x) - Hx * p.dlog_phi(x)) * np.exp(lphi - p.log_scale(x)) / self.W
        y = np.exp(p.log_F(x))
        return y, val, slope

    def value_x(self, x):
        return self.H(x) * np.exp(-self.ctx.pair.log_phi(x))

    def slope_x(self, x):
        return self.at_x(x)[2]

    def second_x(self, x):
        spec = self.ctx.spec
        p = self.ctx.pair
        h = 0.5 * spec.vol(x) ** 2 * self.H.d2(x) + spec.drift(x) * self.H.d1(x) - spec.rate(x) * self.H(x)
        return 2.0 * h * np.exp(3 * p.log_phi(x) - 2 * p.log_scale(x)) / (
            self.W ** 2 * spec.vol(x) ** 2)

    def __call__(self, y):
        return self.value_x(self.ctx.F_inv(y))

    def deriv(self, y):
        return self.slope_x(self.ctx.F_inv(y))

    def second(self, y):
        return self.second_x(self.ctx.F_inv(y))

    def deriv_integral(self, y):
        """``-(1/W) int_x^hi phi h m'`` with ``x = F^{-1}(y)``."""
        ctx, spec = self.ctx, self.ctx.spec
        x0 = float(ctx.F_inv(y))
        p = ctx.pair

        def integrand(z):
            h = float(generator_apply(spec, self.H, z))
            return h * 2.0 / float(spec.vol(z)) ** 2 * math.exp(float(p.log_phi(z) - p.log_scale(z)))

        pts = [x0]
        step = max(1.0, abs(x0)) * 0.25
        while pts[-1] < ctx.x_hi:
            nxt = pts[-1] + step if math.isinf(spec.hi) else pts[-1] + 0.5 * (spec.hi - pts[-1])
            pts.append(min(nxt, ctx.x_hi))
            step *= 2.0
            if len(pts) > 200:
                break
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            total += integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-11, limit=200)[0]
        return -total / self.W


@dataclass
class CostProfile:
    """A cost with its classification and distinguished points."""

    H: SmoothFunction
    ctx: TransformContext
    class_tag: str
    x_hat: float | None
    y_hat: float | None
    stationary_x: float | None
    stationary_point: float | None
    lower_limit: float
    lower_status: str
    upper_status: str
    upper_limit: float
    slope_at_zero: float
    in_class_A: bool
    strict_lower: bool
    infimum: float
    sign_changes: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hat = HatFunction(self.ctx, self.H)

    @property
    def name(self):
        return self.H.name

    def h_gen(self, x):
        return generator_apply(self.ctx.spec, self.H, x)

    def to_dict(self):
        return {
            "name": self.name, "class": self.class_tag, "x_hat": self.x_hat,
            "y_hat": self.y_hat, "stationary_x": self.stationary_x,
            "stationary_y": self.stationary_point, "lower_limit": self.lower_limit,
            "lower_status": self.lower_status, "upper_status": self.upper_status,
            "slope_at_zero": _jsonable(self.slope_at_zero), "in_class_A": self.in_class_A,
            "infimum": self.infimum, "sign_changes": list(self.sign_changes),
        }


def _jsonable(v):
    if v is None or math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


def _limit(seq, zero_rtol=1e-6):
    """Classify a sequence sampled toward an endpoint: zero, finite or unbounded."""
    a = np.abs(np.asarray(seq, dtype=float))
    if not np.all(np.isfinite(seq)):
        return math.inf, "unbounded"
    peak = max(a.max(), 1e-300)
    tail = a[-4:]
    growing = np.all(np.diff(tail) > 0) and np.all(tail[1:] / np.maximum(tail[:-1], 1e-300) > 1.5)
    if growing and a[-1] > 1e3 * max(a[0], 1.0):
        return math.copysign(math.inf, seq[-1]), "unbounded"
    if a[-1] <= zero_rtol * peak or a[-1] <= 1e-10:
        return 0.0, "zero"
    ratios = tail[1:] / np.maximum(tail[:-1], 1e-300)
    if np.all(ratios < 0.7) and a[-1] <= 1e-3 * peak:
        return 0.0, "zero"  # geometric decay along a geometric sequence of points
    d = np.abs(np.diff(np.asarray(seq, dtype=float)))
    if d[-1] <= 1e-6 * max(a[-1], 1e-300) or (d[-1] < d[-2] < d[-3]):
        return float(seq[-1]), "finite"
    return float(seq[-1]), "oscillating" if np.ptp(seq[-5:]) < 10 * peak else "unbounded"


def _slope_limit(seq):
    a = np.abs(np.asarray(seq, dtype=float))
    if not np.all(np.isfinite(seq)):
        return math.copysign(math.inf, seq[-1])
    tail = a[-4:]
    growing = np.all(tail[1:] / np.maximum(tail[:-1], 1e-300) > 1.5)
    if growing and a[-1] > 1e3 * max(a[0], 1e-12):
        return math.copysign(math.inf, seq[-1])
    return float(seq[-1])


def endpoint_points(ctx: TransformContext, end: str, n: int = LIMIT_POINTS):
    """``n`` points geometrically refining (in y) toward an endpoint."""
    yo = float(ctx.F(ctx.spec.reference_point))
    target = ctx.y_lo if end == "lower" else ctx.y_hi
    return ctx.F_inv(np.geomspace(yo, target, n + 1)[1:])


def _bisect_root(fn, a, b):
    fa, fb = fn(a), fn(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    return brentq(fn, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def classify_cost(spec: DiffusionSpec, ctx: TransformContext, H, grid_points: int = GRID_POINTS,
                  sign_tol: float = SIGN_TOL, strict: bool = False, name: str | None = None) -> CostProfile:
    """Classify ``H`` and locate its distinguished points.

    With ``strict=True`` more than one sign change of the generator image
    raises :class:`MultipleSignChanges`; otherwise the profile is returned
    with ``class_tag = "none"`` and the crossings in ``diagnostics``.
    """
    H = as_smooth(H, name=name)
    if name is not None and H.name != name:
        H = SmoothFunction(H.f, H.df, H.d2f, name, H.h_fd, H.expression)
    xs = ctx.grid(grid_points)
    h = generator_apply(spec, H, xs)
    hv = H(xs)
    diag = {}

    sgn = np.where(h > sign_tol, 1, np.where(h < -sign_tol, -1, 0))
    nz = np.flatnonzero(sgn)
    crossings = []
    zero_runs = 0
    if nz.size:
        flips = np.flatnonzero(np.diff(sgn[nz]) != 0)
        for k in flips:
            i, j = nz[k], nz[k + 1]
            zero_runs = max(zero_runs, j - i - 1)
            hf = lambda x: float(generator_apply(spec, H, x))  # noqa: E731
            crossings.append(_bisect_root(hf, xs[i], xs[j]) if j - i == 1 else 0.5 * (xs[i] + xs[j]))
    diag["crossings"] = list(crossings)

    # class A membership
    lo_pts = endpoint_points(ctx, "lower")
    hi_pts = endpoint_points(ctx, "upper")
    lower_seq = H(lo_pts) * np.exp(-ctx.pair.log_phi(lo_pts))
    upper_seq = H(hi_pts) * np.exp(-ctx.pair.log_psi(hi_pts))
    A_H, lower_status = _limit(lower_seq)
    up_lim, upper_status = _limit(upper_seq)
    diag["lower_sequence"] = lower_seq.tolist()
    diag["upper_sequence"] = upper_seq.tolist()
    relaxed_ok = spec.boundary_lo in (BoundaryClass.EXIT, BoundaryClass.ENTRANCE)
    strict_lower = lower_status == "zero"
    lower_ok = strict_lower or (relaxed_ok and lower_status == "finite")
    upper_ok = upper_status == "zero"
    resolvent_ok = True
    if lower_ok and upper_ok:
        try:
            res = resolvent_eval(ctx, lambda z: abs(float(generator_apply(spec, H, z))),
                                 spec.reference_point, rtol=1e-6)
            diag["resolvent_abs_h"] = res
            resolvent_ok = bool(np.isfinite(res))
        except IntegralDivergence as exc:
            diag["resolvent_abs_h"] = str(exc)
            resolvent_ok = False
    in_A = lower_ok and upper_ok and resolvent_ok

    if nz.size == 0:
        tag = "none"
        diag["reason"] = "generator image vanishes on the grid"
    elif len(crossings) == 0:
        tag = "A" if in_A else "none"
    elif len(crossings) == 1:
        if zero_runs > 3:
            tag = "none"
            diag["reason"] = "generator image vanishes on an interval"
        elif not in_A:
            tag = "none"
        else:
            tag = "A1" if sgn[nz[0]] > 0 else "A2"
    else:
        tag = "none"
        diag["reason"] = f"{len(crossings)} sign changes"
        if strict:
            raise MultipleSignChanges(
                f"{H.name}: generator image changes sign {len(crossings)} times", crossings)

    x_hat = y_hat = None
    stat_x = stat_y = None
    if tag in ("A1", "A2"):
        x_hat = float(crossings[0])
        y_hat = float(ctx.F(x_hat))
        hat = HatFunction(ctx, H)
        below = xs[xs < x_hat]
        if below.size >= 2:
            sl = hat.slope_x(below)
            want = 1 if tag == "A1" else -1  # sign of Hhat' just above the stationary point
            sg = np.sign(sl)
            ch = np.flatnonzero((sg[:-1] == -want) & (sg[1:] == want))
            if ch.size:
                k = ch[-1]
                stat_x = float(_bisect_root(lambda z: float(hat.slope_x(z)), below[k], below[k + 1]))
                stat_y = float(ctx.F(stat_x))
    slope_seq = HatFunction(ctx, H).slope_x(lo_pts)
    diag["slope_sequence"] = np.asarray(slope_seq).tolist()
    slope0 = _slope_limit(slope_seq)
    return CostProfile(H, ctx, tag, x_hat, y_hat, stat_x, stat_y, float(A_H), lower_status,
                       upper_status, float(up_lim), slope0, in_A, strict_lower,
                       float(np.min(hv)), tuple(float(c) for c in crossings), diag)


# ---------------------------------------------------------------- assumptions

@dataclass
class AssumptionReport:
    lower_ok: bool
    classes_ok: bool
    limits_ok: bool
    route: str | None
    messages: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.classes_ok and self.limits_ok

    def to_dict(self):
        return {"i_costs_ordered": self.lower_ok, "ii_classes": self.classes_ok,
                "iii_limits": self.limits_ok, "route": self.route,
                "passed": self.passed, "messages": list(self.messages),
                "details": self.details}


ROUTES = {
    "main": "natural lower boundary",
    "entrance": "entrance-not-exit lower boundary",
    "exit": "exit-not-entrance lower boundary",
    "relaxed": "both stopping costs in the same class",
}


def _bounded(status):
    return status in ("zero", "finite", "oscillating")


def check_assumptions(game) -> AssumptionReport:
    """Check (i) ``L_i < G_i``, (ii) ``G1 in A1``, ``G2 in A2``, ``x_hat1 < x_hat2``
    and (iii) boundedness of ``L_i/phi`` at the lower end and ``L_i/psi`` at
    the upper end; pick the construction route."""
    ctx, spec = game.ctx, game.spec
    G1, G2, L1, L2 = game.G1, game.G2, game.L1, game.L2
    msgs = []
    xs = ctx.grid(1024)
    gaps = [np.min(G1.H(xs) - L1.H(xs)), np.min(G2.H(xs) - L2.H(xs))]
    lower_ok = bool(gaps[0] > 0 and gaps[1] > 0)
    if not lower_ok:
        for i, g in enumerate(gaps, 1):
            if g <= 0:
                msgs.append(f"assumption (i) failed: L{i} < G{i} violated (min gap {g:.3g})")

    classes_ok = (G1.class_tag == "A1" and G2.class_tag == "A2"
                  and G1.x_hat is not None and G2.x_hat is not None and G1.x_hat < G2.x_hat)
    if not classes_ok:
        if G1.class_tag != "A1":
            msgs.append(f"assumption (ii) failed: G1 is in class {G1.class_tag}, not A1")
        if G2.class_tag != "A2":
            msgs.append(f"assumption (ii) failed: G2 is in class {G2.class_tag}, not A2")
        if G1.class_tag == "A1" and G2.class_tag == "A2":
            msgs.append(f"assumption (ii) failed: x_hat2 = {G2.x_hat:.6g} is not above "
                        f"x_hat1 = {G1.x_hat:.6g}")

    limits_ok = True
    for name, L in (("L1", L1), ("L2", L2)):
        if not _bounded(L.lower_status):
            limits_ok = False
            msgs.append(f"assumption (iii) failed: {name}/phi unbounded at the lower end")
        if not _bounded(L.upper_status):
            limits_ok = False
            msgs.append(f"assumption (iii) failed: {name}/psi unbounded at the upper end")

    route = None
    lower = spec.boundary_lo
    if classes_ok:
        route = {BoundaryClass.NATURAL: "main", BoundaryClass.ENTRANCE: "entrance",
                 BoundaryClass.EXIT: "exit"}.get(lower)
    elif (G1.class_tag == G2.class_tag and G1.class_tag in ("A1", "A2")
          and G1.infimum < 0 and G2.infimum < 0 and lower_ok):
        route = "relaxed"
        msgs.append(f"both stopping costs in {G1.class_tag} with negative infima: "
                    "relaxed route applies")
    if route is None:
        msgs.append("no construction route applies")
    details = {"min_gap": [float(g) for g in gaps],
               "classes": {k: getattr(game, k).class_tag for k in ("G1", "G2", "L1", "L2")},
               "x_hat": {k: getattr(game, k).x_hat for k in ("G1", "G2", "L1", "L2")}}
    return AssumptionReport(lower_ok, bool(classes_ok), limits_ok, route, msgs, details)


__all__ = [
    "SmoothFunction", "HatFunction", "CostProfile", "AssumptionReport", "generator_apply",
    "classify_cost", "check_assumptions", "as_smooth", "endpoint_points",
]

"""One-dimensional diffusions with discounting.

A :class:`DiffusionSpec` holds drift, volatility, discount rate and the
state interval. :func:`solve_fundamental` returns the increasing and
decreasing positive solutions psi, phi of ``(1/2) sigma^2 u'' + mu u' = r u``
together with the scale and speed densities, and :class:`TransformContext`
exposes the change of coordinates ``y = F(x) = psi(x)/phi(x)``.

All evaluations are carried out in log space: psi and phi can span hundreds
of orders of magnitude on unbounded intervals.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate, special

from .errors import DomainError, IntegralDivergence, NonConvergentIntegral, SolveFailure

Y_SPAN = 1e16  # evaluation domain of closed forms: F in [1/Y_SPAN, Y_SPAN] * F(x_o)
Y_SPAN_NUMERICAL = 1e12


class BoundaryClass(str, enum.Enum):
    NATURAL = "natural"
    ENTRANCE = "entrance_not_exit"
    EXIT = "exit_not_entrance"
    REGULAR = "regular"


def _as_class(value) -> BoundaryClass:
    if isinstance(value, BoundaryClass):
        return value
    aliases = {"entrance": BoundaryClass.ENTRANCE, "exit": BoundaryClass.EXIT}
    return aliases.get(value) or BoundaryClass(value)


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients of ``dX = mu(X) dt + sigma(X) dB`` and the discount rate.

    ``discount`` is either a positive float or a callable ``r(x)``. Callables
    must accept numpy arrays; to be usable in Monte Carlo kernels they must
    also compile under numba (plain numpy ufunc arithmetic does).
    """

    mu: Callable
    sigma: Callable
    discount: float | Callable = 0.5
    interval: tuple = (-math.inf, math.inf)
    boundary_lo: BoundaryClass = BoundaryClass.NATURAL
    boundary_hi: BoundaryClass = BoundaryClass.NATURAL
    reference_point: float = 0.0
    preset: str | None = None
    params: Mapping = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "boundary_lo", _as_class(self.boundary_lo))
        object.__setattr__(self, "boundary_hi", _as_class(self.boundary_hi))
        lo, hi = (float(v) for v in self.interval)
        object.__setattr__(self, "interval", (lo, hi))
        if not lo < hi:
            raise DomainError(f"empty interval {self.interval}")
        if not self.contains(self.reference_point):
            raise DomainError(f"reference point {self.reference_point} outside {self.interval}")
        if not callable(self.discount):
            r = float(self.discount)
            if not r > 0:
                raise DomainError(f"discount rate must be positive, got {r}")
            object.__setattr__(self, "discount", r)

    @property
    def lo(self) -> float:
        return self.interval[0]

    @property
    def hi(self) -> float:
        return self.interval[1]

    @property
    def constant_rate(self) -> bool:
        return not callable(self.discount)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x > self.lo) & (x < self.hi)))

    def rate(self, x):
        if self.constant_rate:
            return np.full(np.shape(x), self.discount) if np.ndim(x) else self.discount
        return _broadcast(self.discount, x)

    def drift(self, x):
        return _broadcast(self.mu, x)

    def vol(self, x):
        return _broadcast(self.sigma, x)

    def check_interior(self, x):
        if not self.contains(x):
            raise DomainError(f"state {x} outside the open interval {self.interval}")

    def validate(self, n: int = 2001) -> None:
        """Grid checks of the coefficient invariants; raises DomainError."""
        xs = interior_grid(self.lo, self.hi, self.reference_point, n)
        with np.errstate(all="ignore"):
            s2 = self.vol(xs) ** 2
            m = self.drift(xs)
            r = self.rate(xs)
        if not np.all(np.isfinite(s2)) or np.any(s2 <= 0):
            bad = xs[~(np.isfinite(s2) & (s2 > 0))][0]
            raise DomainError(f"sigma^2 must be positive in the interior; fails at x={bad:.6g}")
        if not np.all(np.isfinite(m)):
            raise DomainError("drift is not finite on the interior grid")
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise DomainError("discount rate must be finite and strictly positive")
        if self.boundary_hi is not BoundaryClass.NATURAL:
            raise DomainError("the upper boundary must be natural")
        if self.boundary_lo is BoundaryClass.REGULAR:
            raise DomainError("regular lower boundaries are not supported")

    def replace(self, **changes) -> "DiffusionSpec":
        from dataclasses import replace
        return replace(self, **changes)


def _broadcast(fn, x):
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        out = np.asarray(fn(x), dtype=float)
    if out.shape != x.shape:
        out = np.broadcast_to(out, x.shape).copy()
    return out if out.ndim else float(out)


def interior_grid(lo, hi, center, n):
    """Points in (lo, hi), geometric toward finite endpoints."""
    half = n // 2
    t = np.linspace(0.0, 1.0, half + 1)[1:]
    if math.isfinite(lo):
        left = lo + (center - lo) * np.power(10.0, -16.0 * t)
    else:
        left = center - (np.power(10.0, 8.0 * t) - 1.0) * max(1.0, abs(center))
    if math.isfinite(hi):
        right = hi - (hi - center) * np.power(10.0, -16.0 * t)
    else:
        right = center + (np.power(10.0, 8.0 * t) - 1.0) * max(1.0, abs(center))
    return np.unique(np.concatenate([left, [center], right]))


# ------------------------------------------------------------------ presets

def _const(c):
    c = float(c)

    def f(x):
        return c + 0.0 * x
    return f


def _linear(a):
    a = float(a)

    def f(x):
        return a * x
    return f


def brownian_motion(drift=0.0, vol=1.0, rate=0.5, reference_point=0.0):
    """Brownian motion with drift on the real line."""
    return DiffusionSpec(_const(drift), _const(vol), rate, (-math.inf, math.inf),
                         "natural", "natural", reference_point, preset="bm",
                         params={"drift": float(drift), "vol": float(vol)},
                         name="brownian motion")


def geometric_brownian_motion(drift=0.0, vol=1.0, rate=1.0, reference_point=1.0):
    """``dX = a X dt + b X dB`` on (0, inf)."""
    return DiffusionSpec(_linear(drift), _linear(vol), rate, (0.0, math.inf),
                         "natural", "natural", reference_point, preset="gbm",
                         params={"drift": float(drift), "vol": float(vol)},
                         name="geometric brownian motion")


def bessel(dimension=3.0, rate=0.5, reference_point=1.0):
    """Bessel process of the given dimension (>= 2) on (0, inf)."""
    if dimension < 2:
        raise DomainError("Bessel processes of dimension < 2 reach zero; not supported")
    c = 0.5 * (float(dimension) - 1.0)

    def mu(x):
        return c / x
    return DiffusionSpec(mu, _const(1.0), rate, (0.0, math.inf),
                         "entrance_not_exit", "natural", reference_point, preset="bessel",
                         params={"dimension": float(dimension)}, name="bessel")


def squared_bessel(dimension=0.0, rate=1.0, reference_point=1.0):
    """Squared Bessel process ``dX = delta dt + 2 sqrt(X) dB`` on (0, inf)."""
    d = float(dimension)
    if 0 < d < 2:
        raise DomainError("squared Bessel processes with 0 < dimension < 2 are "
                          "reflected at zero; not supported")
    lower = "exit_not_entrance" if d <= 0 else "entrance_not_exit"

    def sigma(x):
        return 2.0 * np.sqrt(x)
    return DiffusionSpec(_const(d), sigma, rate, (0.0, math.inf), lower, "natural",
                         reference_point, preset="besq", params={"dimension": d},
                         name="squared bessel")


# ------------------------------------------------------- fundamental pairs

class FundamentalPair:
    """Evaluable psi, phi (with derivatives), scale and speed densities.

    Subclasses provide the log-space primitives ``log_psi``, ``dlog_psi``,
    ``log_phi``, ``dlog_phi`` and ``log_scale``; everything else is derived.
    ``domain`` is the evaluation window used for grids and limits.
    """

    representation = "abstract"

    def __init__(self, spec: DiffusionSpec):
        self.spec = spec
        self.domain = spec.interval

    # primitives -------------------------------------------------------
    def log_psi(self, x):
        raise NotImplementedError

    def dlog_psi(self, x):
        raise NotImplementedError

    def log_phi(self, x):
        raise NotImplementedError

    def dlog_phi(self, x):
        raise NotImplementedError

    def log_scale(self, x):
        raise NotImplementedError

    # derived ------------------------------------------------------------
    def psi(self, x):
        return np.exp(self.log_psi(x))

    def phi(self, x):
        return np.exp(self.log_phi(x))

    def dpsi(self, x):
        return self.dlog_psi(x) * self.psi(x)

    def dphi(self, x):
        return self.dlog_phi(x) * self.phi(x)

    def _second(self, u, du, x):
        s = self.spec
        return 2.0 * (s.rate(x) * u - s.drift(x) * du) / s.vol(x) ** 2

    def d2psi(self, x):
        return self._second(self.psi(x), self.dpsi(x), x)

    def d2phi(self, x):
        return self._second(self.phi(x), self.dphi(x), x)

    def scale_density(self, x):
        return np.exp(self.log_scale(x))

    def speed_density(self, x):
        return 2.0 / (self.spec.vol(x) ** 2 * self.scale_density(x))

    def log_F(self, x):
        return self.log_psi(x) - self.log_phi(x)

    def dlog_F(self, x):
        return self.dlog_psi(x) - self.dlog_phi(x)

    def wronskian_at(self, x):
        """``(psi' phi - phi' psi)/S'`` evaluated pointwise."""
        return self.dlog_F(x) * np.exp(self.log_psi(x) + self.log_phi(x) - self.log_scale(x))

    @property
    def wronskian(self) -> float:
        return float(self.wronskian_at(self.spec.reference_point))

    def rescaled(self, a: float, b: float) -> "FundamentalPair":
        """The pair ``(a psi, b phi)``."""
        return _ScaledPair(self, a, b)

    def _finv_closed(self, logy):
        return None


class _ScaledPair(FundamentalPair):
    def __init__(self, base, a, b):
        super().__init__(base.spec)
        self.base = base
        self.la, self.lb = math.log(a), math.log(b)
        self.domain = base.domain
        self.representation = base.representation

    def log_psi(self, x):
        return self.base.log_psi(x) + self.la

    def dlog_psi(self, x):
        return self.base.dlog_psi(x)

    def log_phi(self, x):
        return self.base.log_phi(x) + self.lb

    def dlog_phi(self, x):
        return self.base.dlog_phi(x)

    def log_scale(self, x):
        return self.base.log_scale(x)

    def _finv_closed(self, logy):
        return self.base._finv_closed(logy - (self.la - self.lb))


def _arr(x):
    return np.asarray(x, dtype=float)


def _out(v, x):
    return v if np.ndim(x) else float(np.asarray(v).reshape(-1)[0])


class _BMPair(FundamentalPair):
    representation = "closed_form_preset"

    def __init__(self, spec):
        super().__init__(spec)
        m, s, r = spec.params["drift"], spec.params["vol"], spec.discount
        disc = math.sqrt(m * m + 2.0 * r * s * s)
        self.bp = (-m + disc) / (s * s)
        self.bm = (-m - disc) / (s * s)
        self.k = -2.0 * m / (s * s)
        self.xo = spec.reference_point

    def log_psi(self, x):
        return self.bp * (_arr(x) - self.xo) if np.ndim(x) else self.bp * (x - self.xo)

    def dlog_psi(self, x):
        return _out(np.full(np.shape(x), self.bp), x)

    def log_phi(self, x):
        return self.bm * (_arr(x) - self.xo) if np.ndim(x) else self.bm * (x - self.xo)

    def dlog_phi(self, x):
        return _out(np.full(np.shape(x), self.bm), x)

    def log_scale(self, x):
        return self.k * (_arr(x) - self.xo) if np.ndim(x) else self.k * (x - self.xo)

    def _finv_closed(self, logy):
        return self.xo + logy / (self.bp - self.bm)


class _GBMPair(FundamentalPair):
    representation = "closed_form_preset"

    def __init__(self, spec):
        super().__init__(spec)
        a, b, r = spec.params["drift"], spec.params["vol"], spec.discount
        # 1/2 b^2 beta^2 + (a - b^2/2) beta - r = 0
        A, B = 0.5 * b * b, a - 0.5 * b * b
        disc = math.sqrt(B * B + 4.0 * A * r)
        self.bp = (-B + disc) / (2 * A)
        self.bm = (-B - disc) / (2 * A)
        self.k = -2.0 * a / (b * b)
        self.xo = spec.reference_point

    def _lx(self, x):
        return np.log(_arr(x) / self.xo)

    def log_psi(self, x):
        return _out(self.bp * self._lx(x), x)

    def dlog_psi(self, x):
        return _out(self.bp / _arr(x), x)

    def log_phi(self, x):
        return _out(self.bm * self._lx(x), x)

    def dlog_phi(self, x):
        return _out(self.bm / _arr(x), x)

    def log_scale(self, x):
        return _out(self.k * self._lx(x), x)

    def _finv_closed(self, logy):
        return self.xo * np.exp(logy / (self.bp - self.bm))


def _log_sinh(z):
    return z + np.log(-np.expm1(-2.0 * z)) - math.log(2.0)


def _coth_minus_inv(z):
    """coth(z) - 1/z, accurate for small z."""
    z = _arr(z)
    out = np.empty_like(z)
    small = z < 1e-2
    zs = z[small]
    out[small] = zs / 3.0 - zs ** 3 / 45.0 + 2.0 * zs ** 5 / 945.0
    zl = z[~small]
    out[~small] = 1.0 / np.tanh(zl) - 1.0 / zl
    return out


class _Bessel3Pair(FundamentalPair):
    """psi ~ sinh(kx)/x, phi ~ exp(-kx)/x, k = sqrt(2r)."""

    representation = "closed_form_preset"

    def __init__(self, spec):
        super().__init__(spec)
        self.kk = math.sqrt(2.0 * spec.discount)
        self.xo = spec.reference_point
        self.c_psi = float(_log_sinh(self.kk * self.xo)) - math.log(self.xo)
        self.c_phi = -self.kk * self.xo - math.log(self.xo)

    def log_psi(self, x):
        x = _arr(x)
        return _out(_log_sinh(self.kk * x) - np.log(x) - self.c_psi, x)

    def dlog_psi(self, x):
        x = _arr(x)
        return _out(self.kk * _coth_minus_inv(self.kk * x), x)

    def log_phi(self, x):
        x = _arr(x)
        return _out(-self.kk * x - np.log(x) - self.c_phi, x)

    def dlog_phi(self, x):
        x = _arr(x)
        return _out(-self.kk - 1.0 / x, x)

    def log_scale(self, x):
        return _out(-2.0 * np.log(_arr(x) / self.xo), x)


class _BesqZeroPair(FundamentalPair):
    """psi ~ sqrt(x) I_1(z), phi ~ sqrt(x) K_1(z), z = sqrt(2 r x)."""

    representation = "closed_form_preset"

    def __init__(self, spec):
        super().__init__(spec)
        self.r = spec.discount
        self.xo = spec.reference_point
        self.c_psi = float(self._lpsi(np.array(self.xo)))
        self.c_phi = float(self._lphi(np.array(self.xo)))

    def _z(self, x):
        return np.sqrt(2.0 * self.r * x)

    def _lpsi(self, x):
        z = self._z(x)
        return 0.5 * np.log(x) + np.log(special.ive(1, z)) + z

    def _lphi(self, x):
        z = self._z(x)
        return 0.5 * np.log(x) + np.log(special.kve(1, z)) - z

    def log_psi(self, x):
        return _out(self._lpsi(_arr(x)) - self.c_psi, x)

    def log_phi(self, x):
        return _out(self._lphi(_arr(x)) - self.c_phi, x)

    def dlog_psi(self, x):
        x = _arr(x)
        z = self._z(x)
        return _out(math.sqrt(self.r / 2) * special.ive(0, z) / (np.sqrt(x) * special.ive(1, z)), x)

    def dlog_phi(self, x):
        x = _arr(x)
        z = self._z(x)
        return _out(-math.sqrt(self.r / 2) * special.kve(0, z) / (np.sqrt(x) * special.kve(1, z)), x)

    def log_scale(self, x):
        return _out(np.zeros(np.shape(x)), x)


def _closed_form(spec):
    if not spec.constant_rate or spec.preset is None:
        return None
    if spec.preset == "bm":
        return _BMPair(spec)
    if spec.preset == "gbm":
        return _GBMPair(spec)
    if spec.preset == "bessel" and spec.params.get("dimension") == 3.0:
        return _Bessel3Pair(spec)
    if spec.preset == "besq" and spec.params.get("dimension") == 0.0:
        return _BesqZeroPair(spec)
    return None


# ------------------------------------------------------- numerical branch

class _Map:
    """Integration coordinate ``s`` with ``x = g(s)``.

    ``g`` is logarithmic near finite endpoints and linear toward infinite
    ones (a softplus), so singular coefficients such as ``1/x`` do not make
    the Riccati equation stiff while Brownian-like tails stay cheap.
    """

    def __init__(self, lo, hi, xo):
        self.lo, self.hi = lo, hi
        self.kind = (math.isfinite(lo), math.isfinite(hi))
        if self.kind == (True, False):
            self.c = xo - lo
        elif self.kind == (False, True):
            self.c = hi - xo
        else:
            self.c = 1.0

    def x_of(self, s):
        lo, hi, c = self.lo, self.hi, self.c
        fl, fh = self.kind
        if fl and fh:
            return lo + (hi - lo) * special.expit(s)
        if fl:
            return lo + c * np.logaddexp(0.0, s)
        if fh:
            return hi - c * np.logaddexp(0.0, -s)
        return s

    def s_of(self, x):
        lo, hi, c = self.lo, self.hi, self.c
        fl, fh = self.kind
        if fl and fh:
            return np.log(x - lo) - np.log(hi - x)
        if fl:
            t = (x - lo) / c
            return np.where(t > 30, t + np.log(-np.expm1(-t)), np.log(np.expm1(np.minimum(t, 30))))
        if fh:
            t = (hi - x) / c
            return -np.where(t > 30, t + np.log(-np.expm1(-t)), np.log(np.expm1(np.minimum(t, 30))))
        return x

    def derivs(self, s):
        lo, hi, c = self.lo, self.hi, self.c
        fl, fh = self.kind
        if fl and fh:
            p = special.expit(s)
            d1 = (hi - lo) * p * (1 - p)
            return d1, d1 * (1 - 2 * p)
        if fl:
            p = special.expit(s)
            return c * p, c * p * (1 - p)
        if fh:
            p = special.expit(-s)
            return c * p, -c * p * (1 - p)
        return 1.0, 0.0


@dataclass
class _Pass:
    sol: object
    lo: float
    hi: float
    cmap: _Map


class NumericalPair(FundamentalPair):
    """psi, phi from Riccati integration of the log-derivative.

    With ``w = u'/u`` the ODE becomes ``w' = 2(r - mu w)/sigma^2 - w^2`` and
    ``(log u)' = w``. The increasing solution is integrated upward from a
    truncated lower end, the decreasing one downward from a truncated upper
    end; both directions are the numerically stable ones, so the error from
    the truncated initial condition decays away from the endpoint.
    Near finite endpoints the integration variable is logarithmic, which
    removes the stiffness of singular coefficients such as ``1/x``.
    Truncations are pushed outward until consecutive solutions agree; the
    agreement window becomes the evaluation domain.
    """

    representation = "numerical_grid"

    def __init__(self, spec, psi_pass, phi_pass, domain, grid):
        super().__init__(spec)
        self._psi = psi_pass
        self._phi = phi_pass
        xo = spec.reference_point
        self._c = (self._eval(psi_pass, xo, 1), self._eval(phi_pass, xo, 1),
                   self._eval(psi_pass, xo, 2))
        self.domain = domain
        self.grid = grid
        self.interpolation_order = 7  # DOP853 dense output

    def _eval(self, p, x, row):
        x = _arr(x)
        if np.any(x < p.lo) or np.any(x > p.hi):
            raise DomainError(f"x outside the solved window [{p.lo:.6g}, {p.hi:.6g}]")
        s = p.cmap.s_of(x)
        v = p.sol(s)[row]
        if row == 0:
            v = v / p.cmap.derivs(s)[0]
        return v

    def log_psi(self, x):
        return _out(self._eval(self._psi, x, 1) - self._c[0], x)

    def dlog_psi(self, x):
        return _out(self._eval(self._psi, x, 0), x)

    def log_phi(self, x):
        return _out(self._eval(self._phi, x, 1) - self._c[1], x)

    def dlog_phi(self, x):
        return _out(self._eval(self._phi, x, 0), x)

    def log_scale(self, x):
        return _out(self._eval(self._psi, x, 2) - self._c[2], x)


def _frozen_root(spec, cmap, s, sign):
    """Root of the Riccati right-hand side with coefficients frozen at ``s``.

    Taken in the integration coordinate, this matches the leading behaviour
    at regular-singular endpoints (e.g. ``u ~ x`` or ``u ~ 1/x`` at zero).
    """
    x = float(cmap.x_of(s))
    d1, d2 = cmap.derivs(s)
    m = float(spec.drift(x))
    s2 = float(spec.vol(x)) ** 2
    r = float(spec.rate(x))
    # -v^2 + B v + C = 0
    B = d2 / d1 - 2.0 * m * d1 / s2
    C = 2.0 * d1 * d1 * r / s2
    disc = math.sqrt(B * B + 4.0 * C)
    return 0.5 * (B + sign * disc)


def _riccati_pass(spec, start, end, sign, rtol):
    """Integrate ``v = d log u / ds`` from ``start`` to ``end``."""
    mu, sig, rate = spec.mu, spec.sigma, spec.discount
    const = spec.constant_rate
    cmap = _Map(spec.lo, spec.hi, spec.reference_point)

    def rhs(s, y):
        x = float(cmap.x_of(s))
        d1, d2 = cmap.derivs(s)
        s2 = float(sig(x)) ** 2
        m = float(mu(x))
        r = rate if const else float(rate(x))
        v = y[0]
        dv = (d2 / d1) * v + 2.0 * d1 * d1 * r / s2 - 2.0 * m * d1 * v / s2 - v * v
        return [dv, v, -2.0 * m * d1 / s2]

    s0, s1 = float(cmap.s_of(start)), float(cmap.s_of(end))
    y0 = [_frozen_root(spec, cmap, s0, sign), 0.0, 0.0]
    res = integrate.solve_ivp(rhs, (s0, s1), y0, method="DOP853", rtol=rtol,
                              atol=1e-14, dense_output=True)
    if not res.success:
        raise SolveFailure(f"integration from {start:.6g} failed: {res.message}")
    lo, hi = min(start, end), max(start, end)
    return _Pass(res.sol, lo, hi, cmap)


def _trunc_lo(spec, k):
    lo, xo = spec.lo, spec.reference_point
    if math.isfinite(lo):
        tiny = 64 * np.finfo(float).eps * max(abs(lo), 1e-300)
        return lo + max((xo - lo) * 10.0 ** (-2 * k - 2), tiny)
    return xo - 8.0 ** (k + 1) * max(1.0, abs(xo))


def _trunc_hi(spec, k):
    hi, xo = spec.hi, spec.reference_point
    if math.isfinite(hi):
        tiny = 64 * np.finfo(float).eps * max(abs(hi), 1e-300)
        return hi - max((hi - xo) * 10.0 ** (-2 * k - 2), tiny)
    return xo + 8.0 ** (k + 1) * max(1.0, abs(xo))


def _agreement(cur, prev, xo):
    """Largest window around ``xo`` where two truncations agree on ``u'/u``."""
    pa, pb = prev.domain
    xs = interior_grid(cur.spec.lo, cur.spec.hi, xo, 1601)
    xs = xs[(xs > pa) & (xs < pb)]
    wp, wf = cur.dlog_psi(xs), cur.dlog_phi(xs)
    err = np.abs(wp - prev.dlog_psi(xs)) + np.abs(wf - prev.dlog_phi(xs))
    ok = err <= 1e-8 * (np.abs(wp) + np.abs(wf))
    io = min(int(np.searchsorted(xs, xo)), len(xs) - 1)
    if not ok[io]:
        return None
    left = right = io
    while left > 0 and ok[left - 1]:
        left -= 1
    while right < len(ok) - 1 and ok[right + 1]:
        right += 1
    return xs[left], xs[right]


def _solve_numerical(spec, rtol=1e-13, max_refine=14, y_span=Y_SPAN_NUMERICAL):
    """Refine each truncated end until the solutions agree over the target span."""
    xo = spec.reference_point
    need = math.log(y_span)
    klo = khi = 0
    frozen_a = frozen_b = None
    prev = None
    for _ in range(2 * max_refine):
        a, b = _trunc_lo(spec, klo), _trunc_hi(spec, khi)
        pp = _riccati_pass(spec, a, b, +1.0, rtol)
        pf = _riccati_pass(spec, b, a, -1.0, rtol)
        cur = NumericalPair(spec, pp, pf, (a, b), None)
        window = _agreement(cur, prev, xo) if prev is not None else None
        prev = cur
        if window is None:
            klo, khi = klo + 1, khi + 1
            continue
        xa = frozen_a if frozen_a is not None else window[0]
        xb = frozen_b if frozen_b is not None else window[1]
        if frozen_a is None and (cur.log_F(xa) <= -need or klo >= max_refine):
            frozen_a = xa
        if frozen_b is None and (cur.log_F(xb) >= need or khi >= max_refine):
            frozen_b = xb
        if frozen_a is not None and frozen_b is not None:
            return _finish_numerical(cur, frozen_a, frozen_b, y_span)
        klo += frozen_a is None
        khi += frozen_b is None
    raise SolveFailure("fundamental solutions did not stabilise under truncation refinement")


def _finish_numerical(pair, xa, xb, y_span):
    lfa, lfb = pair.log_F(xa), pair.log_F(xb)
    if lfb - lfa < 2 * math.log(1e4):
        raise SolveFailure("usable window of the numerical solution is too narrow")
    need = math.log(y_span)
    grid = interior_grid(xa, xb, pair.spec.reference_point, 2049)
    grid = grid[(grid >= xa) & (grid <= xb)]
    lf = pair.log_F(grid)
    a = xa if lfa >= -need else float(np.interp(-need, lf, grid))
    b = xb if lfb <= need else float(np.interp(need, lf, grid))
    pair.domain = (a, b)
    pair.grid = grid
    return pair


def solve_fundamental(spec: DiffusionSpec, method: str = "auto", rtol: float = 1e-13) -> FundamentalPair:
    """Construct psi, phi for ``spec``.

    ``method`` is ``"auto"`` (closed form when available), ``"closed_form"``
    or ``"numerical"``.
    """
    spec.validate()
    if method not in ("auto", "closed_form", "numerical"):
        raise ValueError(f"unknown method {method!r}")
    pair = None
    if method in ("auto", "closed_form"):
        pair = _closed_form(spec)
        if pair is None and method == "closed_form":
            raise SolveFailure(f"no closed form for preset {spec.preset!r}")
    if pair is None:
        pair = _solve_numerical(spec, rtol=rtol)
    else:
        _set_closed_domain(pair)
    return pair


def _set_closed_domain(pair, y_span=Y_SPAN):
    spec = pair.spec
    ctx = TransformContext(pair, _skip_domain=True)
    yo = ctx.F(spec.reference_point)
    a = ctx._bisect_x(math.log(yo / y_span), spec.lo, spec.reference_point)
    b = ctx._bisect_x(math.log(yo * y_span), spec.reference_point, spec.hi)
    pair.domain = (a, b)


# ------------------------------------------------------------- transform

class TransformContext:
    """Coordinates ``y = F(x) = psi(x)/phi(x)`` for a fundamental pair."""

    def __init__(self, pair: FundamentalPair, _skip_domain=False):
        self.pair = pair
        self.spec = pair.spec
        if not _skip_domain:
            a, b = pair.domain
            self.x_lo, self.x_hi = float(a), float(b)
            self.y_lo, self.y_hi = float(self.F(a)), float(self.F(b))
            n = 1025
            self._tx = interior_grid(a, b, self.spec.reference_point, n)
            self._tx = np.unique(np.concatenate([[a], self._tx[(self._tx > a) & (self._tx < b)], [b]]))
            self._tl = pair.log_F(self._tx)

    @classmethod
    def from_spec(cls, spec: DiffusionSpec, method="auto") -> "TransformContext":
        return cls(solve_fundamental(spec, method))

    @property
    def wronskian(self):
        return self.pair.wronskian

    def F(self, x):
        return np.exp(self.pair.log_F(x))

    def log_F(self, x):
        return self.pair.log_F(x)

    def dF(self, x):
        return self.pair.dlog_F(x) * self.F(x)

    def F_inv(self, y):
        y = _arr(y)
        if np.any(y <= 0):
            raise DomainError("transformed coordinates must be positive")
        ly = np.log(y)
        closed = self.pair._finv_closed(ly)
        if closed is not None:
            return _out(closed, y)
        if np.any(ly < self._tl[0] - 1e-12) or np.any(ly > self._tl[-1] + 1e-12):
            raise DomainError(f"y outside the evaluation window [{self.y_lo:.3g}, {self.y_hi:.3g}]")
        return _out(self._newton_inv(ly), y)

    def _newton_inv(self, ly):
        ly = np.atleast_1d(ly)
        tx, tl = self._tx, self._tl
        j = np.clip(np.searchsorted(tl, ly), 1, len(tx) - 1)
        a, b = tx[j - 1].copy(), tx[j].copy()
        x = np.interp(ly, tl, tx)
        for _ in range(60):
            g = self.pair.log_F(x) - ly
            a = np.where(g < 0, x, a)
            b = np.where(g > 0, x, b)
            step = g / self.pair.dlog_F(x)
            xn = x - step
            bad = ~((xn > a) & (xn < b)) | ~np.isfinite(xn)
            xn = np.where(bad, 0.5 * (a + b), xn)
            done = np.abs(xn - x) <= 4e-16 * np.abs(x) + 1e-300
            x = xn
            if np.all(done):
                break
        return x

    def _bisect_x(self, target, lo, hi):
        """Scalar x with log F(x) = target on (lo, hi); endpoints may be infinite."""
        f = lambda x: float(self.pair.log_F(x)) - target  # noqa: E731
        a = self.spec.reference_point
        b = a
        step = max(1.0, abs(a))
        if f(a) > 0:
            # move toward lo
            for _ in range(2000):
                if math.isfinite(lo):
                    cand = lo + 0.5 * (a - lo)
                    if cand <= lo or cand == a:
                        return a
                else:
                    cand = a - step
                    step *= 2.0
                with np.errstate(all="ignore"):
                    v = f(cand)
                if not math.isfinite(v):
                    return a
                b, a = a, cand
                if v <= 0:
                    break
            lo_b, hi_b = a, b
        else:
            for _ in range(2000):
                if math.isfinite(hi):
                    cand = hi - 0.5 * (hi - b)
                    if cand >= hi or cand == b:
                        return b
                else:
                    cand = b + step
                    step *= 2.0
                with np.errstate(all="ignore"):
                    v = f(cand)
                if not math.isfinite(v):
                    return b
                a, b = b, cand
                if v >= 0:
                    break
            lo_b, hi_b = a, b
        from scipy.optimize import brentq
        return brentq(f, lo_b, hi_b, xtol=1e-300, rtol=4 * np.finfo(float).eps)

    def grid(self, n: int, lo=None, hi=None):
        """``n`` points uniform in log y over the evaluation window."""
        ya = self.y_lo if lo is None else lo
        yb = self.y_hi if hi is None else hi
        ys = np.geomspace(ya, yb, n)
        return self.F_inv(ys)

    def x_of(self, y):
        return self.F_inv(y)


# ---------------------------------------------------------------- Laplace

def laplace_hitting(ctx: TransformContext, x, y) -> float:
    """``E_x[exp(-int r dt) ; tau(y) < inf]`` via the fundamental solutions."""
    spec = ctx.spec
    spec.check_interior(x)
    spec.check_interior(y)
    p = ctx.pair
    if x == y:
        return 1.0
    if x < y:
        return float(np.exp(p.log_psi(x) - p.log_psi(y)))
    return float(np.exp(p.log_phi(x) - p.log_phi(y)))


def _tail_points(x, end, domain_end, n=60):
    """Geometric sequence of points from x toward an endpoint, stopping at the window."""
    pts = [x]
    if math.isfinite(end):
        for k in range(1, n):
            pts.append(end + (x - end) * 2.0 ** (-k))
    else:
        sgn = 1.0 if end > 0 else -1.0
        for k in range(n):
            pts.append(x + sgn * 2.0 ** (k - 2))
    pts = np.asarray(pts)
    if end > x:
        pts = pts[pts <= domain_end]
        if pts[-1] < domain_end:
            pts = np.append(pts, domain_end)
    else:
        pts = pts[pts >= domain_end]
        if pts[-1] > domain_end:
            pts = np.append(pts, domain_end)
    return pts


def _improper(fn, pts, rtol):
    total = 0.0
    contributions = []
    for a, b in zip(pts[:-1], pts[1:]):
        val, _err = integrate.quad(fn, min(a, b), max(a, b), epsabs=0.0, epsrel=1e-11, limit=200)
        contributions.append(abs(val))
        total += val
    if not np.isfinite(total):
        raise IntegralDivergence("improper integral is not finite")
    tail = contributions[-4:]
    decaying = all(b < 0.5 * a for a, b in zip(tail[:-1], tail[1:])) or (
        all(b < a for a, b in zip(tail[1:-1], tail[2:])) and tail[-1] < 0.1 * tail[-2])
    if len(contributions) >= 4 and max(tail[1:]) > rtol * max(abs(total), 1e-300) and \
            not (tail[-1] < tail[1] * 1e-3) and not decaying:
        raise IntegralDivergence("improper integral did not converge toward the endpoint")
    return total


def resolvent_eval(ctx: TransformContext, f: Callable, x: float, rtol: float = 1e-8) -> float:
    """``int f(y) G(x, y) m'(y) dy`` with Green kernel ``psi(x^y) phi(x v y)/W``."""
    spec = ctx.spec
    spec.check_interior(x)
    p = ctx.pair
    W = p.wronskian

    def left(y):
        return float(f(y)) * 2.0 / float(spec.vol(y)) ** 2 * math.exp(
            float(p.log_psi(y) - p.log_scale(y) + p.log_phi(x)))

    def right(y):
        return float(f(y)) * 2.0 / float(spec.vol(y)) ** 2 * math.exp(
            float(p.log_phi(y) - p.log_scale(y) + p.log_psi(x)))

    lo_pts = _tail_points(x, spec.lo, ctx.x_lo)
    hi_pts = _tail_points(x, spec.hi, ctx.x_hi)
    return (_improper(left, lo_pts, rtol) + _improper(right, hi_pts, rtol)) / W


# ---------------------------------------------------------- Feller tests

@dataclass(frozen=True)
class BoundaryReport:
    end: str
    declared: BoundaryClass
    inferred: BoundaryClass
    attainable: bool  # first Feller integral finite
    enterable: bool  # second Feller integral finite
    u_levels: tuple
    v_levels: tuple
    confidence: str

    @property
    def matches(self) -> bool:
        return self.declared is self.inferred

    def to_dict(self):
        return {"end": self.end, "declared": self.declared.value,
                "inferred": self.inferred.value, "matches": self.matches,
                "attainable": self.attainable, "enterable": self.enterable,
                "confidence": self.confidence}


def _feller_grid(spec, end, per_decade=200):
    c = spec.reference_point
    e = spec.lo if end == "lower" else spec.hi
    if math.isfinite(e):
        span = abs(c - e)
        floor = 64 * np.finfo(float).eps * abs(e) if e != 0 else 1e-300
        decades = min(16.0, math.log10(span / floor) - 0.5)
        s = np.linspace(0.0, decades, int(decades * per_decade) + 1)
        dist = span * 10.0 ** (-s)
        x = e + math.copysign(1.0, c - e) * dist
        dxds = dist * math.log(10.0)
    else:
        decades = 8.0
        s = np.linspace(0.0, decades, int(decades * per_decade) + 1)
        scale = max(1.0, abs(c))
        off = (10.0 ** s - 1.0) * scale
        x = c + math.copysign(1.0, e) * off
        dxds = 10.0 ** s * scale * math.log(10.0)
    return s, x, dxds


def _verdict(levels):
    v = np.asarray(levels)
    if not np.all(np.isfinite(v)):
        return False, "high"
    d = np.diff(v)
    d = np.abs(d[-3:])
    tiny = 1e-300
    rho = d[1:] / np.maximum(d[:-1], tiny)
    if np.all(rho < 0.5) and d[-1] <= 1e-3 * max(abs(v[-1]), tiny):
        return True, "high"
    if np.all(rho >= 0.85):
        return False, "high"
    if np.all(rho < 0.8) and d[-1] <= 1e-2 * max(abs(v[-1]), tiny):
        return True, "low"
    raise NonConvergentIntegral(f"Feller integral increments do not settle: ratios {rho}")


def classify_boundary(spec: DiffusionSpec, end: str = "lower") -> BoundaryReport:
    """Numerical Feller test of one endpoint.

    ``u = int M(x, c] dS`` finite means the boundary is attainable and
    ``v = int S[x, c] dM`` finite means the process can start there. The
    declared class is reported alongside; a mismatch is not an error.
    """
    if end not in ("lower", "upper"):
        raise ValueError("end must be 'lower' or 'upper'")
    s, x, dxds = _feller_grid(spec, end)
    with np.errstate(all="ignore"):
        q = 2.0 * spec.drift(x) / spec.vol(x) ** 2
        sign = 1.0 if end == "lower" else -1.0
        log_scale = sign * integrate.cumulative_trapezoid(q * dxds, s, initial=0.0)
        S1 = np.exp(log_scale)
        m1 = 2.0 / (spec.vol(x) ** 2 * S1)
        M = integrate.cumulative_trapezoid(m1 * dxds, s, initial=0.0)
        Sx = integrate.cumulative_trapezoid(S1 * dxds, s, initial=0.0)
        u = integrate.cumulative_trapezoid(M * S1 * dxds, s, initial=0.0)
        v = integrate.cumulative_trapezoid(Sx * m1 * dxds, s, initial=0.0)
    per = int(round((len(s) - 1) / s[-1]))
    idx = np.arange(per, len(s), per)
    ul, vl = u[idx], v[idx]
    ufin, c1 = _verdict(ul)
    vfin, c2 = _verdict(vl)
    if ufin and vfin:
        inferred = BoundaryClass.REGULAR
    elif ufin:
        inferred = BoundaryClass.EXIT
    elif vfin:
        inferred = BoundaryClass.ENTRANCE
    else:
        inferred = BoundaryClass.NATURAL
    declared = spec.boundary_lo if end == "lower" else spec.boundary_hi
    conf = "high" if c1 == c2 == "high" else "low"
    return BoundaryReport(end, declared, inferred, ufin, vfin,
                          tuple(float(t) for t in ul), tuple(float(t) for t in vl), conf)


__all__ = [
    "BoundaryClass", "DiffusionSpec", "FundamentalPair", "NumericalPair",
    "TransformContext", "BoundaryReport", "brownian_motion", "geometric_brownian_motion",
    "bessel", "squared_bessel", "solve_fundamental", "laplace_hitting",
    "resolvent_eval", "classify_boundary", "interior_grid",
]

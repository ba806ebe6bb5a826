"""Best replies, the threshold system and its regime-specific variants.

Everything is solved in the transformed coordinates ``y = F(x)`` where the
smooth-fit conditions become tangency conditions:

    ell_i(u, v) = Ghat_i(u) - Lhat_i(v) - Ghat_i'(u) (u - v)

``ell_2(., zeta)`` vanishes at player 2's best reply to a lower threshold
``zeta`` and ``ell_1(., zeta)`` at player 1's best reply to an upper one. An
interior equilibrium is a root of ``u -> ell_2(u, y_1(u))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy.optimize import brentq

from .costs import AssumptionReport, CostProfile, _limit, check_assumptions, classify_cost, endpoint_points
from .diffusion import BoundaryClass, DiffusionSpec, TransformContext
from .errors import BracketFailure, DomainError, NoRegimeApplies, NoTangent
from .payoff import PiecewisePayoff, rule_payoffs
from .strategies import Rule, StrategyPair

SCAN_POINTS = 512
BRACKET_BUDGET = 64
TIE_TOL = 1e-8

REGIMES = ("interior_thresholds", "p1_never_stops", "p2_never_stops", "exit_two_regime",
           "relaxed_p1_stops", "relaxed_p2_stops", "relaxed_both")


# ------------------------------------------------------------------- game

@dataclass
class GameSpec:
    spec: DiffusionSpec
    ctx: TransformContext
    G1: CostProfile
    G2: CostProfile
    L1: CostProfile
    L2: CostProfile
    assumption_report: AssumptionReport | None = None

    def cost(self, name: str) -> CostProfile:
        return getattr(self, name)


def build_game(spec: DiffusionSpec, G1, G2, L1, L2, ctx: TransformContext | None = None,
               grid_points: int = 4096, method: str = "auto") -> GameSpec:
    """Classify the four costs on a shared transform and check the assumptions."""
    if ctx is None:
        ctx = TransformContext.from_spec(spec, method)
    profiles = {name: classify_cost(spec, ctx, H, grid_points=grid_points, name=name)
                for name, H in (("G1", G1), ("G2", G2), ("L1", L1), ("L2", L2))}
    game = GameSpec(spec, ctx, **profiles)
    game.assumption_report = check_assumptions(game)
    return game


# --------------------------------------------------------------- ell maps

def _pair(game, i):
    return (game.G1, game.L1) if i == 1 else (game.G2, game.L2)


def ell(game, i: int, u, v):
    """``Ghat_i(u) - Lhat_i(v) - Ghat_i'(u) (u - v)``."""
    u_arr, v_arr = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if np.any(u_arr <= 0) or np.any(v_arr <= 0):
        raise DomainError("ell is defined for positive transformed coordinates only")
    G, L = _pair(game, i)
    xu = game.ctx.F_inv(u_arr)
    _, g, gp = G.hat.at_x(xu)
    lv = L.hat(v_arr)
    out = g - lv - gp * (u_arr - v_arr)
    return float(out) if np.ndim(out) == 0 else out


def _ell_x(G, lv, v, x):
    y, g, gp = G.hat.at_x(x)
    return g - lv - gp * (y - v)


def _vec_bisect(fn, a, b, fa, maxit=400):
    """Elementwise bisection in x; ``fn`` maps arrays to arrays."""
    a, b, fa = a.copy(), b.copy(), fa.copy()
    for _ in range(maxit):
        m = 0.5 * (a + b)
        done = (m <= np.minimum(a, b)) | (m >= np.maximum(a, b))
        if np.all(done):
            break
        fm = fn(m)
        same = (np.sign(fm) == np.sign(fa)) & ~done
        a = np.where(same, m, a)
        fa = np.where(same, fm, fa)
        b = np.where(~same & ~done, m, b)
    fb = fn(b)
    return np.where(np.abs(fa) < np.abs(fb), a, b)


def _ladder(ctx, start, up: bool):
    ys = start * (2.0 ** (np.arange(BRACKET_BUDGET + 1) if up else -np.arange(BRACKET_BUDGET + 1)))
    if up:
        ys = ys[ys < ctx.y_hi]
        ys = np.append(ys, ctx.y_hi)
    else:
        ys = ys[ys > ctx.y_lo]
        ys = np.append(ys, ctx.y_lo)
    return ys


def _best_reply(game, i, zeta, up, start):
    G, L = _pair(game, i)
    ctx = game.ctx
    z = np.atleast_1d(np.asarray(zeta, dtype=float))
    if np.any(z <= 0):
        raise DomainError("zeta must be positive")
    ladder = _ladder(ctx, start, up)
    lx = ctx.F_inv(ladder)
    ly, lg, ls = G.hat.at_x(lx)
    lv = L.hat(z)
    M = lg[None, :] - lv[:, None] - ls[None, :] * (ly[None, :] - z[:, None])
    neg = M < 0
    has = neg.any(axis=1) & (M[:, 0] > 0)
    j = np.argmax(neg, axis=1)
    roots = np.full(z.shape, np.nan)
    if np.any(has):
        idx = np.flatnonzero(has)
        a, b = lx[j[idx] - 1], lx[j[idx]]
        fa = M[idx, j[idx] - 1]
        vv, ll = z[idx], lv[idx]
        xr = _vec_bisect(lambda x: _ell_x(G, ll, vv, x), a, b, fa)
        roots[idx] = xr
    return roots, has, (ladder, M)


def best_reply_p2_x(game, zeta):
    """x-coordinates of player 2's best reply; NaN where no bracket exists."""
    G2 = game.G2
    if G2.y_hat is None:
        raise NoRegimeApplies("G2 has no sign-change point; best reply of player 2 undefined")
    xr, _, _ = _best_reply(game, 2, zeta, True, G2.y_hat)
    return xr


def best_reply_p2(game, zeta):
    """Root of ``ell_2(., zeta)`` in ``(yhat_2, inf)``."""
    G2 = game.G2
    if G2.y_hat is None:
        raise NoRegimeApplies("G2 has no sign-change point; best reply of player 2 undefined")
    xr, has, (ladder, M) = _best_reply(game, 2, zeta, True, G2.y_hat)
    if not np.all(has):
        k = int(np.flatnonzero(~has)[0])
        raise BracketFailure("no sign change of ell_2 above yhat_2 within the expansion budget",
                             list(zip(ladder.tolist(), M[k].tolist())))
    y = game.ctx.F(xr)
    return float(y[0]) if np.ndim(zeta) == 0 else y


def best_reply_p1_x(game, zeta):
    G1 = game.G1
    if G1.y_hat is None:
        raise NoRegimeApplies("G1 has no sign-change point; best reply of player 1 undefined")
    xr, _, _ = _best_reply(game, 1, zeta, False, G1.y_hat)
    return xr


def best_reply_p1(game, zeta):
    """Root of ``ell_1(., zeta)`` in ``(0, yhat_1)``."""
    G1 = game.G1
    if G1.y_hat is None:
        raise NoRegimeApplies("G1 has no sign-change point; best reply of player 1 undefined")
    xr, has, (ladder, M) = _best_reply(game, 1, zeta, False, G1.y_hat)
    if not np.all(has):
        k = int(np.flatnonzero(~has)[0])
        raise BracketFailure("no sign change of ell_1 below yhat_1 within the bracket budget",
                             list(zip(ladder.tolist(), M[k].tolist())))
    y = game.ctx.F(xr)
    return float(y[0]) if np.ndim(zeta) == 0 else y


# ------------------------------------------------------------ single player

@dataclass
class SinglePlayerSolution:
    case_tag: str  # tangent_threshold | never_stop | two_sided
    side: str
    y_star: float | None = None
    x_star: float | None = None
    y_star_1: float | None = None
    y_star_2: float | None = None
    x_star_1: float | None = None
    x_star_2: float | None = None
    m: float | None = None
    q: float | None = None
    m_bar: float | None = None
    m_bar_1: float | None = None
    y_o: float | None = None
    rule: Rule | None = None
    value: PiecewisePayoff | None = None
    residual: float | None = None

    def to_dict(self):
        keys = ("case_tag", "side", "y_star", "x_star", "y_star_1", "y_star_2", "x_star_1",
                "x_star_2", "m", "q", "m_bar", "m_bar_1", "y_o", "residual")
        d = {k: getattr(self, k) for k in keys}
        d["rule"] = self.rule.to_dict() if self.rule else None
        return d


def _root_x(fn, a, b):
    return brentq(fn, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def _ladder_root(ctx, fn, start, up):
    """Scan ``fn`` (a function of x) along a doubling ladder in y; polish the first sign change."""
    ys = _ladder(ctx, start, up)
    xs = ctx.F_inv(ys)
    vals = np.array([fn(x) for x in xs])
    s0 = np.sign(vals[0])
    flip = np.flatnonzero(np.sign(vals[1:]) != s0)
    if s0 == 0:
        return float(xs[0])
    if flip.size == 0:
        raise NoTangent("tangency equation has no sign change on the bracket ladder")
    k = int(flip[0])
    return _root_x(fn, float(min(xs[k], xs[k + 1])), float(max(xs[k], xs[k + 1])))


def origin_tangent_above(ctx, G: CostProfile) -> float:
    """x solving ``y Ghat'(y) = Ghat(y)`` above ``yhat`` (free problem, stopping above)."""
    if G.y_hat is None:
        raise NoTangent(f"{G.name} has no sign-change point")

    def fn(x):
        y, g, gp = G.hat.at_x(x)
        return float(y * gp - g)
    return _ladder_root(ctx, fn, G.y_hat, True)


def origin_tangent_below(ctx, G: CostProfile, upper_y: float) -> float:
    """x solving ``Ghat(y) = y Ghat'(y)`` on ``(0, upper_y)`` (convex part, ``Ghat(0+) > 0``)."""
    def fn(x):
        y, g, gp = G.hat.at_x(x)
        return float(g - y * gp)
    return _ladder_root(ctx, fn, upper_y, False)


def _tangent_from(ctx, G, lv, v, start_y, up):
    def fn(x):
        return float(_ell_x(G, lv, v, x))
    return _ladder_root(ctx, fn, start_y, up)


def _single_value(ctx, G, L, own: Rule, opp: Rule):
    fake = SimpleNamespace(ctx=ctx, G1=G, L1=L if L is not None else G, G2=G, L2=G)
    return rule_payoffs(fake, StrategyPair._unchecked(own, opp))[0]


def solve_single_player(spec, ctx, G: CostProfile, L: CostProfile | None = None,
                        x_o: float | None = None, side: str = "stop_above") -> SinglePlayerSolution:
    """Minimise ``E[e^{-r tau} G(X_tau) 1{tau <= tau_o} + e^{-r tau_o} L(X_tau_o) 1{tau_o < tau}]``.

    ``tau_o`` is the first time ``X`` reaches ``x_o`` from the side opposite to
    ``side`` (``tau_o = inf`` without ``L``).
    """
    if side not in ("stop_above", "stop_below"):
        raise ValueError(f"side must be stop_above or stop_below, got {side!r}")
    if (L is None) != (x_o is None):
        raise ValueError("L and x_o must be given together")
    F = ctx.F
    if side == "stop_above":
        return _single_above(ctx, G, L, x_o)
    return _single_below(ctx, G, L, x_o)


def _single_above(ctx, G, L, x_o):
    if L is None:
        xs = origin_tangent_above(ctx, G)
        y, g, gp = G.hat.at_x(xs)
        rule = Rule.above(xs)
        val = _single_value(ctx, G, None, rule, Rule.never())
        return SinglePlayerSolution("tangent_threshold", "stop_above", float(y), xs, m=float(gp), q=0.0,
                                    rule=rule, value=val, residual=float(y * gp - g))
    y_o = float(ctx.F(x_o))
    if G.y_hat is None or not y_o < G.y_hat:
        raise NoTangent("the opponent's threshold must lie below yhat")
    lv = float(L.hat.value_x(x_o))
    xs = _tangent_from(ctx, G, lv, y_o, G.y_hat, True)
    y, g, gp = G.hat.at_x(xs)
    rule = Rule.above(xs)
    val = _single_value(ctx, G, L, rule, Rule.below(x_o))
    return SinglePlayerSolution("tangent_threshold", "stop_above", float(y), xs, m=float(gp),
                                q=float(lv - gp * y_o), y_o=y_o, rule=rule, value=val,
                                residual=float(_ell_x(G, lv, y_o, xs)))


def _single_below(ctx, G, L, x_o):
    A = G.lower_limit
    if L is None:
        if G.stationary_x is None or G.infimum >= 0:
            rule = Rule.never()
            return SinglePlayerSolution("never_stop", "stop_below", m_bar=0.0, rule=rule,
                                        value=_single_value(ctx, G, None, rule, Rule.never()))
        xp = G.stationary_x
        yp = G.stationary_point
        if A > 0:
            xS = origin_tangent_below(ctx, G, yp)
            yS, g, gp = G.hat.at_x(xS)
            rule = Rule.band(xS, xp)
            val = _single_value(ctx, G, None, rule, Rule.never())
            return SinglePlayerSolution("two_sided", "stop_below", y_star_1=float(yS), y_star_2=yp,
                                        x_star_1=xS, x_star_2=xp, m_bar_1=float(gp), m=0.0,
                                        q=float(G.hat.value_x(xp)), rule=rule, value=val,
                                        residual=float(g - yS * gp))
        rule = Rule.below(xp)
        val = _single_value(ctx, G, None, rule, Rule.never())
        return SinglePlayerSolution("tangent_threshold", "stop_below", yp, xp, m=0.0,
                                    q=float(G.hat.value_x(xp)), rule=rule, value=val,
                                    residual=float(G.hat.slope_x(xp)))
    y_o = float(ctx.F(x_o))
    if G.y_hat is None or not y_o > G.y_hat:
        raise NoTangent("the opponent's threshold must lie above yhat")
    lv = float(L.hat.value_x(x_o))
    m_bar = lv / y_o
    opp = Rule.above(x_o)
    if _never_stop_below(ctx, G, m_bar, y_o):
        rule = Rule.never()
        return SinglePlayerSolution("never_stop", "stop_below", m_bar=m_bar, y_o=y_o, rule=rule,
                                    value=_single_value(ctx, G, L, rule, opp))
    xs = _tangent_from(ctx, G, lv, y_o, G.y_hat, False)
    y, g, gp = G.hat.at_x(xs)
    res = float(_ell_x(G, lv, y_o, xs))
    m, q = float(gp), float(lv - gp * y_o)
    if A > 0 and G.lower_status != "zero":
        upper = G.stationary_point if G.stationary_point is not None else float(y)
        xS = origin_tangent_below(ctx, G, min(upper, float(y)))
        yS, gS, gpS = G.hat.at_x(xS)
        rule = Rule.band(xS, xs)
        val = _single_value(ctx, G, L, rule, opp)
        return SinglePlayerSolution("two_sided", "stop_below", y_star_1=float(yS), y_star_2=float(y),
                                    x_star_1=xS, x_star_2=xs, m=m, q=q, m_bar=m_bar,
                                    m_bar_1=float(gpS), y_o=y_o, rule=rule, value=val, residual=res)
    rule = Rule.below(xs)
    val = _single_value(ctx, G, L, rule, opp)
    return SinglePlayerSolution("tangent_threshold", "stop_below", float(y), xs, m=m, q=q,
                                m_bar=m_bar, y_o=y_o, rule=rule, value=val, residual=res)


def _never_stop_below(ctx, G, m_bar, y_o) -> bool:
    """``Ghat(y) > m_bar y`` on ``(0, y_o)``, including the limit at ``0+``."""
    A = G.lower_limit
    if G.lower_status == "zero" or A == 0:
        s0 = G.slope_at_zero
        if not (math.isfinite(s0) and s0 > m_bar):
            return False
    elif A < 0:
        return False
    xs = ctx.grid(2049, hi=y_o)[:-1]
    y = ctx.F(xs)
    return bool(np.all(G.hat.value_x(xs) - m_bar * y > 0))


# ----------------------------------------------------------------- results

@dataclass
class UniquenessCertificate:
    status: str  # certified_unique | not_certified | multiple_found
    hypotheses: dict = field(default_factory=dict)
    monotone_y2: bool | None = None
    monotone_y1: bool | None = None
    roots_found: int = 0
    reasons: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)

    def to_dict(self):
        return {"status": self.status, "hypotheses": self.hypotheses,
                "monotone_y2": self.monotone_y2, "monotone_y1": self.monotone_y1,
                "roots_found": self.roots_found, "reasons": list(self.reasons)}


@dataclass
class EquilibriumResult:
    regime: str | None
    route: str | None
    y1_star: float | None = None
    y2_star: float | None = None
    x1_star: float | None = None
    x2_star: float | None = None
    residuals: dict = field(default_factory=dict)
    y2_inf: float | None = None
    x2_inf: float | None = None
    y1_inf: float | None = None
    x1_inf: float | None = None
    y_S: float | None = None
    x_S: float | None = None
    y_T: float | None = None
    yhat_T: float | None = None
    sigma_S: str | None = None
    x_prime1: float | None = None
    x_prime2: float | None = None
    uniqueness: str = "not_certified"
    solutions: list = field(default_factory=list)
    certificate: UniquenessCertificate | None = None
    strategies: StrategyPair | None = None
    alternatives: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        keys = ("regime", "route", "y1_star", "y2_star", "x1_star", "x2_star", "y2_inf", "x2_inf",
                "y1_inf", "x1_inf", "y_S", "x_S", "y_T", "yhat_T", "sigma_S", "x_prime1",
                "x_prime2", "uniqueness")
        d = {k: _json_num(getattr(self, k)) for k in keys}
        d["residuals"] = {k: _json_num(v) for k, v in self.residuals.items()}
        d["solutions"] = [{k: _json_num(v) for k, v in s.items()} for s in self.solutions]
        d["certificate"] = self.certificate.to_dict() if self.certificate else None
        d["strategies"] = self.strategies.to_dict() if self.strategies else None
        d["alternatives"] = [{"regime": r, "strategies": s.to_dict()} for r, s in self.alternatives]
        d["diagnostics"] = _json_tree(self.diagnostics)
        return d


def _json_num(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    return v


def _json_tree(obj):
    if isinstance(obj, dict):
        return {str(k): _json_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_tree(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return _json_num(obj)


# ------------------------------------------------------------ interior scan

def _phi_outer(game, x2):
    """``ell_2(F(x2), y_1(F(x2)))`` for an array of upper thresholds (NaN when y_1 fails)."""
    ctx = game.ctx
    u = ctx.F(x2)
    x1 = best_reply_p1_x(game, u)
    out = np.full(np.shape(u), np.nan)
    ok = np.isfinite(x1)
    if np.any(ok):
        y1 = ctx.F(x1[ok])
        out[ok] = _ell_x(game.G2, game.L2.hat.value_x(x1[ok]), y1, x2[ok])
    return out, x1


def _interior_scan(game, scan_points=SCAN_POINTS):
    ctx = game.ctx
    yh2 = game.G2.y_hat
    us = np.geomspace(yh2, ctx.y_hi, scan_points + 1)
    xs = ctx.F_inv(us)
    vals, _ = _phi_outer(game, xs)
    fin = np.flatnonzero(np.isfinite(vals))
    roots = []
    for a, b in zip(fin[:-1], fin[1:]):
        va, vb = vals[a], vals[b]
        if va == 0.0:
            roots.append(float(xs[a]))
        elif np.sign(va) != np.sign(vb) and vb != 0.0:
            f = lambda x: float(_phi_outer(game, np.array([x]))[0][0])  # noqa: E731
            roots.append(_root_x(f, float(xs[a]), float(xs[b])))
    if fin.size and vals[fin[-1]] == 0.0:
        roots.append(float(xs[fin[-1]]))
    sols = []
    for x2 in sorted(set(roots)):
        u = float(ctx.F(x2))
        x1 = float(best_reply_p1_x(game, u)[0])
        y1 = float(ctx.F(x1))
        if not (0 < y1 < game.G1.y_hat and u > yh2):
            continue
        sols.append({"y1": y1, "y2": u, "x1": x1, "x2": x2})
    diag = {"scan_y": [float(us[0]), float(us[-1])], "scan_points": int(scan_points),
            "scan_failures": int(np.sum(~np.isfinite(vals)))}
    return sols, diag


def _fill_interior(game, res: EquilibriumResult, sols, diag):
    res.solutions = sols
    res.diagnostics.update(diag)
    if not sols:
        raise NoRegimeApplies("no sign change of ell_2(u, y_1(u)) on the scan", res.diagnostics)
    s = sols[0]
    res.y1_star, res.y2_star, res.x1_star, res.x2_star = s["y1"], s["y2"], s["x1"], s["x2"]
    l1 = ell(game, 1, s["y1"], s["y2"])
    l2 = ell(game, 2, s["y2"], s["y1"])
    y2_fp = float(best_reply_p2(game, s["y1"]))
    res.residuals = {
        "ell1": l1, "ell2": l2,
        "ell1_normalized": l1 / _ell_scale(game, 1, s["y1"], s["y2"]),
        "ell2_normalized": l2 / _ell_scale(game, 2, s["y2"], s["y1"]),
        "fixed_point_y2": abs(y2_fp - s["y2"]),
    }
    res.uniqueness = "multiple_found" if len(sols) > 1 else "not_certified"


def _ell_scale(game, i, u, v):
    G, L = _pair(game, i)
    x = float(game.ctx.F_inv(u))
    _, g, gp = G.hat.at_x(x)
    return max(1.0, abs(g), abs(float(L.hat(v))), abs(gp * (u - v)))


# ------------------------------------------------------------------ dispatch

def solve_equilibrium(game, scan_points: int = SCAN_POINTS, certify: bool = True) -> EquilibriumResult:
    """Dispatch on the construction route and solve for the equilibrium."""
    rep = game.assumption_report or check_assumptions(game)
    route = rep.route
    if route is None or (route != "relaxed" and not rep.passed):
        raise NoRegimeApplies("no construction route applies: " + "; ".join(rep.messages),
                              rep.to_dict())
    if route == "relaxed":
        return _solve_relaxed(game)
    res = EquilibriumResult(None, route)
    if route == "main":
        _run_interior(game, res, scan_points, certify)
        return res
    if route == "entrance":
        return _solve_entrance(game, res, scan_points, certify)
    if route == "exit":
        return _solve_exit(game, res, scan_points, certify)
    raise NoRegimeApplies(f"unknown route {route!r}")


def _run_interior(game, res, scan_points, certify, regime="interior_thresholds"):
    sols, diag = _interior_scan(game, scan_points)
    _fill_interior(game, res, sols, diag)
    res.regime = regime
    if res.strategies is None:
        res.strategies = StrategyPair.thresholds(res.x1_star, res.x2_star)
    if certify:
        res.certificate = check_uniqueness(game, res)
        res.uniqueness = res.certificate.status


def _free_p2(game, res):
    sol = solve_single_player(game.spec, game.ctx, game.G2, side="stop_above")
    res.y2_inf, res.x2_inf = sol.y_star, sol.x_star
    return sol


def _upper_bounded_below(ctx, L: CostProfile) -> bool:
    pts = endpoint_points(ctx, "upper")
    seq = L.hat.value_x(pts)
    lim, status = _limit(seq)
    return not (status == "unbounded" and lim < 0)


def _last_crossing(ctx, fn, y_from, n=4096):
    """Largest y >= y_from with fn(y) = 0 on the evaluation window (None if no crossing)."""
    xs = ctx.grid(n, lo=max(y_from, ctx.y_lo), hi=ctx.y_hi)
    vals = np.array([fn(x) for x in xs])
    s = np.sign(vals)
    idx = np.flatnonzero(s[:-1] * s[1:] < 0)
    zero = np.flatnonzero(s == 0)
    cands = []
    if idx.size:
        k = int(idx[-1])
        cands.append(_root_x(fn, float(xs[k]), float(xs[k + 1])))
    if zero.size:
        cands.append(float(xs[zero[-1]]))
    if not cands:
        return None
    return float(ctx.F(max(cands)))


def _solve_entrance(game, res, scan_points, certify):
    ctx = game.ctx
    s0 = game.G1.slope_at_zero
    res.diagnostics["G1_slope_at_zero"] = s0
    if not math.isfinite(s0):
        _run_interior(game, res, scan_points, certify)
        return res
    _free_p2(game, res)
    ratio = float(game.L1.hat.value_x(res.x2_inf)) / res.y2_inf
    res.diagnostics["never_stop_ratio"] = ratio
    if ratio <= s0:
        res.regime = "p1_never_stops"
        res.strategies = StrategyPair(Rule.never(), Rule.above(res.x2_inf))
        res.uniqueness = "not_certified"
        res.diagnostics["reason"] = "Lhat1(y2_inf)/y2_inf <= Ghat1'(0+)"
        return res

    def cross(x):
        y, lv = float(ctx.F(x)), float(game.L1.hat.value_x(x))
        return lv - s0 * y
    yT = _last_crossing(ctx, cross, ctx.y_lo)
    res.y_T = 0.0 if yT is None else yT
    bounded = _upper_bounded_below(ctx, game.L1)
    conds = {"ratio_negative": ratio < 0, "L1hat_bounded_below": bounded,
             "y_T_below_yhat2": res.y_T <= game.G2.y_hat}
    res.diagnostics["side_conditions"] = conds
    if all(conds.values()):
        _run_interior(game, res, scan_points, certify)
        return res
    res.regime = None
    res.uniqueness = "not_certified"
    res.diagnostics["reason"] = "entrance side conditions fail; no equilibrium construction applies"
    return res


def _solve_exit(game, res, scan_points, certify):
    ctx = game.ctx
    G1, G2 = game.G1, game.G2
    A1, A2 = G1.lower_limit, G2.lower_limit
    res.diagnostics.update(A_G1=A1, A_G2=A2)
    if A2 < -1e-12:
        raise NoRegimeApplies(f"A_G2 = {A2:.6g} < 0 is not supported at an exit boundary",
                              res.diagnostics)
    if A1 <= 0:
        _run_interior(game, res, scan_points, certify)
        return res
    if not G1.infimum < 0 or G1.stationary_point is None:
        res.regime = None
        res.diagnostics["reason"] = "A_G1 > 0 with nonnegative G1: no construction applies"
        return res
    xS = origin_tangent_below(ctx, G1, G1.stationary_point)
    yS, _, slope_S = G1.hat.at_x(xS)
    res.x_S, res.y_S = float(xS), float(yS)
    _free_p2(game, res)
    ratio = float(game.L1.hat.value_x(res.x2_inf)) / res.y2_inf
    res.diagnostics.update(slope_at_y_S=float(slope_S), never_stop_ratio=ratio)
    if slope_S > ratio:
        res.regime = "p1_never_stops"
        res.sigma_S = "player 1 stops only at explosion (hitting the exit boundary), paying nothing"
        res.strategies = StrategyPair(Rule.never(), Rule.above(res.x2_inf))
        res.diagnostics["reason"] = "Ghat1'(y_S) > Lhat1(y2_inf)/y2_inf"
        return res

    def cross(x):
        return float(game.L1.hat.value_x(x)) - float(slope_S) * float(ctx.F(x))
    yT = _last_crossing(ctx, cross, res.y_S)
    res.yhat_T = res.y_S if yT is None else max(yT, res.y_S)
    bounded = _upper_bounded_below(ctx, game.L1)
    conds = {"ratio_negative": ratio < 0, "L1hat_bounded_below": bounded,
             "yhat_T_below_yhat2": res.yhat_T < G2.y_hat}
    res.diagnostics["side_conditions"] = conds
    if not all(conds.values()):
        res.regime = None
        res.diagnostics["reason"] = "exit side conditions fail; no equilibrium construction applies"
        return res
    sols, diag = _interior_scan(game, scan_points)
    sols = [s for s in sols if s["y1"] > res.y_S]
    _fill_interior(game, res, sols, diag)
    res.regime = "exit_two_regime"
    res.sigma_S = f"first time X >= x_S = {res.x_S:.10g}, or explosion"
    res.strategies = StrategyPair(Rule.band(res.x_S, res.x1_star), Rule.above(res.x2_star))
    if certify:
        res.certificate = check_uniqueness(game, res)
        res.uniqueness = res.certificate.status
    return res


def _solve_relaxed(game):
    G1, G2 = game.G1, game.G2
    spec, ctx = game.spec, game.ctx
    if spec.boundary_lo is BoundaryClass.EXIT:
        raise NoRegimeApplies("the relaxed route needs a natural or entrance lower boundary")
    res = EquilibriumResult(None, "relaxed")
    tag = G1.class_tag
    if tag == "A1":
        s1 = solve_single_player(spec, ctx, G1, side="stop_below")
        s2 = solve_single_player(spec, ctx, G2, side="stop_below")
        if s1.case_tag != "tangent_threshold" or s2.case_tag != "tangent_threshold":
            raise NoRegimeApplies("free problems do not reduce to single thresholds")
        x1p, x2p = s1.x_star, s2.x_star
        p1 = StrategyPair(Rule.below(x1p), Rule.never())
        p2 = StrategyPair(Rule.never(), Rule.below(x2p))
        p1_wins = x1p > x2p
    else:
        s1 = solve_single_player(spec, ctx, G1, side="stop_above")
        s2 = solve_single_player(spec, ctx, G2, side="stop_above")
        x1p, x2p = s1.x_star, s2.x_star
        p1 = StrategyPair(Rule.above(x1p), Rule.never())
        p2 = StrategyPair(Rule.never(), Rule.above(x2p))
        p1_wins = x1p < x2p
    res.x_prime1, res.x_prime2 = float(x1p), float(x2p)
    res.diagnostics["class"] = tag
    if abs(x1p - x2p) < TIE_TOL:
        res.regime = "relaxed_both"
        res.strategies = p1
        res.alternatives = [("relaxed_p1_stops", p1), ("relaxed_p2_stops", p2)]
    elif p1_wins:
        res.regime, res.strategies = "relaxed_p1_stops", p1
    else:
        res.regime, res.strategies = "relaxed_p2_stops", p2
    res.uniqueness = "not_certified"
    return res


# ---------------------------------------------------------------- uniqueness

def check_uniqueness(game, eq: EquilibriumResult, samples: int = 50) -> UniquenessCertificate:
    """Numerical check of the uniqueness hypotheses plus monotone best replies."""
    cert = UniquenessCertificate("not_certified")
    if eq.regime not in ("interior_thresholds", "exit_two_regime"):
        cert.reasons.append(f"regime {eq.regime} has no interior threshold system")
        return cert
    cert.roots_found = len(eq.solutions)
    G1, G2, L1, L2 = game.G1, game.G2, game.L1, game.L2
    h = cert.hypotheses
    h["i_L_classes"] = L1.class_tag == "A1" and L2.class_tag == "A2"
    yt2 = L2.stationary_point
    h["tilde_y2"] = yt2
    h["yhat1"] = G1.y_hat
    h["ii_tilde_y2_above_yhat1"] = bool(yt2 is not None and yt2 > G1.y_hat)
    try:
        if eq.y2_inf is None:
            sol = solve_single_player(game.spec, game.ctx, G2, side="stop_above")
            eq.y2_inf, eq.x2_inf = sol.y_star, sol.x_star
        y1_inf = best_reply_p1(game, eq.y2_inf)
        eq.y1_inf = float(y1_inf)
        eq.x1_inf = float(game.ctx.F_inv(y1_inf))
        lhs = float(G1.hat.slope_x(eq.x1_inf))
        rhs = float(L1.hat.slope_x(eq.x2_inf))
        h["iii_lhs"], h["iii_rhs"] = lhs, rhs
        h["iii_slopes"] = lhs < rhs
    except (BracketFailure, NoTangent) as exc:
        h["iii_slopes"] = False
        cert.reasons.append(f"hypothesis (iii) could not be evaluated: {exc}")
    # monotone best replies
    try:
        z2 = np.geomspace(G1.y_hat * 1e-4, G1.y_hat * (1 - 1e-3), samples)
        y2 = best_reply_p2(game, z2)
        cert.monotone_y2 = bool(np.all(np.diff(y2) < 0))
        cert.samples["y2"] = (z2.tolist(), np.asarray(y2).tolist())
    except BracketFailure as exc:
        cert.monotone_y2 = False
        cert.reasons.append(f"best reply of player 2 failed: {exc}")
    if eq.y2_inf is not None and eq.y2_inf > G2.y_hat:
        try:
            z1 = np.geomspace(G2.y_hat * (1 + 1e-3), eq.y2_inf * (1 - 1e-3), samples)
            y1 = best_reply_p1(game, z1)
            cert.monotone_y1 = bool(np.all(np.diff(y1) > 0))
            cert.samples["y1"] = (z1.tolist(), np.asarray(y1).tolist())
        except BracketFailure as exc:
            cert.monotone_y1 = False
            cert.reasons.append(f"best reply of player 1 failed: {exc}")
    hyp_ok = h["i_L_classes"] and h["ii_tilde_y2_above_yhat1"] and h.get("iii_slopes", False)
    for key, label in (("i_L_classes", "(i) L1 in A1 and L2 in A2"),
                       ("ii_tilde_y2_above_yhat1", "(ii) tilde_y2 > yhat1"),
                       ("iii_slopes", "(iii) Ghat1'(y1_inf) < Lhat1'(y2_inf)")):
        if not h.get(key, False):
            cert.reasons.append(f"hypothesis {label} fails")
    if cert.roots_found > 1:
        cert.status = "multiple_found"
    elif hyp_ok and cert.roots_found == 1 and cert.monotone_y1 and cert.monotone_y2:
        cert.status = "certified_unique"
    return cert


__all__ = [
    "GameSpec", "build_game", "ell", "best_reply_p1", "best_reply_p2", "solve_single_player",
    "SinglePlayerSolution", "EquilibriumResult", "UniquenessCertificate", "solve_equilibrium",
    "check_uniqueness", "origin_tangent_above", "origin_tangent_below", "REGIMES",
]

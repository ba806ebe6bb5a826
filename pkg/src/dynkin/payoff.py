"""Piecewise-analytic payoffs of threshold strategies and their verification.

For threshold rules every player's payoff is, on each interval of the
continuation region, a combination ``m psi + q phi`` fixed by the values at
the interval's ends (``psi`` alone next to the lower endpoint, ``phi`` alone
next to the upper one), and equals a stopping cost elsewhere.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import generator_apply
from .errors import RegimeMismatch
from .strategies import Rule, StrategyPair

FORMS = ("cost_G", "cost_L", "linear_combination", "pure_psi")


@dataclass(frozen=True)
class Piece:
    form: str
    lo: float
    hi: float
    m: float = 0.0
    q: float = 0.0
    p: float = 0.0
    cost: object = None  # SmoothFunction for cost pieces

    def evaluate(self, ctx, x):
        x = np.asarray(x, dtype=float)
        if self.form in ("cost_G", "cost_L"):
            return self.cost(x)
        pair = ctx.pair
        if self.form == "pure_psi":
            return self.p * np.exp(pair.log_psi(x))
        if self.m == 0.0 and self.q == 0.0:
            return np.zeros_like(x) if x.ndim else 0.0
        lphi = pair.log_phi(x)
        return np.exp(lphi) * (self.m * np.exp(pair.log_F(x)) + self.q)

    def derivative(self, ctx, x):
        x = np.asarray(x, dtype=float)
        if self.form in ("cost_G", "cost_L"):
            return self.cost.d1(x)
        pair = ctx.pair
        if self.form == "pure_psi":
            return self.p * pair.dpsi(x)
        return self.m * pair.dpsi(x) + self.q * pair.dphi(x)

    def to_dict(self):
        d = {"form": self.form, "lo": self.lo, "hi": self.hi}
        if self.form == "linear_combination":
            d.update(m=self.m, q=self.q)
        elif self.form == "pure_psi":
            d["p"] = self.p
        else:
            d["cost"] = self.cost.name
        return d


@dataclass
class PiecewisePayoff:
    """Ordered pieces partitioning the interior; piece ``k`` covers
    ``(knot_{k-1}, knot_k]`` (the last one extends to the upper end)."""

    ctx: object
    pieces: list
    owner: str

    def __post_init__(self):
        self.knots = np.array([pc.hi for pc in self.pieces[:-1]], dtype=float)

    def piece_index(self, x):
        return np.searchsorted(self.knots, np.asarray(x, dtype=float), side="left")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = self.piece_index(x)
        if x.ndim == 0:
            return float(self.pieces[int(idx)].evaluate(self.ctx, x))
        out = np.empty_like(x)
        for k, pc in enumerate(self.pieces):
            sel = idx == k
            if np.any(sel):
                out[sel] = pc.evaluate(self.ctx, x[sel])
        return out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        idx = self.piece_index(x)
        out = np.empty(x.shape)
        flat_x, flat_i = np.atleast_1d(x), np.atleast_1d(idx)
        flat_o = np.atleast_1d(out)
        for k, pc in enumerate(self.pieces):
            sel = flat_i == k
            if np.any(sel):
                flat_o[sel] = pc.derivative(self.ctx, flat_x[sel])
        return float(flat_o[0]) if x.ndim == 0 else flat_o.reshape(x.shape)

    def region(self, x):
        idx = np.atleast_1d(self.piece_index(x))
        return [self.pieces[int(i)].form for i in idx]

    def continuity_gaps(self):
        gaps = []
        for left, right in zip(self.pieces[:-1], self.pieces[1:]):
            k = left.hi
            a, b = float(left.evaluate(self.ctx, k)), float(right.evaluate(self.ctx, k))
            gaps.append(abs(a - b))
        return gaps

    def to_dict(self):
        return {"owner": self.owner, "pieces": [pc.to_dict() for pc in self.pieces]}


# ---------------------------------------------------------------- builders

def _stop_set_contains(rule: Rule, x: float) -> bool:
    return rule.stops_at(x)


def _levels(rule: Rule):
    if rule.kind == "never":
        return []
    if rule.kind == "band":
        return [rule.lower, rule.level]
    return [rule.level]


def rule_payoffs(game, strategies: StrategyPair):
    """Exact payoffs ``J_1, J_2`` of a pair of threshold rules, as piecewise functions.

    Ties (both rules stop at the same state) go to player 2.
    """
    ctx = game.ctx
    lo, hi = ctx.spec.lo, ctx.spec.hi
    r1, r2 = strategies.tau1, strategies.tau2
    knots = sorted({float(v) for v in _levels(r1) + _levels(r2) if lo < v < hi})

    def terminal(player, x):
        if _stop_set_contains(r2, x):
            return ("cost_L", game.L1.H) if player == 1 else ("cost_G", game.G2.H)
        if _stop_set_contains(r1, x):
            return ("cost_G", game.G1.H) if player == 1 else ("cost_L", game.L2.H)
        return None

    out = []
    for player in (1, 2):
        bounds = [lo] + knots + [hi]
        pieces = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            mid = _midpoint(a, b)
            t = terminal(player, mid)
            if t is not None:
                pieces.append(Piece(t[0], a, b, cost=t[1]))
                continue
            va = _terminal_value(terminal(player, a), a) if a > lo else None
            vb = _terminal_value(terminal(player, b), b) if b < hi else None
            pieces.append(_continuation_piece(ctx, a, b, va, vb))
        out.append(PiecewisePayoff(ctx, _merge(pieces), f"player{player}"))
    return tuple(out)


def _midpoint(a, b):
    if math.isinf(a) and math.isinf(b):
        return 0.0
    if math.isinf(a):
        return b - max(1.0, abs(b))
    if math.isinf(b):
        return a + max(1.0, abs(a))
    return 0.5 * (a + b)


def _terminal_value(t, x):
    if t is None:
        return None
    return float(t[1](x))


def _continuation_piece(ctx, a, b, va, vb):
    pair = ctx.pair
    if va is None and vb is None:
        return Piece("linear_combination", a, b, 0.0, 0.0)
    if va is None:
        return Piece("pure_psi", a, b, p=vb * math.exp(-float(pair.log_psi(b))))
    if vb is None:
        return Piece("linear_combination", a, b, 0.0, va * math.exp(-float(pair.log_phi(a))))
    ya, yb = float(ctx.F(a)), float(ctx.F(b))
    ha = va * math.exp(-float(pair.log_phi(a)))
    hb = vb * math.exp(-float(pair.log_phi(b)))
    m = (ha - hb) / (ya - yb)
    q = hb - m * yb
    return Piece("linear_combination", a, b, m, q)


def _merge(pieces):
    merged = [pieces[0]]
    for pc in pieces[1:]:
        prev = merged[-1]
        if pc.form == prev.form and pc.form in ("cost_G", "cost_L") and pc.cost is prev.cost:
            merged[-1] = Piece(prev.form, prev.lo, pc.hi, cost=prev.cost)
        else:
            merged.append(pc)
    return merged


def build_payoffs(game, eq):
    """Equilibrium payoffs ``(v1, v2)`` for a solved game."""
    if eq.regime is None or eq.strategies is None:
        raise RegimeMismatch("the equilibrium has no resolved regime; no payoff to build")
    return rule_payoffs(game, eq.strategies)


# ----------------------------------------------------------- verification

@dataclass
class ResidualReport:
    generator_residual: list  # (a) per player, max relative |(L - r) v| on continuation pieces
    stopping_sign_ok: list  # (b)
    stopping_sign_min: list
    obstacle_gap: list  # (c) min over grid of G_i - v_i
    smooth_fit_gap: list  # (d) own threshold
    opponent_gap: list  # derivative jump at the opponent's threshold
    continuity_gap: list
    details: dict = field(default_factory=dict)
    tol_residual: float = 1e-8
    tol_smooth: float = 1e-6
    tol_obstacle: float = -1e-9

    @property
    def passed(self) -> bool:
        ok = all(r < self.tol_residual for r in self.generator_residual)
        ok &= all(self.stopping_sign_ok)
        ok &= all(g >= self.tol_obstacle for g in self.obstacle_gap)
        ok &= all(g is None or g < self.tol_smooth for g in self.smooth_fit_gap)
        ok &= all(g < 1e-9 for g in self.continuity_gap)
        return bool(ok)

    def to_dict(self):
        return {"passed": self.passed, "generator_residual": self.generator_residual,
                "stopping_sign_ok": self.stopping_sign_ok,
                "stopping_sign_min": self.stopping_sign_min,
                "obstacle_gap": self.obstacle_gap, "smooth_fit_gap": self.smooth_fit_gap,
                "opponent_gap": self.opponent_gap, "continuity_gap": self.continuity_gap,
                "details": self.details}


def _fd_generator(spec, f, x, h):
    """Fourth-order central-difference ``(1/2) s^2 f'' + mu f' - r f`` and its scale."""
    f0 = f(x)
    fp1, fm1, fp2, fm2 = f(x + h), f(x - h), f(x + 2 * h), f(x - 2 * h)
    d1 = (-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12 * h)
    d2 = (-fp2 + 16 * fp1 - 30 * f0 + 16 * fm1 - fm2) / (12 * h * h)
    a, b, c = 0.5 * spec.vol(x) ** 2 * d2, spec.drift(x) * d1, spec.rate(x) * f0
    return a + b - c, np.abs(a) + np.abs(b) + np.abs(c)


def one_sided_slopes(v: PiecewisePayoff, x: float, h: float = 1e-4):
    """Second-order one-sided difference quotients at ``x`` (Richardson-combined)."""
    vx = v(x)
    left = (3 * vx - 4 * v(x - h) + v(x - 2 * h)) / (2 * h)
    # the right quotient uses the piece beyond x, which owns (x, ...]
    right = (-3 * vx + 4 * v(x + h) - v(x + 2 * h)) / (2 * h)
    return left, right


def _inner_grid(a, b, n, pad):
    a_, b_ = a + pad * max(1.0, abs(a)), b - pad * max(1.0, abs(b))
    if not a_ < b_:
        return np.array([])
    return np.linspace(a_, b_, n)


def _window(ctx, a, b):
    return max(a, ctx.x_lo), min(b, ctx.x_hi)


def verify_variational(game, eq, v1: PiecewisePayoff, v2: PiecewisePayoff, n: int = 400) -> ResidualReport:
    ctx, spec = game.ctx, game.spec
    gen_res, sign_ok, sign_min, obst, sf, opp, cont = [], [], [], [], [], [], []
    details = {}
    strat = eq.strategies
    for player, v, G in ((1, v1, game.G1), (2, v2, game.G2)):
        # (a) generator residual on continuation pieces (finite differences of the piece itself)
        worst = 0.0
        for pc in v.pieces:
            if pc.form not in ("linear_combination", "pure_psi"):
                continue
            a, b = _window(ctx, pc.lo, pc.hi)
            xs = _inner_grid(a, b, n, 1e-3)
            if xs.size == 0:
                continue
            h = np.full(xs.shape, 1e-2)
            if math.isfinite(spec.lo):
                h = np.minimum(h, 0.25 * (xs - spec.lo))
            res, scale = _fd_generator(spec, lambda z: pc.evaluate(ctx, z), xs, h)
            rel = np.abs(res) / np.maximum(scale, 1e-300)
            worst = max(worst, float(np.max(rel)))
        gen_res.append(worst)

        # (b) own stopping pieces: generator of G must be nonnegative
        own = [pc for pc in v.pieces if pc.form == "cost_G"]
        crossings = list(G.sign_changes)
        ok, mn = True, math.inf
        for pc in own:
            a, b = _window(ctx, pc.lo, pc.hi)
            xs = _inner_grid(a, b, n, 1e-6)
            keep = np.ones(xs.shape, bool)
            for c in crossings:
                keep &= np.abs(xs - c) > 1e-4
            xs = xs[keep]
            if xs.size == 0:
                continue
            g = generator_apply(spec, G.H, xs)
            mn = min(mn, float(np.min(g)))
            ok &= bool(np.all(g > -1e-12))
        sign_ok.append(bool(ok))
        sign_min.append(mn if math.isfinite(mn) else None)

        # (c) obstacle on a global grid
        xs = ctx.grid(2001)
        obst.append(float(np.min(G.H(xs) - v(xs))))

        # (d) smooth fit at the own threshold and the jump at the opponent's one
        own_rule, opp_rule = strat.rule(player), strat.rule(3 - player)
        own_pts = _smooth_points(own_rule, player)
        gaps = []
        for x in own_pts:
            lft, rgt = one_sided_slopes(v, x)
            scale = max(1.0, abs(lft), abs(rgt))
            gaps.append(abs(lft - rgt) / scale)
        sf.append(max(gaps) if gaps else None)
        ogaps = []
        for x in _levels(opp_rule):
            lft, rgt = one_sided_slopes(v, x)
            ogaps.append(abs(lft - rgt))
        opp.append(max(ogaps) if ogaps else 0.0)
        cont.append(max(v.continuity_gaps(), default=0.0))
        details[f"player{player}"] = {"smooth_fit_points": own_pts, "smooth_fit_gaps": gaps}
    return ResidualReport(gen_res, sign_ok, sign_min, obst, sf, opp, cont, details)


def _smooth_points(rule: Rule, player: int):
    """Points where the owner's payoff must be C^1: the continuation-side edge
    of the stopping set (the lower edge of a band is reached from the left by a
    pure-psi piece which need not fit smoothly)."""
    if rule.kind == "below" or rule.kind == "above":
        return [rule.level]
    if rule.kind == "band":
        return [rule.level]
    return []


# ------------------------------------------------------------------ export

def sample_payoffs(game, v1, v2, n: int = 201, lo=None, hi=None):
    ctx = game.ctx
    if lo is None or hi is None:
        pts = [pc.hi for pc in v1.pieces[:-1]] + [pc.hi for pc in v2.pieces[:-1]]
        pts = [p for p in pts if math.isfinite(p)] or [ctx.spec.reference_point]
        span = max(1.0, max(pts) - min(pts))
        lo = max(min(pts) - span, ctx.x_lo) if lo is None else lo
        hi = min(max(pts) + span, ctx.x_hi) if hi is None else hi
    xs = np.linspace(lo, hi, n)
    rows = []
    for x, a, b, ra, rb in zip(xs, v1(xs), v2(xs), v1.region(xs), v2.region(xs)):
        rows.append((float(x), float(a), float(b), ra, rb))
    return rows


def payoffs_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "v1", "v2", "region1", "region2"])
    for x, a, b, ra, rb in rows:
        w.writerow([repr(x), repr(a), repr(b), ra, rb])
    return buf.getvalue()


__all__ = ["Piece", "PiecewisePayoff", "ResidualReport", "rule_payoffs", "build_payoffs",
           "verify_variational", "one_sided_slopes", "sample_payoffs", "payoffs_csv"]

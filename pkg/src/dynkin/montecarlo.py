"""Euler-Maruyama simulation of the stopping game.

Every path draws its normals from its own Philox4x32-10 stream, keyed by the
seed and indexed by the path id, so serial and parallel runs produce the same
numbers bit for bit. The kernel is compiled with numba once per coefficient
set and cached.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

from .errors import ConfigError
from .strategies import Rule, StrategyPair

# outcome codes written by the kernel
TRUNCATED, P1_STOPS, P2_STOPS, EXPLOSION, HORIZON, BLOWUP, PROBED = 0, 1, 2, 3, 4, 5, 6
OUTCOMES = {TRUNCATED: "discount_floor", P1_STOPS: "player1", P2_STOPS: "player2",
            EXPLOSION: "explosion", HORIZON: "horizon", BLOWUP: "non_finite",
            PROBED: "probes_done"}

_MASK = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_S32 = np.uint64(32)
_TWO_M31 = 2.0 ** -31


@njit(inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on 32-bit words held in uint64 slots."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = (hi1 ^ c1 ^ k0) & _MASK, lo1, (hi0 ^ c3 ^ k1) & _MASK, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@njit(inline="always")
def _normal_pair(path, k0, k1, words, state, out):
    """Marsaglia polar method on the path's Philox stream.

    ``words`` buffers one Philox block as uniforms on (-1, 1); ``state`` holds
    the next block index and the read position inside the buffer.
    """
    while True:
        if state[1] >= 4:
            b = np.uint64(state[0])
            c0, c1, c2, c3 = philox4x32(b & _MASK, b >> _S32, np.uint64(path) & _MASK,
                                        np.uint64(path) >> _S32, k0, k1)
            words[0] = (float(c0) + 0.5) * _TWO_M31 - 1.0
            words[1] = (float(c1) + 0.5) * _TWO_M31 - 1.0
            words[2] = (float(c2) + 0.5) * _TWO_M31 - 1.0
            words[3] = (float(c3) + 0.5) * _TWO_M31 - 1.0
            state[0] += 1
            state[1] = 0
        u = words[state[1]]
        v = words[state[1] + 1]
        state[1] += 2
        s = u * u + v * v
        if 0.0 < s < 1.0:
            f = math.sqrt(-2.0 * math.log(s) / s)
            out[0] = u * f
            out[1] = v * f
            return


def philox_block(counter, key):
    """Pure-python view of one Philox4x32-10 block (used for known-answer tests)."""
    c = [np.uint64(v) for v in counter]
    k = [np.uint64(v) for v in key]
    return tuple(int(v) for v in philox4x32.py_func(*c, *k))


@njit(inline="always")
def _hits(code, a, b, x):
    if code == 1:
        return x <= a
    if code == 2:
        return x >= b
    if code == 3:
        return a <= x <= b
    return False


@njit(inline="always")
def _crossing(code, a, b, ta, tb, x_prev, x_new):
    """Level at which a continuous path would have entered the stopping set."""
    if code == 1:
        return a
    if code == 2:
        return b
    if code == 3:
        if x_prev < ta:
            return a
        if x_prev > tb:
            return b
    return x_new


def _make_kernel(mu, sigma, rate, running, parallel):
    mu_j = mu if isinstance(mu, numba.core.registry.CPUDispatcher) else njit(mu)
    sig_j = sigma if isinstance(sigma, numba.core.registry.CPUDispatcher) else njit(sigma)
    rate_j = njit(rate) if rate is not None else njit(lambda x: 0.0)
    run_j = njit(running) if running is not None else njit(lambda x: 0.0)
    variable_rate = rate is not None
    has_running = running is not None

    @njit(parallel=parallel, error_model="numpy")
    def kernel(x0, n_paths, path_offset, k0, k1, dt, r_const, codes, levels, trig,
               probe_trig, lo_pad, hi_pad, lo_exit, hi_exit, log_floor, max_steps,
               ck_steps, probe_levels, probe_player, probe_stop):
        sqdt = math.sqrt(dt)
        n_ck = ck_steps.shape[0]
        n_pr = probe_levels.shape[0]
        outcome = np.zeros(n_paths, dtype=np.int8)
        x_stop = np.empty(n_paths)
        ld_stop = np.empty(n_paths)
        acc = np.zeros(n_paths)
        clamps = np.zeros(n_paths, dtype=np.int64)
        ck_x = np.full((n_paths, n_ck), np.nan)
        ck_ld = np.full((n_paths, n_ck), np.nan)
        ck_alive = np.zeros((n_paths, n_ck), dtype=np.uint8)
        probe_ld = np.full((n_paths, n_pr), np.nan)
        c1, a1, b1 = codes[0], levels[0, 0], levels[0, 1]
        c2, a2, b2 = codes[1], levels[1, 0], levels[1, 1]
        ta1, tb1, ta2, tb2 = trig[0, 0], trig[0, 1], trig[1, 0], trig[1, 1]
        for i in prange(n_paths):
            pid = path_offset + i
            buf = np.empty(2)
            words = np.empty(4)
            state = np.array([0, 4], dtype=np.int64)
            nb = 2
            x = x0
            ld = 0.0
            total = 0.0
            jc = 0
            jp = 0
            res = HORIZON
            xs = x0
            # immediate stops at time zero; ties go to player 2
            if probe_player == 2:
                while jp < n_pr and x >= probe_levels[jp]:
                    probe_ld[i, jp] = 0.0
                    jp += 1
            if _hits(c2, a2, b2, x):
                res = P2_STOPS
            else:
                if probe_player == 1:
                    while jp < n_pr and x <= probe_levels[jp]:
                        probe_ld[i, jp] = 0.0
                        jp += 1
                if _hits(c1, a1, b1, x):
                    res = P1_STOPS
            if probe_stop and res == HORIZON and jp == n_pr:
                res = PROBED
            while jc < n_ck and ck_steps[jc] == 0:
                ck_x[i, jc] = x
                ck_ld[i, jc] = 0.0
                ck_alive[i, jc] = 1 if res == HORIZON else 0
                jc += 1
            step = 0
            while res == HORIZON and step < max_steps:
                step += 1
                if nb == 2:
                    _normal_pair(pid, k0, k1, words, state, buf)
                    nb = 0
                z = buf[nb]
                nb += 1
                xn = x + mu_j(x) * dt + sig_j(x) * sqdt * z
                if not math.isfinite(xn):
                    res = BLOWUP
                    xs = x
                    break
                if has_running:
                    total += math.exp(ld) * run_j(x) * dt
                if variable_rate:
                    xr = min(max(xn, lo_pad), hi_pad)
                    ld -= 0.5 * (rate_j(x) + rate_j(xr)) * dt
                else:
                    ld -= r_const * dt
                if probe_player == 2:
                    while jp < n_pr and xn >= probe_trig[jp]:
                        probe_ld[i, jp] = ld
                        jp += 1
                if _hits(c2, ta2, tb2, xn):
                    res = P2_STOPS
                    xs = _crossing(c2, a2, b2, ta2, tb2, x, xn)
                    break
                if probe_player == 1:
                    while jp < n_pr and xn <= probe_trig[jp]:
                        probe_ld[i, jp] = ld
                        jp += 1
                if _hits(c1, ta1, tb1, xn):
                    res = P1_STOPS
                    xs = _crossing(c1, a1, b1, ta1, tb1, x, xn)
                    break
                if probe_stop and jp == n_pr:
                    # every probe level is resolved and nothing else is needed
                    res = PROBED
                    xs = xn
                    break
                if xn <= lo_pad:
                    if lo_exit:
                        res = EXPLOSION
                        xs = lo_pad
                        break
                    xn = 2.0 * lo_pad - xn
                    clamps[i] += 1
                elif xn >= hi_pad:
                    if hi_exit:
                        res = EXPLOSION
                        xs = hi_pad
                        break
                    xn = 2.0 * hi_pad - xn
                    clamps[i] += 1
                x = xn
                while jc < n_ck and ck_steps[jc] == step:
                    ck_x[i, jc] = x
                    ck_ld[i, jc] = ld
                    ck_alive[i, jc] = 1
                    jc += 1
                if ld < log_floor:
                    res = TRUNCATED
                    xs = x
                    break
            if res == HORIZON:
                xs = x
            outcome[i] = res
            x_stop[i] = xs
            ld_stop[i] = ld
            acc[i] = total
            while jc < n_ck:
                ck_x[i, jc] = xs
                ck_ld[i, jc] = ld
                jc += 1
        return outcome, x_stop, ld_stop, acc, clamps, ck_x, ck_ld, ck_alive, probe_ld

    return kernel


_KERNELS: dict = {}


def _kernel_for(spec, running, parallel):
    rate = None if spec.constant_rate else spec.discount
    key = (spec.mu, spec.sigma, rate, running, bool(parallel))
    if key not in _KERNELS:
        _KERNELS[key] = _make_kernel(spec.mu, spec.sigma, rate, running, bool(parallel))
    return _KERNELS[key]


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-4
    n_paths: int = 100_000
    seed: int = 20240601
    discount_floor: float = 1e-6
    boundary_pad: float = 1e-6
    parallel: bool = False
    # shift detection levels by 0.5826 sigma sqrt(dt) toward the path
    continuity_correction: bool = True

    def __post_init__(self):
        if not (isinstance(self.dt, (int, float)) and self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if int(self.n_paths) != self.n_paths or self.n_paths <= 0:
            raise ConfigError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if not 0 < self.discount_floor < 1:
            raise ConfigError(f"discount_floor must lie in (0, 1), got {self.discount_floor!r}")
        if not self.boundary_pad > 0:
            raise ConfigError(f"boundary_pad must be positive, got {self.boundary_pad!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def replace(self, **kw) -> "PathConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return PathConfig(**d)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class Simulation:
    """Raw per-path output of one kernel run."""

    outcome: np.ndarray
    x_stop: np.ndarray
    logdisc: np.ndarray
    running: np.ndarray
    clamps: np.ndarray
    ck_times: np.ndarray
    ck_x: np.ndarray
    ck_ld: np.ndarray
    ck_alive: np.ndarray
    probe_levels: np.ndarray
    probe_ld: np.ndarray

    @property
    def n(self):
        return self.outcome.size

    @property
    def fraction_truncated(self):
        return float(np.mean((self.outcome == TRUNCATED) | (self.outcome == BLOWUP)))

    @property
    def clamp_events(self):
        return int(self.clamps.sum())

    def counts(self):
        return {name: int(np.count_nonzero(self.outcome == code)) for code, name in OUTCOMES.items()}


BGK_BETA = 0.5825971579390106  # -zeta(1/2) / sqrt(2 pi)


def _shift(spec, level, dt):
    if not spec.lo < level < spec.hi:
        return 0.0
    return BGK_BETA * abs(float(spec.vol(level))) * math.sqrt(dt)


def simulate(spec, strategies: StrategyPair, x0: float, cfg: PathConfig, checkpoints=(),
             probe_levels=(), probe_player: int = 0, running=None, horizon=None,
             stop_after_probes: bool = False) -> Simulation:
    """Run ``cfg.n_paths`` Euler paths from ``x0`` under the given rules.

    ``probe_levels`` (sorted in the direction of travel) records the discount
    factor at the first passage through each level by the probing player,
    whose own rule should be ``never``. ``running`` accumulates the discounted
    integral of a numba-compilable ``f(X_t)``. With ``stop_after_probes`` a
    path ends as soon as it has passed every probe level.
    """
    spec.check_interior(x0)
    dt = float(cfg.dt)
    codes = np.zeros(2, dtype=np.int64)
    levels = np.zeros((2, 2))
    trig = np.zeros((2, 2))
    for j, rule in enumerate((strategies.tau1, strategies.tau2)):
        c, a, b = rule.encode()
        codes[j] = c
        levels[j] = (a, b)
        trig[j] = (a, b)
        if cfg.continuity_correction and rule.kind != "never":
            sa, sb = _shift(spec, a, dt), _shift(spec, b, dt)
            if rule.kind == "below":
                trig[j] = (a + sa, b + sb)
            elif rule.kind == "above":
                trig[j] = (a - sa, b - sb)
            else:
                trig[j] = (a - sa, b + sb)
    ck_times = np.asarray(sorted(float(t) for t in checkpoints), dtype=float)
    ck_steps = np.round(ck_times / dt).astype(np.int64)
    probes = np.asarray(probe_levels, dtype=float)
    if probes.size and probe_player not in (1, 2):
        raise ConfigError("probe levels need probe_player 1 or 2")
    if probes.size > 1:
        d = np.diff(probes)
        if probe_player == 1 and np.any(d > 0) or probe_player == 2 and np.any(d < 0):
            raise ConfigError("probe levels must be ordered in the direction of first passage")
    probe_trig = probes.copy()
    if cfg.continuity_correction and probes.size:
        sh = np.array([_shift(spec, z, dt) for z in probes])
        probe_trig = probes + sh if probe_player == 1 else probes - sh
    lo_pad = spec.lo + cfg.boundary_pad if math.isfinite(spec.lo) else -math.inf
    hi_pad = spec.hi - cfg.boundary_pad if math.isfinite(spec.hi) else math.inf
    lo_exit = math.isfinite(spec.lo) and spec.boundary_lo.value == "exit_not_entrance"
    hi_exit = math.isfinite(spec.hi) and spec.boundary_hi.value == "exit_not_entrance"
    max_steps = np.iinfo(np.int64).max if horizon is None else int(math.ceil(horizon / dt))
    r_const = float(spec.discount) if spec.constant_rate else 0.0
    seed = int(cfg.seed)
    kernel = _kernel_for(spec, running, cfg.parallel)
    out = kernel(float(x0), int(cfg.n_paths), 0, np.uint64(seed & 0xFFFFFFFF),
                 np.uint64(seed >> 32), dt, r_const, codes, levels, trig, probe_trig, lo_pad, hi_pad,
                 lo_exit, hi_exit, math.log(cfg.discount_floor), max_steps, ck_steps,
                 probes, int(probe_player), bool(stop_after_probes and probes.size))
    outcome, x_stop, ld, acc, clamps, ck_x, ck_ld, ck_alive, probe_ld = out
    return Simulation(outcome, x_stop, ld, acc, clamps, ck_times, ck_x, ck_ld,
                      ck_alive.astype(bool), probes, probe_ld)


# --------------------------------------------------------------- estimates

@dataclass(frozen=True)
class PayoffEstimate:
    mean: float
    standard_error: float
    n_effective: int
    fraction_truncated: float
    clamp_events: int = 0

    @classmethod
    def from_samples(cls, values, fraction_truncated=0.0, clamp_events=0):
        v = np.asarray(values, dtype=float)
        n = v.size
        se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(float(np.sum(v) / n), se, int(n), float(fraction_truncated), int(clamp_events))

    def within(self, value, k=3.0):
        return abs(self.mean - value) <= k * self.standard_error

    def to_dict(self):
        return dict(self.__dict__)


def _cost_values(H, x):
    return np.asarray(H.H(x) if hasattr(H, "H") else H(x), dtype=float)


def path_payoffs(game, sim: Simulation, player: int) -> np.ndarray:
    """Discounted realised cost of each path for one player."""
    own = game.G1 if player == 1 else game.G2
    other = game.L1 if player == 1 else game.L2
    own_code = P1_STOPS if player == 1 else P2_STOPS
    other_code = P2_STOPS if player == 1 else P1_STOPS
    vals = np.zeros(sim.n)
    for code, cost in ((own_code, own), (other_code, other)):
        m = sim.outcome == code
        if np.any(m):
            vals[m] = np.exp(sim.logdisc[m]) * _cost_values(cost, sim.x_stop[m])
    return vals


def estimate_payoffs(game, strat: StrategyPair, x0: float, cfg: PathConfig):
    """Both players' payoff estimates from one set of paths."""
    sim = simulate(game.spec, strat, x0, cfg)
    return tuple(PayoffEstimate.from_samples(path_payoffs(game, sim, p), sim.fraction_truncated,
                                             sim.clamp_events) for p in (1, 2))


def estimate_payoff(game, strat: StrategyPair, x0: float, cfg: PathConfig, player: int) -> PayoffEstimate:
    if player not in (1, 2):
        raise ConfigError(f"player must be 1 or 2, got {player!r}")
    return estimate_payoffs(game, strat, x0, cfg)[player - 1]


def laplace_mc(spec, x: float, y: float, cfg: PathConfig) -> PayoffEstimate:
    """Monte Carlo estimate of ``E_x[exp(-int r dt); tau(y) < inf]``."""
    if y >= x:
        strat = StrategyPair._unchecked(Rule.never(), Rule.above(y))
    else:
        strat = StrategyPair._unchecked(Rule.below(y), Rule.never())
    sim = simulate(spec, strat, x, cfg)
    hit = (sim.outcome == P1_STOPS) | (sim.outcome == P2_STOPS)
    vals = np.where(hit, np.exp(sim.logdisc), 0.0)
    return PayoffEstimate.from_samples(vals, sim.fraction_truncated, sim.clamp_events)


def resolvent_mc(spec, f, x: float, cfg: PathConfig) -> PayoffEstimate:
    """Monte Carlo estimate of ``E_x[int_0^explosion exp(-int r) f(X_t) dt]``.

    ``f`` must compile under numba.
    """
    never = StrategyPair._unchecked(Rule.never(), Rule.never())
    sim = simulate(spec, never, x, cfg, running=f)
    return PayoffEstimate.from_samples(sim.running, sim.fraction_truncated, sim.clamp_events)


# --------------------------------------------------------------- deviations

@dataclass
class PlayerDeviations:
    player: int
    rule: str
    equilibrium: PayoffEstimate
    levels: list
    estimates: list
    differences: list
    difference_se: list
    never_estimate: PayoffEstimate | None
    never_difference: float | None
    never_difference_se: float | None
    worst_z: float
    passed: bool

    def to_dict(self):
        d = dict(self.__dict__)
        d["equilibrium"] = self.equilibrium.to_dict()
        d["never_estimate"] = None if self.never_estimate is None else self.never_estimate.to_dict()
        return d


@dataclass
class DeviationReport:
    x0: float
    n_paths: int
    players: dict
    passed: bool
    fraction_truncated: float
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {"x0": self.x0, "n_paths": self.n_paths, "passed": self.passed,
                "fraction_truncated": self.fraction_truncated, "notes": list(self.notes),
                "players": {str(k): v.to_dict() for k, v in self.players.items()}}

    def rows(self):
        for p, d in self.players.items():
            for z, est, diff, se in zip(d.levels, d.estimates, d.differences, d.difference_se):
                yield {"player": p, "level": z, "estimate": est, "difference": diff, "se": se}


def deviation_levels(spec, rule: Rule, opp: Rule, x0: float, player: int, grid_size: int):
    """Deviation thresholds on both sides of a player's equilibrium level."""
    lo, hi = spec.lo, spec.hi
    if player == 1:
        cap = opp.level if opp.kind == "above" else x0
        cap = min(cap, x0)
        base = rule.level if rule.kind == "below" else None
        if base is None:
            floor = lo + 0.02 * (x0 - lo) if math.isfinite(lo) else x0 - 3.0
            return np.linspace(floor, cap, 2 * grid_size)
        width = max(x0 - base, 0.5)
        if math.isfinite(lo):
            low = lo + (base - lo) * (1.0 - np.arange(1, grid_size + 1) / (grid_size + 1.0))
        else:
            low = base - width * np.arange(1, grid_size + 1) / grid_size
        up = base + (cap - base) * np.arange(1, grid_size + 1) / grid_size if cap > base else \
            base + width * np.arange(1, grid_size + 1) / grid_size
        return np.concatenate([low, up])
    cap = opp.level if opp.kind == "below" else x0
    cap = max(cap, x0)
    base = rule.level if rule.kind == "above" else None
    if base is None:
        ceil = x0 + 3.0 if not math.isfinite(hi) else hi - 0.02 * (hi - x0)
        return np.linspace(cap, ceil, 2 * grid_size)
    width = max(base - x0, 0.5)
    if math.isfinite(hi):
        upper = hi - (hi - base) * (1.0 - np.arange(1, grid_size + 1) / (grid_size + 1.0))
    else:
        upper = base + width * np.arange(1, grid_size + 1) / grid_size
    down = base - (base - cap) * np.arange(1, grid_size + 1) / grid_size if cap < base else \
        base - width * np.arange(1, grid_size + 1) / grid_size
    return np.concatenate([down, upper])


def _probe_payoffs(game, sim, player, levels_sorted):
    """Per-path payoff matrix for every probe level, plus the never-stop column."""
    own = game.G1 if player == 1 else game.G2
    base = path_payoffs(game, sim, player)  # opponent stops, explosion or truncation
    g = _cost_values(own, levels_sorted)
    hit = ~np.isnan(sim.probe_ld)
    mat = np.where(hit, np.exp(np.where(hit, sim.probe_ld, 0.0)) * g[None, :], base[:, None])
    return mat, base


def nash_deviation_test(game, eq, x0: float, cfg: PathConfig, grid_size: int = 20,
                        levels=None, include_never: bool = False) -> DeviationReport:
    """Check that no threshold deviation lowers a player's expected cost.

    For each player the opponent keeps its equilibrium rule; one simulation
    with the deviating player never stopping records first-passage discounts
    at all candidate levels, so every deviation shares the same paths. A
    deviation fails when it beats the equilibrium by more than three paired
    standard errors.

    Paths stop once every probe level is passed, unless ``include_never``
    asks for the never-stop deviation too (that needs each path followed
    to the discount floor, which is slow for recurrent processes).
    """
    strat = eq.strategies if hasattr(eq, "strategies") else eq
    spec = game.spec
    players = {}
    trunc = []
    notes = []
    for p in (1, 2):
        rule, opp = strat.rule(p), strat.rule(3 - p)
        direction = "below" if p == 1 else "above"
        if rule.kind not in (direction, "never"):
            notes.append(f"player {p} rule {rule.kind!r} has no threshold deviation family")
            continue
        grid = np.asarray(levels[p] if levels is not None else
                          deviation_levels(spec, rule, opp, x0, p, grid_size), dtype=float)
        grid = grid[(grid > spec.lo) & (grid < spec.hi)]
        cand = list(grid)
        if rule.kind == direction:
            cand.append(rule.level)
        cand = np.unique(np.asarray(cand))
        ordered = cand[::-1] if p == 1 else cand
        probe_strat = strat.with_rule(p, Rule.never())
        finite_only = rule.kind == direction and not include_never
        sim = simulate(spec, probe_strat, x0, cfg, probe_levels=ordered, probe_player=p,
                       stop_after_probes=finite_only)
        trunc.append(sim.fraction_truncated)
        mat, never_vals = _probe_payoffs(game, sim, p, ordered)
        if rule.kind == direction:
            k_eq = int(np.flatnonzero(ordered == rule.level)[0])
            eq_vals = mat[:, k_eq]
        else:
            eq_vals = never_vals
        eq_est = PayoffEstimate.from_samples(eq_vals, sim.fraction_truncated, sim.clamp_events)
        idx = {float(z): k for k, z in enumerate(ordered)}
        est, diffs, ses = [], [], []
        worst = math.inf
        for z in grid:
            col = mat[:, idx[float(z)]]
            d = col - eq_vals
            se = float(np.std(d, ddof=1) / math.sqrt(d.size))
            md = float(np.sum(d) / d.size)
            est.append(float(np.sum(col) / col.size))
            diffs.append(md)
            ses.append(se)
            if se > 0:
                worst = min(worst, md / se)
            elif md < 0:
                worst = -math.inf
        never_est = nd = nse = None
        if rule.kind == direction and include_never:
            d = never_vals - eq_vals
            never_est = PayoffEstimate.from_samples(never_vals, sim.fraction_truncated)
            nd = float(np.sum(d) / d.size)
            nse = float(np.std(d, ddof=1) / math.sqrt(d.size))
            if nse > 0:
                worst = min(worst, nd / nse)
        passed = all(dm >= -3.0 * s for dm, s in zip(diffs, ses))
        if nd is not None:
            passed = passed and nd >= -3.0 * nse
        players[p] = PlayerDeviations(p, rule.describe(), eq_est, [float(z) for z in grid], est,
                                      diffs, ses, never_est, nd, nse, float(worst), bool(passed))
    ok = bool(players) and all(d.passed for d in players.values())
    return DeviationReport(float(x0), int(cfg.n_paths), players, ok,
                           float(max(trunc)) if trunc else 0.0, notes)


# --------------------------------------------------------------- martingales

@dataclass
class MartingaleReport:
    x0: float
    checkpoints: list
    targets: dict
    means: dict
    standard_errors: dict
    martingale_passed: dict
    sub_means: dict
    sub_increments: dict
    sub_increment_se: dict
    sub_passed: dict
    passed: bool

    def to_dict(self):
        return {k: (v if not isinstance(v, dict) else {str(a): b for a, b in v.items()})
                for k, v in self.__dict__.items()}


def _checkpoint_values(sim, v, x0):
    """Discounted value at each checkpoint, frozen at the stopping time."""
    x, ld = sim.ck_x, sim.ck_ld
    vals = np.exp(ld) * np.asarray(v(x.ravel()), dtype=float).reshape(x.shape)
    dead = ~sim.ck_alive & (sim.outcome[:, None] == EXPLOSION)
    vals[dead] = 0.0
    return vals


def martingale_check(game, eq, v1, v2, x0: float, cfg: PathConfig,
                     checkpoints=(0.5, 1.0, 2.0, 4.0, 8.0)) -> MartingaleReport:
    """Stopped discounted payoffs are martingales; stopping only at the rival's
    time gives sub-martingales (expectations non-decreasing)."""
    strat = eq.strategies if hasattr(eq, "strategies") else eq
    spec = game.spec
    cks = sorted(float(t) for t in checkpoints)
    horizon = cks[-1]
    sim = simulate(spec, strat, x0, cfg, checkpoints=cks, horizon=horizon)
    targets, means, ses, mpass = {}, {}, {}, {}
    smeans, sinc, sse, spass = {}, {}, {}, {}
    for p, v in ((1, v1), (2, v2)):
        vals = _checkpoint_values(sim, v, x0)
        n = vals.shape[0]
        targets[p] = float(v(x0))
        means[p] = [float(np.sum(vals[:, j]) / n) for j in range(len(cks))]
        ses[p] = [float(np.std(vals[:, j], ddof=1) / math.sqrt(n)) for j in range(len(cks))]
        mpass[p] = bool(all(abs(m - targets[p]) <= 3.0 * s + 1e-12 * max(1.0, abs(targets[p]))
                            for m, s in zip(means[p], ses[p])))
        sub = simulate(spec, strat.with_rule(p, Rule.never()), x0, cfg, checkpoints=cks,
                       horizon=horizon)
        sv = _checkpoint_values(sub, v, x0)
        smeans[p] = [float(np.sum(sv[:, j]) / n) for j in range(len(cks))]
        incs, incse = [], []
        prev = np.full(n, targets[p])
        for j in range(len(cks)):
            d = sv[:, j] - prev
            incs.append(float(np.sum(d) / n))
            incse.append(float(np.std(d, ddof=1) / math.sqrt(n)))
            prev = sv[:, j]
        sinc[p], sse[p] = incs, incse
        spass[p] = bool(all(d >= -3.0 * s - 1e-12 for d, s in zip(incs, incse)))
    ok = all(mpass.values()) and all(spass.values())
    return MartingaleReport(float(x0), cks, targets, means, ses, mpass, smeans, sinc, sse,
                            spass, bool(ok))


def discounted_martingale(spec, fn, x0: float, t: float, cfg: PathConfig) -> PayoffEstimate:
    """Estimate ``E[exp(-int_0^t r) fn(X_t)]`` for a free-running path."""
    never = StrategyPair._unchecked(Rule.never(), Rule.never())
    sim = simulate(spec, never, x0, cfg, checkpoints=[t], horizon=t)
    vals = np.exp(sim.ck_ld[:, 0]) * np.asarray(fn(sim.ck_x[:, 0]), dtype=float)
    vals[~sim.ck_alive[:, 0]] = 0.0
    return PayoffEstimate.from_samples(vals, sim.fraction_truncated, sim.clamp_events)

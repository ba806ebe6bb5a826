import math

import numpy as np
import pytest

from dynkin.diffusion import TransformContext, bessel, squared_bessel
from dynkin.errors import ConfigError
from dynkin.montecarlo import (P1_STOPS, P2_STOPS, PROBED, PathConfig, PayoffEstimate,
                               discounted_martingale, estimate_payoff, estimate_payoffs,
                               nash_deviation_test, philox_block, simulate)
from dynkin.strategies import Rule, StrategyPair

# Philox4x32-10 known-answer vectors
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]

SMALL = PathConfig(dt=1e-3, n_paths=4000, seed=7)


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    assert tuple(int(w) for w in philox_block(ctr, key)) == expected


def test_pathconfig_validation():
    for bad in ({"dt": 0.0}, {"dt": -1e-3}, {"n_paths": 0}, {"n_paths": 2.5},
                {"discount_floor": 1.0}, {"discount_floor": 0.0}, {"boundary_pad": 0.0},
                {"seed": -1}):
        with pytest.raises(ConfigError):
            PathConfig(**bad)
    assert PathConfig().replace(dt=1e-3).dt == 1e-3


def test_same_seed_same_paths(bm):
    s = StrategyPair.thresholds(-0.5, 1.5)
    a = simulate(bm, s, 0.5, SMALL)
    b = simulate(bm, s, 0.5, SMALL)
    assert np.array_equal(a.outcome, b.outcome) and np.array_equal(a.x_stop, b.x_stop)
    assert np.array_equal(a.logdisc, b.logdisc)
    c = simulate(bm, s, 0.5, SMALL.replace(seed=8))
    assert not np.array_equal(a.logdisc, c.logdisc)


def test_serial_and_parallel_agree(bm):
    s = StrategyPair.thresholds(-0.5, 1.5)
    a = simulate(bm, s, 0.5, SMALL)
    b = simulate(bm, s, 0.5, SMALL.replace(parallel=True))
    assert np.array_equal(a.outcome, b.outcome)
    assert np.array_equal(a.x_stop, b.x_stop) and np.array_equal(a.logdisc, b.logdisc)


def test_immediate_stops(tanh_game):
    s = StrategyPair.thresholds(-0.5, 1.5)
    e1, e2 = estimate_payoffs(tanh_game, s, -0.7, SMALL)
    assert e1.mean == pytest.approx(math.tanh(-0.7), abs=1e-15) and e1.standard_error == 0
    assert e2.mean == pytest.approx(-1.2)
    e1, e2 = estimate_payoffs(tanh_game, s, 1.6, SMALL)
    assert e1.mean == pytest.approx(-1.2) and e2.mean == pytest.approx(-math.tanh(0.6))


def test_ties_go_to_player2(tanh_game):
    # overlapping stopping sets: at time zero both want to stop
    s = StrategyPair._unchecked(Rule.below(1.0), Rule.above(0.0))
    sim = simulate(tanh_game.spec, s, 0.5, SMALL)
    assert np.all(sim.outcome == P2_STOPS)


def test_never_stopping_costs_nothing(tanh_game):
    s = StrategyPair._unchecked(Rule.never(), Rule.never())
    cfg = PathConfig(dt=1e-2, n_paths=500, seed=1, discount_floor=1e-3)
    e = estimate_payoff(tanh_game, s, 0.5, cfg, 1)
    assert e.mean == 0.0 and e.fraction_truncated == 1.0
    with pytest.raises(ConfigError):
        estimate_payoff(tanh_game, s, 0.5, cfg, 3)


def test_payoff_estimate_matches_analytic(tanh_game, tanh_eq, tanh_payoffs):
    cfg = PathConfig(dt=1e-4, n_paths=20_000, seed=3)
    e1, e2 = estimate_payoffs(tanh_game, tanh_eq.strategies, 0.5, cfg)
    v1, v2 = tanh_payoffs
    assert e1.within(v1(0.5)) and e2.within(v2(0.5))
    assert e1.fraction_truncated < 1e-3


def test_fundamental_solutions_are_discounted_martingales(bm, bessel3):
    cfg = PathConfig(dt=1e-3, n_paths=20_000, seed=9)
    bm_ctx = TransformContext.from_spec(bm)
    be_ctx = TransformContext.from_spec(bessel3)
    for t in (0.5, 2.0):
        assert discounted_martingale(bm, bm_ctx.pair.phi, 0.0, t, cfg).within(1.0)
        assert discounted_martingale(bessel3, be_ctx.pair.psi, 1.0, t, cfg).within(1.0)


def test_bessel3_phi_is_a_strict_local_martingale(bessel3):
    # phi ~ 1/x at the entrance point, and 1/BES(3) loses mass
    ctx = TransformContext.from_spec(bessel3)
    est = discounted_martingale(bessel3, ctx.pair.phi, 1.0, 2.0,
                                PathConfig(dt=1e-3, n_paths=20_000, seed=9))
    assert est.mean + 5 * est.standard_error < 1.0


def test_exit_boundary_absorbs():
    spec = squared_bessel(0.0, rate=1.0)
    never = StrategyPair._unchecked(Rule.never(), Rule.never())
    sim = simulate(spec, never, 0.05, PathConfig(dt=1e-3, n_paths=2000, seed=4))
    assert sim.counts()["explosion"] > 1000


def test_entrance_boundary_reflects():
    spec = bessel(3.0, rate=0.5)
    never = StrategyPair._unchecked(Rule.never(), Rule.never())
    sim = simulate(spec, never, 0.01, PathConfig(dt=1e-3, n_paths=2000, seed=4, discount_floor=1e-2))
    assert sim.counts()["explosion"] == 0 and np.all(sim.x_stop > 0)


def test_probe_levels_must_be_ordered(bm):
    s = StrategyPair._unchecked(Rule.never(), Rule.above(1.5))
    with pytest.raises(ConfigError):
        simulate(bm, s, 0.5, SMALL, probe_levels=[-1.0, -0.5], probe_player=1)
    with pytest.raises(ConfigError):
        simulate(bm, s, 0.5, SMALL, probe_levels=[-0.5], probe_player=0)


def test_probes_match_direct_runs(tanh_game):
    """A probe level reproduces, path by path, the run where that level is the rule."""
    spec = tanh_game.spec
    probe = simulate(spec, StrategyPair._unchecked(Rule.never(), Rule.above(1.5)), 0.5, SMALL,
                     probe_levels=[0.0, -0.5], probe_player=1, stop_after_probes=True)
    direct = simulate(spec, StrategyPair.thresholds(-0.5, 1.5), 0.5, SMALL)
    hit = direct.outcome == P1_STOPS
    assert np.array_equal(~np.isnan(probe.probe_ld[:, 1]), hit)
    assert np.allclose(probe.probe_ld[hit, 1], direct.logdisc[hit])
    assert np.all((probe.outcome == PROBED) | (probe.outcome == P2_STOPS))


def test_deviation_test_flags_a_bad_threshold(tanh_game, tanh_eq):
    cfg = PathConfig(dt=1e-3, n_paths=20_000, seed=21)
    good = nash_deviation_test(tanh_game, tanh_eq, 0.5, cfg, grid_size=5)
    bad = nash_deviation_test(tanh_game, StrategyPair.thresholds(tanh_eq.x1_star + 0.4,
                                                                 tanh_eq.x2_star), 0.5, cfg,
                              grid_size=5)
    assert good.passed
    assert not bad.players[1].passed
    assert len(good.players[1].levels) == 10


def test_payoff_estimate_helpers():
    e = PayoffEstimate.from_samples(np.array([1.0, 2.0, 3.0, 4.0]))
    assert e.mean == 2.5 and e.standard_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert e.within(2.5 + 2.9 * e.standard_error) and not e.within(2.5 + 3.1 * e.standard_error)
    assert e.to_dict()["n_effective"] == 4

import numpy as np
import pytest

from dynkin.equilibrium import EquilibriumResult
from dynkin.errors import RegimeMismatch
from dynkin.payoff import (build_payoffs, one_sided_slopes, payoffs_csv, rule_payoffs,
                           sample_payoffs, verify_variational)
from dynkin.strategies import StrategyPair

from oracles import bm_game_payoffs, tanh_costs


def test_continuation_matches_laplace_oracle(tanh_eq, tanh_payoffs):
    v1, v2 = tanh_payoffs
    a, b = tanh_eq.x1_star, tanh_eq.x2_star
    xs = np.linspace(a + 0.01, b - 0.01, 25)
    j1, j2 = bm_game_payoffs(*tanh_costs(), xs, a, b)
    assert np.allclose(v1(xs), j1, atol=1e-12, rtol=1e-10)
    assert np.allclose(v2(xs), j2, atol=1e-12, rtol=1e-10)


def test_stopping_regions(tanh_eq, tanh_payoffs):
    v1, v2 = tanh_payoffs
    below = np.linspace(tanh_eq.x1_star - 3, tanh_eq.x1_star, 9)
    above = np.linspace(tanh_eq.x2_star, tanh_eq.x2_star + 3, 9)
    assert np.allclose(v1(below), np.tanh(below))
    assert np.allclose(v2(below), -1.2)
    assert np.allclose(v1(above), -1.2)
    assert np.allclose(v2(above), -np.tanh(above - 1))


def test_continuity(tanh_payoffs):
    for v in tanh_payoffs:
        assert max(v.continuity_gaps()) < 1e-12


def test_affine_in_transformed_coordinates(tanh_game, tanh_eq, tanh_payoffs):
    ctx = tanh_game.ctx
    v1, v2 = tanh_payoffs
    xs = np.linspace(tanh_eq.x1_star, tanh_eq.x2_star, 50)[1:-1]
    y = ctx.F(xs)
    for v, G, y_own in ((v1, tanh_game.G1, tanh_eq.y1_star), (v2, tanh_game.G2, tanh_eq.y2_star)):
        w = v(xs) / ctx.pair.phi(xs)
        slope, icpt = np.polyfit(y, w, 1)
        assert np.max(np.abs(w - (slope * y + icpt))) < 1e-10
        assert slope == pytest.approx(float(G.hat.deriv(y_own)), abs=1e-8)


def test_smooth_fit(tanh_eq, tanh_payoffs):
    v1, v2 = tanh_payoffs
    for v, x in ((v1, tanh_eq.x1_star), (v2, tanh_eq.x2_star)):
        left, right = one_sided_slopes(v, x)
        assert abs(left - right) < 1e-6
    # no smooth fit at the opponent's threshold
    left, right = one_sided_slopes(v1, tanh_eq.x2_star)
    assert abs(left - right) > 1e-2


@pytest.mark.parametrize("which", ["tanh", "shift", "exit"])
def test_variational_report(which, request):
    game = request.getfixturevalue({"tanh": "tanh_game", "shift": "shift_game",
                                    "exit": "exit_game"}[which])
    eq = request.getfixturevalue({"tanh": "tanh_eq", "shift": "shift_eq", "exit": "exit_eq"}[which])
    v1, v2 = build_payoffs(game, eq)
    rep = verify_variational(game, eq, v1, v2)
    assert rep.passed, rep.to_dict()
    assert all(g >= -1e-9 for g in rep.obstacle_gap)


def test_exit_psi_piece(exit_game, exit_eq):
    v1, v2 = build_payoffs(exit_game, exit_eq)
    ctx = exit_game.ctx
    x_S = exit_eq.x_S
    p = float(exit_game.G1.H(x_S)) / float(ctx.pair.psi(x_S))
    xs = np.geomspace(1e-4, 0.999 * x_S, 20)
    assert np.allclose(v1(xs), p * ctx.pair.psi(xs), rtol=1e-10)
    assert set(v1.region(xs)) == {"pure_psi"}
    band = np.linspace(x_S, exit_eq.x1_star, 7)
    assert np.allclose(v1(band), exit_game.G1.H(band))


def test_rule_payoffs_off_equilibrium(tanh_game):
    a, b = -0.3, 2.2
    v1, v2 = rule_payoffs(tanh_game, StrategyPair.thresholds(a, b))
    xs = np.linspace(a + 0.05, b - 0.05, 11)
    j1, j2 = bm_game_payoffs(*tanh_costs(), xs, a, b)
    assert np.allclose(v1(xs), j1, rtol=1e-10) and np.allclose(v2(xs), j2, rtol=1e-10)


def test_build_payoffs_needs_regime(tanh_game):
    with pytest.raises(RegimeMismatch):
        build_payoffs(tanh_game, EquilibriumResult(None, "main"))


def test_sampling_and_csv(tanh_game, tanh_payoffs):
    rows = sample_payoffs(tanh_game, *tanh_payoffs, n=11)
    assert len(rows) == 11 and rows[0][3] == "cost_G"
    text = payoffs_csv(rows)
    assert text.splitlines()[0] == "x,v1,v2,region1,region2"
    assert len(text.splitlines()) == 12

import math

import numpy as np
import pytest

from dynkin.costs import (HatFunction, SmoothFunction, check_assumptions, classify_cost,
                          generator_apply)
from dynkin.diffusion import TransformContext, bessel, brownian_motion
from dynkin.equilibrium import build_game
from dynkin.errors import DomainError, MultipleSignChanges

from conftest import TANH, convexity_mismatches, random_cost


@pytest.fixture(scope="module")
def ctx():
    return TransformContext.from_spec(brownian_motion(rate=0.5))


def test_generator_of_constant(ctx):
    x = np.linspace(-3, 3, 7)
    assert np.allclose(generator_apply(ctx.spec, SmoothFunction.constant(-2.0), x), 1.0)


def test_generator_kills_fundamental_solutions(ctx):
    x = np.linspace(-3, 3, 7)
    for u in ("exp(x)", "exp(-x)"):
        assert np.max(np.abs(generator_apply(ctx.spec, u, x))) < 1e-13


def test_generator_of_tanh(ctx):
    x = np.linspace(-2, 2, 41)
    t = np.tanh(x)
    expected = -t * (1 - t ** 2 + 0.5)
    assert np.allclose(generator_apply(ctx.spec, "tanh(x)", x), expected, atol=1e-14)
    assert generator_apply(ctx.spec, "tanh(x)", -1.0) > 0
    assert generator_apply(ctx.spec, "tanh(x)", 1.0) < 0
    assert generator_apply(ctx.spec, "tanh(x)", 0.0) == 0.0


def test_generator_outside_interval():
    spec = bessel(3.0)
    with pytest.raises(DomainError):
        generator_apply(spec, "x", -1.0)


def test_classify_tanh_pair(ctx):
    g1 = classify_cost(ctx.spec, ctx, "tanh(x)")
    g2 = classify_cost(ctx.spec, ctx, "-tanh(x - 1)")
    assert g1.class_tag == "A1" and g1.x_hat == pytest.approx(0.0, abs=1e-10)
    assert g2.class_tag == "A2" and g2.x_hat == pytest.approx(1.0, abs=1e-10)
    # natural lower boundary: Ghat1' diverges to -inf, Ghat2' to +inf
    assert g1.slope_at_zero == -math.inf and g2.slope_at_zero == math.inf
    assert g1.lower_limit == 0.0 and g1.in_class_A
    # stationary point of Ghat1 sits below y_hat
    assert 0 < g1.stationary_point < g1.y_hat


def test_hat_slope_diverges_at_zero(ctx):
    g1 = classify_cost(ctx.spec, ctx, "tanh(x)")
    ys = 10.0 ** -np.arange(2, 12, 2)
    slopes = g1.hat.deriv(ys)
    assert np.all(np.diff(slopes) < 0) and slopes[-1] < -1e4
    assert g1.hat(1e12) > 1e5


def test_classify_psi_is_none(ctx):
    assert classify_cost(ctx.spec, ctx, "exp(x)").class_tag == "none"


def test_multiple_sign_changes(ctx):
    prof = classify_cost(ctx.spec, ctx, "sin(x)")
    assert prof.class_tag == "none" and len(prof.diagnostics["crossings"]) > 1
    with pytest.raises(MultipleSignChanges):
        classify_cost(ctx.spec, ctx, "sin(x)", strict=True)


@pytest.mark.parametrize("make", [lambda: brownian_motion(rate=0.5), lambda: bessel(3.0, rate=0.5)])
def test_transform_identities(make):
    c = TransformContext.from_spec(make())
    x = c.grid(400)
    y = c.F(x)
    psi = SmoothFunction(c.pair.psi, c.pair.dpsi, c.pair.d2psi, "psi")
    phi = SmoothFunction(c.pair.phi, c.pair.dphi, c.pair.d2phi, "phi")
    assert np.max(np.abs(HatFunction(c, psi).value_x(x) / y - 1)) < 1e-10
    assert np.max(np.abs(HatFunction(c, phi).value_x(x) - 1)) < 1e-10


def test_convexity_matches_generator_sign(ctx):
    rng = np.random.default_rng(2024)
    for _ in range(50):
        text = random_cost(rng)
        bad, checked = convexity_mismatches(ctx, text)
        assert bad == 0 and checked > 400, text


def test_analytic_second_derivative_sign(ctx):
    g = classify_cost(ctx.spec, ctx, "tanh(x)")
    x = np.array([-1.0, -0.3, 0.3, 1.0])
    assert np.array_equal(np.sign(g.hat.second_x(x)), np.sign(g.h_gen(x)))


def test_slope_integral_identity(ctx):
    g = classify_cost(ctx.spec, ctx, "tanh(x)")
    for y in (0.05, 0.5, 2.0):
        assert g.hat.deriv(y) == pytest.approx(g.hat.deriv_integral(y), rel=1e-7)


def test_scaling_invariance(ctx):
    scaled = TransformContext(ctx.pair.rescaled(3.7, 0.2))
    for text in ("tanh(x)", "-tanh(x - 1)", "tanh(x - 1.5) - 0.3"):
        a = classify_cost(ctx.spec, ctx, text)
        b = classify_cost(ctx.spec, scaled, text)
        assert a.class_tag == b.class_tag
        assert b.x_hat == pytest.approx(a.x_hat, abs=1e-9)
        assert b.stationary_x == pytest.approx(a.stationary_x, abs=1e-8)


def test_assumptions_tanh_fixture(tanh_game):
    rep = check_assumptions(tanh_game)
    assert rep.passed and rep.route == "main"


def test_assumption_ii_fails_when_thresholds_reverse(bm):
    game = build_game(bm, TANH[0], "-tanh(x + 1)", TANH[2], TANH[3])
    rep = check_assumptions(game)
    assert not rep.classes_ok and rep.lower_ok
    assert any("(ii)" in m for m in rep.messages)


def test_relaxed_route(bm):
    game = build_game(bm, "tanh(x)", "tanh(x - 1)", "tanh(x) - 0.3", "tanh(x - 1) - 0.3")
    rep = check_assumptions(game)
    assert rep.route == "relaxed"


def test_assumption_i_fails(bm):
    game = build_game(bm, "tanh(x)", "-tanh(x - 1)", "tanh(x) + 0.1", "-1.2")
    rep = check_assumptions(game)
    assert not rep.lower_ok and any("(i)" in m for m in rep.messages)

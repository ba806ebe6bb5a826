"""Acceptance criteria 1 to 13.

Each test records a one-line verdict that is printed at the end of the run.
"""
import contextlib
import math
import time

import numpy as np
import pytest

from dynkin.cli import run_command
from dynkin.costs import HatFunction, SmoothFunction
from dynkin.diffusion import (DiffusionSpec, TransformContext, bessel, brownian_motion,
                              geometric_brownian_motion, solve_fundamental)
from dynkin.equilibrium import best_reply_p1, best_reply_p2, build_game, solve_equilibrium
from dynkin.expr import parse
from dynkin.montecarlo import (PathConfig, estimate_payoffs, martingale_check,
                               nash_deviation_test, simulate)
from dynkin.payoff import build_payoffs, one_sided_slopes
from dynkin.strategies import StrategyPair

from conftest import CRITERIA, TANH, bessel_costs, convexity_mismatches, random_cost
from oracles import bm_free_minimiser, grid_best_response_oracle, tanh_costs

MC = PathConfig(dt=1e-4, n_paths=100_000, seed=20240601)


@contextlib.contextmanager
def criterion(n):
    """Record PASS/FAIL for criterion ``n``; the body appends detail strings."""
    notes = []
    t0 = time.perf_counter()
    try:
        yield notes
    except BaseException as exc:
        CRITERIA[n] = (False, f"{type(exc).__name__}: {exc}"[:200])
        raise
    CRITERIA[n] = (True, "; ".join(notes + [f"{time.perf_counter() - t0:.1f}s"]))


def test_criterion_01_fundamental_solutions():
    with criterion(1) as notes:
        t0 = time.perf_counter()
        worst_fit = worst_w = 0.0
        for spec, (lo, hi) in ((brownian_motion(0.3, 1.2, rate=0.7), (-4.0, 4.0)),
                               (brownian_motion(rate=0.5), (-4.0, 4.0)),
                               (geometric_brownian_motion(0.05, 0.4, rate=0.5), (0.05, 20.0))):
            exact = solve_fundamental(spec, method="closed_form")
            num = solve_fundamental(spec, method="numerical")
            x = np.linspace(lo, hi, 1024)
            for f in ("psi", "phi"):
                a, b = getattr(exact, f)(x), getattr(num, f)(x)
                worst_fit = max(worst_fit, float(np.max(np.abs(b / a - 1))))
            w = num.wronskian_at(TransformContext(num).grid(1024))
            worst_w = max(worst_w, float(np.max(np.abs(w / num.wronskian - 1))))
        elapsed = time.perf_counter() - t0
        notes.append(f"max rel error {worst_fit:.1e}, Wronskian drift {worst_w:.1e}")
        assert worst_fit < 1e-6 and worst_w < 1e-6
        assert elapsed < 5.0


def test_criterion_02_transform_suite():
    with criterion(2) as notes:
        t0 = time.perf_counter()
        worst = 0.0
        for spec in (brownian_motion(rate=0.5), bessel(3.0, rate=0.5)):
            ctx = TransformContext.from_spec(spec)
            x = ctx.grid(1000)
            y = ctx.F(x)
            p = ctx.pair
            psi_hat = HatFunction(ctx, SmoothFunction(p.psi, p.dpsi, p.d2psi, "psi")).value_x(x)
            phi_hat = HatFunction(ctx, SmoothFunction(p.phi, p.dphi, p.d2phi, "phi")).value_x(x)
            worst = max(worst, float(np.max(np.abs(psi_hat / y - 1))),
                        float(np.max(np.abs(phi_hat - 1))))
        ctx = TransformContext.from_spec(brownian_motion(rate=0.5))
        rng = np.random.default_rng(20240601)
        bad = checked = 0
        for _ in range(50):
            b, c = convexity_mismatches(ctx, random_cost(rng), tol=1e-7)
            bad += b
            checked += c
        elapsed = time.perf_counter() - t0
        notes.append(f"identity error {worst:.1e}; {bad} sign mismatches in {checked} points")
        assert worst < 1e-10 and bad == 0
        assert elapsed < 30.0


def test_criterion_03_tanh_equilibrium(bm):
    with criterion(3) as notes:
        t0 = time.perf_counter()
        game = build_game(bm, *TANH)
        eq = solve_equilibrium(game)
        fp2 = abs(best_reply_p2(game, eq.y1_star) - eq.y2_star)
        fp1 = abs(best_reply_p1(game, eq.y2_star) - eq.y1_star)
        a, b = grid_best_response_oracle(*tanh_costs(), x0=0.5, r=0.5, cell=1e-4)
        elapsed = time.perf_counter() - t0
        notes.append(f"x* = ({eq.x1_star:.6f}, {eq.x2_star:.6f}), oracle ({a:.4f}, {b:.4f}), "
                     f"residuals {abs(eq.residuals['ell1']):.0e}/{abs(eq.residuals['ell2']):.0e}")
        assert eq.regime == "interior_thresholds"
        assert abs(eq.residuals["ell1"]) < 1e-10 and abs(eq.residuals["ell2"]) < 1e-10
        assert fp2 < 1e-9 and fp1 < 1e-9
        assert abs(eq.x1_star - a) <= 1e-4 and abs(eq.x2_star - b) <= 1e-4
        assert elapsed < 60.0


def test_criterion_04_smooth_fit(tanh_game, tanh_eq, tanh_payoffs):
    with criterion(4) as notes:
        v1, v2 = tanh_payoffs
        gaps = []
        for v, x in ((v1, tanh_eq.x1_star), (v2, tanh_eq.x2_star)):
            left, right = one_sided_slopes(v, x)
            gaps.append(abs(left - right))
        ctx = tanh_game.ctx
        xs = np.linspace(tanh_eq.x1_star, tanh_eq.x2_star, 64)[1:-1]
        y = ctx.F(xs)
        w = v1(xs) / ctx.pair.phi(xs)
        slope = tanh_game.G1.hat.deriv(tanh_eq.y1_star)
        affine = float(np.max(np.abs(w - (v1(tanh_eq.x1_star) / ctx.pair.phi(tanh_eq.x1_star)
                                         + slope * (y - tanh_eq.y1_star)))))
        fitted = np.polyfit(y, w, 1)[0]
        notes.append(f"smooth-fit gaps {gaps[0]:.1e}, {gaps[1]:.1e}; affine error {affine:.1e}; "
                     f"slope error {abs(fitted - slope):.1e}")
        assert max(gaps) < 1e-6
        assert affine < 1e-8 and abs(fitted - slope) < 1e-8


def test_criterion_05_monte_carlo(tanh_game, tanh_eq, tanh_payoffs):
    with criterion(5) as notes:
        t0 = time.perf_counter()
        v1, v2 = tanh_payoffs
        worst = 0.0
        for x0 in (-0.6, -0.2, 0.5, 1.2, 1.6):
            e1, e2 = estimate_payoffs(tanh_game, tanh_eq.strategies, x0, MC)
            for e, v in ((e1, v1), (e2, v2)):
                z = abs(e.mean - v(x0)) / e.standard_error
                worst = max(worst, z)
                assert e.within(v(x0)), (x0, e, v(x0))
        elapsed = time.perf_counter() - t0
        notes.append(f"worst |z| = {worst:.2f}")
        assert elapsed < 300.0


def test_criterion_06_nash_deviation(tanh_game, tanh_eq):
    with criterion(6) as notes:
        t0 = time.perf_counter()
        rep = nash_deviation_test(tanh_game, tanh_eq, 0.5, MC, grid_size=20)
        control = nash_deviation_test(tanh_game, StrategyPair.thresholds(tanh_eq.x1_star + 0.2,
                                                                         tanh_eq.x2_star),
                                      0.5, MC, grid_size=20)
        elapsed = time.perf_counter() - t0
        notes.append(f"worst z {min(d.worst_z for d in rep.players.values()):.2f}; control "
                     f"worst z {control.players[1].worst_z:.1f}")
        for d in rep.players.values():
            assert len(d.levels) == 40
        assert rep.passed
        assert not control.passed and not control.players[1].passed
        assert elapsed < 600.0


def test_criterion_07_martingales(tanh_game, tanh_eq, tanh_payoffs):
    with criterion(7) as notes:
        rep = martingale_check(tanh_game, tanh_eq, *tanh_payoffs, 0.5, MC,
                               checkpoints=(0.5, 1.0, 2.0, 4.0, 8.0))
        worst = max(abs(m - rep.targets[p]) / s for p in (1, 2)
                    for m, s in zip(rep.means[p], rep.standard_errors[p]) if s > 0)
        notes.append(f"worst |z| {worst:.2f}; sub-martingale checks {rep.sub_passed}")
        assert len(rep.checkpoints) == 5
        assert all(rep.martingale_passed.values())
        assert all(rep.sub_passed.values())


def test_criterion_08_uniqueness(shift_game, shift_eq):
    with criterion(8) as notes:
        cert = shift_eq.certificate
        notes.append(f"roots {cert.roots_found}, status {shift_eq.uniqueness}")
        assert shift_eq.regime == "interior_thresholds"
        assert len(shift_eq.solutions) == 1 and cert.roots_found == 1
        assert all(cert.hypotheses[k] for k in ("i_L_classes", "ii_tilde_y2_above_yhat1",
                                                "iii_slopes"))
        assert shift_eq.uniqueness == "certified_unique"
        z2, y2 = cert.samples["y2"]
        z1, y1 = cert.samples["y1"]
        assert len(z2) == 50 and len(z1) == 50
        assert np.all(np.diff(y2) < 0) and np.all(np.diff(y1) > 0)


def test_criterion_09_entrance_regime():
    with criterion(9) as notes:
        spec = bessel(3.0, rate=0.5)
        ctx = TransformContext.from_spec(spec)
        regimes = {}
        for s in (2, 12):  # s scales the bump s*x*exp(-x/2) subtracted from L1
            game = build_game(spec, *bessel_costs(s), ctx=ctx)
            eq = solve_equilibrium(game)
            ratio = float(game.L1.hat(eq.y2_inf)) / eq.y2_inf
            regimes[s] = (eq.regime, ratio, game.G1.slope_at_zero, game, eq)
        assert regimes[2][0] == "interior_thresholds" and regimes[2][1] > regimes[2][2]
        assert regimes[12][0] == "p1_never_stops" and regimes[12][1] <= regimes[12][2]
        _, _, _, game, eq = regimes[12]
        x0 = 1.5
        rep = nash_deviation_test(game, eq, x0, MC, grid_size=20)
        d1 = rep.players[1]
        notes.append(f"s=2 interior, s=12 never-stop; P1 worst z {d1.worst_z:.2f} over "
                     f"{len(d1.levels)} thresholds")
        assert d1.passed and len(d1.levels) == 40


def test_criterion_10_exit_regime(exit_game, exit_eq):
    with criterion(10) as notes:
        assert exit_eq.regime == "exit_two_regime"
        v1, v2 = build_payoffs(exit_game, exit_eq)
        worst = 0.0
        lows = (0.05, 0.15)
        highs = (1.6, 2.5, 4.0, 6.0, 8.5)
        assert all(x < exit_eq.x_S for x in lows)
        assert all(exit_eq.x1_star < x < exit_eq.x2_star for x in highs)
        for x0 in lows + highs:
            e1, e2 = estimate_payoffs(exit_game, exit_eq.strategies, x0, MC)
            for e, v in ((e1, v1), (e2, v2)):
                worst = max(worst, abs(e.mean - v(x0)) / max(e.standard_error, 1e-300))
                assert e.within(v(x0)), (x0, e, v(x0))
        notes.append(f"x_S = {exit_eq.x_S:.4f}; worst |z| = {worst:.2f}")


RELAXED = ("tanh(x) - 0.5", "tanh(x - 1) - 0.5", "tanh(x) - 0.8", "tanh(x - 1) - 0.8")


def test_criterion_11_relaxed_route(bm):
    with criterion(11) as notes:
        eq = solve_equilibrium(build_game(bm, *RELAXED))
        x1p = bm_free_minimiser(lambda x: math.tanh(x) - 0.5)
        x2p = bm_free_minimiser(lambda x: math.tanh(x - 1) - 0.5)
        expected = "relaxed_p1_stops" if x1p > x2p else "relaxed_p2_stops"
        swapped = solve_equilibrium(build_game(bm, RELAXED[1], RELAXED[0], RELAXED[3],
                                               RELAXED[2]))
        notes.append(f"x'1 = {x1p:.6f}, x'2 = {x2p:.6f}: {eq.regime}; swapped {swapped.regime}")
        assert eq.route == "relaxed" and eq.regime == expected
        assert abs(eq.x_prime1 - x1p) < 1e-6 and abs(eq.x_prime2 - x2p) < 1e-6
        other = {"relaxed_p1_stops": "relaxed_p2_stops", "relaxed_p2_stops": "relaxed_p1_stops"}
        assert swapped.regime == other[expected]


def test_criterion_12_state_dependent_rate(bm, tanh_eq, tanh_payoffs):
    with criterion(12) as notes:
        rate = parse("0.25 + 0.25 + 0*x").raw()
        spec = DiffusionSpec(bm.mu, bm.sigma, rate)
        assert not spec.constant_rate
        game = build_game(spec, *TANH)
        assert game.ctx.pair.representation == "numerical_grid"
        eq = solve_equilibrium(game)
        v1, v2 = build_payoffs(game, eq)
        xs = np.linspace(-3.0, 4.0, 301)
        dx = max(abs(eq.x1_star - tanh_eq.x1_star), abs(eq.x2_star - tanh_eq.x2_star))
        dv = max(float(np.max(np.abs(v1(xs) - tanh_payoffs[0](xs)))),
                 float(np.max(np.abs(v2(xs) - tanh_payoffs[1](xs)))))
        notes.append(f"threshold shift {dx:.1e}, payoff shift {dv:.1e}")
        assert dx < 1e-8 and dv < 1e-8


def test_criterion_13_determinism(tmp_path, tanh_eq, bm):
    with criterion(13) as notes:
        import os
        cfg = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "tanh.toml")
        outs = []
        for k in range(2):
            out = tmp_path / f"solve{k}.json"
            assert run_command(["solve", "--config", cfg, "--seed", "17", "--out", str(out),
                                "--quiet"]) == 0
            outs.append(out.read_bytes())
        for k in range(2):
            out = tmp_path / f"verify{k}.json"
            run_command(["verify", "--config", cfg, "--seed", "17", "--paths", "2000",
                         "--out", str(out), "--quiet"])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] and outs[2] == outs[3]
        cfg_mc = PathConfig(dt=1e-4, n_paths=20_000, seed=99)
        a = simulate(bm, tanh_eq.strategies, 0.5, cfg_mc)
        b = simulate(bm, tanh_eq.strategies, 0.5, cfg_mc.replace(parallel=True))
        same = (np.array_equal(a.outcome, b.outcome) and np.array_equal(a.x_stop, b.x_stop)
                and np.array_equal(a.logdisc, b.logdisc))
        notes.append("solve and verify JSON byte-identical; serial == parallel")
        assert same

import os
import sys
import warnings

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dynkin.costs import HatFunction, SmoothFunction, generator_apply  # noqa: E402
from dynkin.diffusion import bessel, brownian_motion, squared_bessel  # noqa: E402
from dynkin.equilibrium import build_game, solve_equilibrium  # noqa: E402
from dynkin.payoff import build_payoffs  # noqa: E402

TANH = ("tanh(x)", "-tanh(x - 1)", "-1.2", "-1.2")
TANH_SHIFT = ("tanh(x)", "-tanh(x - 1)", "tanh(x - 1.5) - 0.3", "-tanh(x - 1) - 0.3")
BESQ_EXIT = ("0.5 - 2*sqrt(x) + x", "3 - 0.5*x", "0.5 - 2*sqrt(x) + x - 2*x*exp(-x/8)",
             "2 - 0.5*x")


def bessel_costs(s):
    return ("tanh(x - 1)", "-tanh(x - 3)", f"tanh(x - 1) - 0.3 - {s}*x*exp(-x/2)",
            "-tanh(x - 3) - 0.3")


def random_cost(rng):
    """A random smooth cost expression built from tanh, sin and a Gaussian bump."""
    a = rng.normal(size=4)
    b, w = rng.uniform(0.5, 2.0, 2)
    c, p = rng.uniform(-1.5, 1.5, 2)
    return (f"{a[0]:.6f} + {a[1]:.6f}*tanh({b:.6f}*(x - {c:.6f})) + {a[2]:.6f}*sin({w:.6f}*x + {p:.6f})"
            f" + {a[3]:.6f}*exp(-(x - {c:.6f})^2)")


def convexity_mismatches(ctx, text, tol=1e-7, delta=1e-3):
    """Grid points where the sign of the second difference of Hhat disagrees
    with the sign of the generator image, among points with |h| > tol."""
    H = SmoothFunction.from_expression(text)
    hat = HatFunction(ctx, H)
    x = np.linspace(-2.5, 2.5, 501)
    y = ctx.F(x)
    yl, yr = y * (1 - delta), y * (1 + delta)
    vl, v0, vr = hat.value_x(ctx.F_inv(yl)), hat.value_x(x), hat.value_x(ctx.F_inv(yr))
    second = (vr - v0) / (yr - y) - (v0 - vl) / (y - yl)
    h = generator_apply(ctx.spec, H, x)
    mask = np.abs(h) > tol
    return int(np.sum(np.sign(second[mask]) != np.sign(h[mask]))), int(mask.sum())


CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(autouse=True)
def _quiet_numerics():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def bm():
    return brownian_motion(rate=0.5)


@pytest.fixture(scope="session")
def tanh_game(bm):
    return build_game(bm, *TANH)


@pytest.fixture(scope="session")
def tanh_eq(tanh_game):
    return solve_equilibrium(tanh_game)


@pytest.fixture(scope="session")
def tanh_payoffs(tanh_game, tanh_eq):
    return build_payoffs(tanh_game, tanh_eq)


@pytest.fixture(scope="session")
def shift_game(bm):
    return build_game(bm, *TANH_SHIFT)


@pytest.fixture(scope="session")
def shift_eq(shift_game):
    return solve_equilibrium(shift_game)


@pytest.fixture(scope="session")
def exit_game():
    return build_game(squared_bessel(0.0, rate=1.0), *BESQ_EXIT)


@pytest.fixture(scope="session")
def exit_eq(exit_game):
    return solve_equilibrium(exit_game)


@pytest.fixture(scope="session")
def bessel3():
    return bessel(3.0, rate=0.5)

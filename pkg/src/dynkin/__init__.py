"""Threshold Nash equilibria for nonzero-sum Dynkin games on regular
one-dimensional diffusions."""
from .diffusion import (DiffusionSpec, TransformContext, bessel, brownian_motion,
                        classify_boundary, geometric_brownian_motion, laplace_hitting,
                        resolvent_eval, solve_fundamental, squared_bessel)
from .costs import SmoothFunction, check_assumptions, classify_cost
from .equilibrium import (GameSpec, build_game, best_reply_p1, best_reply_p2,
                          check_uniqueness, solve_equilibrium, solve_single_player)
from .payoff import build_payoffs, verify_variational
from .strategies import Rule, StrategyPair

__version__ = "0.1.0"

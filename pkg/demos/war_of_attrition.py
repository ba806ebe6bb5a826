"""Two players watch a Brownian motion and each waits for the other to quit.

Player 1 pays tanh(x) when quitting and -1.2 when the opponent quits first;
player 2 has the mirrored cost -tanh(x - 1). Both prefer the other to stop,
so the equilibrium is a pair of thresholds: player 1 stops once X drops low
enough, player 2 once X climbs high enough.

Run with:  python demos/war_of_attrition.py
"""
import numpy as np

from dynkin.diffusion import brownian_motion
from dynkin.equilibrium import build_game, solve_equilibrium
from dynkin.montecarlo import PathConfig, estimate_payoffs
from dynkin.payoff import build_payoffs, one_sided_slopes

spec = brownian_motion(rate=0.5)
game = build_game(spec, "tanh(x)", "-tanh(x - 1)", "-1.2", "-1.2")
print("cost classes:", game.G1.class_tag, game.G2.class_tag)

eq = solve_equilibrium(game)
print(f"regime {eq.regime}: player 1 stops below {eq.x1_star:.6f}, "
      f"player 2 stops above {eq.x2_star:.6f}")
print(f"uniqueness: {eq.uniqueness}")

# the value functions are explicit between the thresholds
v1, v2 = build_payoffs(game, eq)
for x in np.linspace(-1.5, 2.5, 9):
    print(f"  x = {x:5.2f}   V1 = {float(v1(x)):+.5f}   V2 = {float(v2(x)):+.5f}")

# each player's value is smooth where that player stops, kinked where the other does
left, right = one_sided_slopes(v1, eq.x1_star)
print(f"V1 slope at x1*: {left:.8f} vs {right:.8f}")
left, right = one_sided_slopes(v1, eq.x2_star)
print(f"V1 slope at x2*: {left:.4f} vs {right:.4f}  (kink from player 2 stopping)")

# a quick simulation check from the midpoint
cfg = PathConfig(dt=1e-4, n_paths=20_000, seed=11)
e1, e2 = estimate_payoffs(game, eq.strategies, 0.5, cfg)
print(f"simulated V1(0.5) = {e1.mean:+.4f} +/- {e1.standard_error:.4f}  exact {float(v1(0.5)):+.4f}")
print(f"simulated V2(0.5) = {e2.mean:+.4f} +/- {e2.standard_error:.4f}  exact {float(v2(0.5)):+.4f}")

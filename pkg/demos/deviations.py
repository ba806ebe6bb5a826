"""Checking the Nash property by simulation.

Every threshold a player could deviate to is priced on the same Brownian
paths, so differences between strategies carry far less noise than the
payoffs themselves. A wrong threshold for player 1 shows up as a profitable
deviation.

Run with:  python demos/deviations.py
"""
from dynkin.diffusion import brownian_motion
from dynkin.equilibrium import build_game, solve_equilibrium
from dynkin.montecarlo import PathConfig, nash_deviation_test
from dynkin.strategies import StrategyPair

game = build_game(brownian_motion(rate=0.5), "tanh(x)", "-tanh(x - 1)", "-1.2", "-1.2")
eq = solve_equilibrium(game)
cfg = PathConfig(dt=1e-3, n_paths=20_000, seed=5)


def show(label, rep):
    print(label)
    for p, d in rep.players.items():
        # differences are deviation cost minus equilibrium cost, so negative means profitable
        k = min(range(len(d.levels)), key=lambda j: d.differences[j])
        print(f"  player {p}: most tempting threshold {d.levels[k]:+.3f} changes the cost by "
              f"{d.differences[k]:+.5f} (worst z {d.worst_z:+.2f}) -> "
              f"{'ok' if d.passed else 'PROFITABLE'}")


show("equilibrium thresholds", nash_deviation_test(game, eq, 0.5, cfg, grid_size=8))
wrong = StrategyPair.thresholds(eq.x1_star + 0.3, eq.x2_star)
show("player 1 stops too early", nash_deviation_test(game, wrong, 0.5, cfg, grid_size=8))

"""How boundary behaviour changes the shape of the equilibrium.

On a Bessel(3) process the origin is an entrance point. Lowering player 1's
cost for being preempted eventually makes waiting forever optimal for
player 1. On a squared Bessel process of dimension 0 the origin is an exit
point, and player 1 then stops on a band instead of a half line. Finally,
when the costs of stopping first and second are ordered the other way round
the game reduces to two single-player problems.

Run with:  python demos/regimes.py
"""
from dynkin.diffusion import (TransformContext, bessel, brownian_motion, classify_boundary,
                              squared_bessel)
from dynkin.equilibrium import build_game, solve_equilibrium

spec = bessel(3.0, rate=0.5)
ctx = TransformContext.from_spec(spec)
print("Bessel(3), lower boundary:", classify_boundary(spec).inferred.value)
for s in (2, 4, 12):
    game = build_game(spec, "tanh(x - 1)", "-tanh(x - 3)",
                      f"tanh(x - 1) - 0.3 - {s}*x*exp(-x/2)", "-tanh(x - 3) - 0.3", ctx=ctx)
    eq = solve_equilibrium(game)
    if eq.regime == "p1_never_stops":
        print(f"  bump {s:2d}: player 1 never stops, player 2 stops above {eq.x2_inf:.4f}")
    else:
        print(f"  bump {s:2d}: thresholds ({eq.x1_star:.4f}, {eq.x2_star:.4f})")

spec = squared_bessel(0.0, rate=1.0)
game = build_game(spec, "0.5 - 2*sqrt(x) + x", "3 - 0.5*x",
                  "0.5 - 2*sqrt(x) + x - 2*x*exp(-x/8)", "2 - 0.5*x")
eq = solve_equilibrium(game)
print("\nsquared Bessel(0), lower boundary:", classify_boundary(spec).inferred.value)
print(f"  {eq.regime}: player 1 stops on [{eq.x_S:.4f}, {eq.x1_star:.4f}], "
      f"player 2 above {eq.x2_star:.4f}")

bm = brownian_motion(rate=0.5)
eq = solve_equilibrium(build_game(bm, "tanh(x) - 0.5", "tanh(x - 1) - 0.5",
                                  "tanh(x) - 0.8", "tanh(x - 1) - 0.8"))
print(f"\nrelaxed game: {eq.regime}, free thresholds {eq.x_prime1:.4f} and {eq.x_prime2:.4f}")

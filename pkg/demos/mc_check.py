"""Transform value against the path-simulation oracle on the same chain."""

from __future__ import annotations

import math

from parisian_ctmc.generator import build_generator
from parisian_ctmc.grid import uniform_grid
from parisian_ctmc.mc_oracle import CDF, Payoff, simulate_parisian
from parisian_ctmc.model import build_preset
from parisian_ctmc.parisian import ParisianProblem
from parisian_ctmc.pricing import PriceRequest, call_payoff, parisian_cdf, parisian_option_price

if __name__ == "__main__":
    x0 = math.log(90.0)
    grid = uniform_grid(x0 - 1.0, x0 + 1.0, 60)
    gen = build_generator(build_preset("BS", {"sigma": 0.3, "r": 0.05}), grid)
    prob = ParisianProblem.from_grid(grid, "below", x0, 1 / 12)
    f = call_payoff(95.0)
    checks = [
        ("CDF t=1", parisian_cdf(gen, prob, 1.0, x0), CDF(1.0)),
        ("call price", parisian_option_price(gen, PriceRequest(f, 1.0, 0.05, x0, prob)), Payoff(f, 1.0, 0.05)),
    ]
    for name, value, functional in checks:
        est = simulate_parisian(gen, prob, functional, x0, paths=100_000, seed=1)
        z = (est.mean - value) / est.se
        print(f"{name:10s} transform={value:.6f}  MC={est.mean:.6f} +- {est.se:.6f}  z={z:+.2f}")

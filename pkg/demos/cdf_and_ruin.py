"""Parisian stopping-time CDF under BS and a Parisian ruin probability under drifted BM."""

from __future__ import annotations

import math

import numpy as np

from parisian_ctmc.generator import build_generator
from parisian_ctmc.grid import uniform_grid
from parisian_ctmc.model import build_preset
from parisian_ctmc.parisian import ParisianProblem
from parisian_ctmc.pricing import OptionSetup, parisian_cdf_curve, ruin_probability

if __name__ == "__main__":
    setup = OptionSetup(build_preset("BS", {"sigma": 0.3, "r": 0.05}))
    grid, gen, prob = setup.build(421)
    ts = np.array([0.1, 0.25, 0.5, 1.0, 2.0, 5.0])
    print("P(tau^-_{L,D} <= t), BS sigma=0.3, S0 = L = 90, D = 1/12")
    for t, c in zip(ts, parisian_cdf_curve(gen, prob, ts, setup.x0)):
        print(f"  t={t:5.2f}  {c:.6f}")

    grid = uniform_grid(-4.0, 6.0, 100)
    gen = build_generator(build_preset("BM", {"mu": 0.5}), grid)
    prob = ParisianProblem.from_grid(grid, "below", 0.0, 0.5)
    print("Parisian ruin, BM mu=0.5, L=0, D=0.5, x0=1")
    for horizon in (1.0, 5.0, math.inf):
        est = ruin_probability(gen, prob, horizon, 1.0)
        print(f"  horizon={horizon:>4}  psi={est.value:.6f}  (sensitivity {est.sensitivity:.1e})")

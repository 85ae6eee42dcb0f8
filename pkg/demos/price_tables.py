"""Down-and-in Parisian call under BS, Kou, VG and regime-switching BS.

Contract: S0 = L = 90, K = 95, D = 1/12, T = 1, r = 0.05. Prints raw PU-grid
prices and the extrapolated value for each model.
"""

from __future__ import annotations

import math
import time

import numpy as np

from parisian_ctmc.extensions import build_rs_generator, rs_parisian_price
from parisian_ctmc.grid import pu_grid_from_budget
from parisian_ctmc.model import build_preset
from parisian_ctmc.pricing import OptionSetup, richardson_extrapolate

R = 0.05
X0 = math.log(90.0)


def ladder(label, price, ns, order=2.0):
    pairs = []
    for n in ns:
        t0 = time.perf_counter()
        value, delta = price(n)
        pairs.append((delta, value))
        print(f"  {label:6s} n={n:5d}  price={value:.6f}  ({time.perf_counter() - t0:.2f} s)")
    print(f"  {label:6s} extrapolated (order {order:g}): {richardson_extrapolate(pairs[-2:], order=order):.6f}")


def option(model):
    setup = OptionSetup(model)

    def price(n):
        value, grid = setup.price(n)
        return value, grid.delta_max
    return price


def rs_price(n):
    model = build_preset("RS_BS", {"regimes": [0.3, 0.5], "regime_rates": [0.75, 0.25], "r": R})
    grid = pu_grid_from_budget(X0 - 5 * model.scale, X0 + 5 * model.scale, math.log(95), X0, n)
    rs = build_rs_generator(model, grid)
    return rs_parisian_price(rs, 90.0, 1 / 12, lambda s: np.maximum(s - 95, 0), 1.0, R, (X0, 0)), grid.delta_max


if __name__ == "__main__":
    import warnings
    warnings.filterwarnings("ignore", "PU grid step ratio")
    ladder("BS", option(build_preset("BS", {"sigma": 0.3, "r": R})), (211, 421, 841))
    kou = {"sigma": 0.3, "lambda": 3.0, "eta_plus": 0.1, "eta_minus": 0.1, "p_plus": 0.5, "r": R}
    ladder("KOU", option(build_preset("KOU", kou)), (211, 421))
    vg = {"sigma": 0.1213, "nu": 0.1686, "theta": -0.1436, "r": R}
    ladder("VG", option(build_preset("VG", vg)), (301, 601), order=1.0)
    ladder("RS", rs_price, (211, 421, 841))

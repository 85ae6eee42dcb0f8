from __future__ import annotations

import math

import numpy as np
import pytest

from parisian_ctmc.generator import build_generator
from parisian_ctmc.grid import pu_grid_from_budget, uniform_grid
from parisian_ctmc.model import build_preset
from parisian_ctmc.parisian import ParisianProblem

# Market setup used across tables: S0 = L = 90, K = 95, D = 1 month, T = 1 year
S0, K, L, D, T, R = 90.0, 95.0, 90.0, 1 / 12, 1.0, 0.05
KOU = {"sigma": 0.3, "lambda": 3.0, "eta_plus": 0.1, "eta_minus": 0.1, "p_plus": 0.5}
VG = {"sigma": 0.1213, "nu": 0.1686, "theta": -0.1436}
RS = {"regimes": [0.3, 0.5], "regime_rates": [0.75, 0.25]}


@pytest.fixture(scope="session")
def bs_model():
    return build_preset("BS", {"sigma": 0.3, "r": R})


@pytest.fixture(scope="session")
def bs_chain(bs_model):
    """BS log-price chain on a 211-step PU grid with L on a node."""
    x0 = math.log(S0)
    half = 5 * 0.3
    grid = pu_grid_from_budget(x0 - half, x0 + half, math.log(K), math.log(L), 211)
    gen = build_generator(bs_model, grid)
    prob = ParisianProblem.from_grid(grid, "below", math.log(L), D)
    return grid, gen, prob


@pytest.fixture(scope="session")
def bm_small():
    """Brownian chain on [-2, 2] with 21 steps (small enough for exact simulation)."""
    grid = uniform_grid(-2.0, 2.0, 20)
    return grid, build_generator(build_preset("BM", {}), grid)


@pytest.fixture(scope="session")
def kou_small():
    grid = uniform_grid(math.log(S0) - 1.0, math.log(S0) + 1.0, 40)
    return grid, build_generator(build_preset("KOU", dict(KOU, r=R)), grid)


def random_complex_nodes(k: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.5, 20, k) + 1j * rng.uniform(-60, 60, k)


# criterion number -> list of (check, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, check: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in range(1, 10):
        checks = ACCEPTANCE.get(k)
        if not checks:
            tr.write_line(f"criterion {k}: NOT RUN")
            continue
        failed = [name for name, ok, _ in checks if not ok]
        verdict = f"FAIL ({', '.join(failed)})" if failed else f"PASS ({len(checks)} checks)"
        tr.write_line(f"criterion {k}: {verdict}")
        for name, ok, detail in checks:
            tr.write_line(f"    [{'ok' if ok else 'FAIL'}] {name}: {detail}")

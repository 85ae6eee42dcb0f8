"""Command-line entry point: JSON config in, CSV out.

    parisian-ctmc price config.json
    parisian-ctmc convergence config.json --timing --output table.csv

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ConfigError, DomainError, NumericalError, ParisianError
from .extensions import (
    Interval,
    SetFamily,
    build_rs_generator,
    min_parisian_hit_price,
    multi_sided_cdf,
    multi_sided_price,
    parisian_bond_price,
    rs_parisian_price,
)
from .generator import build_generator
from .grid import Grid, piecewise_uniform_grid, pu_grid_from_budget, uniform_grid
from .laplace import InversionParams
from .mc_oracle import CDF, Bond, JointMinHit, Payoff, simulate_parisian
from .model import ModelSpec, RegimeModel, build_preset
from .parisian import ParisianProblem
from .pricing import (
    OptionSetup,
    call_payoff,
    convergence_study,
    parisian_cdf,
    parisian_option_price,
    put_payoff,
    richardson_extrapolate,
    ruin_probability,
    two_grid_price_KeqL,
)

__all__ = ["RunConfig", "load_config", "run", "main", "SUBCOMMANDS", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL"]

SUBCOMMANDS = ("cdf", "price", "ruin", "bond", "minhit", "rs-price", "multisided", "convergence", "mc")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
ROW_COLUMNS = ["n", "delta_max", "value", "extrapolated", "runtime_ms"]
STUDY_COLUMNS = ["n", "delta_max", "value", "extrapolated", "abs_err_vs_reference", "runtime_ms", "fitted_order"]
MC_COLUMNS = ["estimate", "se", "paths", "seed"]
_BLOCKS = ("model", "grid", "parisian", "option", "inversion", "study", "mc", "ruin", "bond", "minhit", "rs",
           "multisided", "threads")


# --------------------------------------------------------------------------- #
# Config
# --------------------------------------------------------------------------- #


def _num(block: Mapping, key: str, path: str, default=None, *, positive=False, nonneg=False, required=False):
    if key not in block or block[key] is None:
        if required:
            raise ConfigError("missing required field", f"{path}.{key}")
        return default
    v = block[key]
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        v = math.inf
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {block[key]!r}", f"{path}.{key}") from None
    if math.isnan(v):
        raise ConfigError("must not be NaN", f"{path}.{key}")
    if positive and not v > 0:
        raise ConfigError(f"must be positive, got {v}", f"{path}.{key}")
    if nonneg and v < 0:
        raise ConfigError(f"must be nonnegative, got {v}", f"{path}.{key}")
    return v


def _int(block: Mapping, key: str, path: str, default=None, minimum=1):
    v = _num(block, key, path, default)
    if v is None:
        return None
    if v != int(v) or v < minimum:
        raise ConfigError(f"must be an integer >= {minimum}", f"{path}.{key}")
    return int(v)


@dataclass
class RunConfig:
    """Validated view of a JSON config (all prices in asset units)."""

    raw: dict
    model: ModelSpec | RegimeModel
    grid: dict = field(default_factory=dict)
    parisian: dict = field(default_factory=dict)
    option: dict = field(default_factory=dict)
    inversion: InversionParams = field(default_factory=InversionParams)
    study: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)

    def block(self, name: str) -> dict:
        b = self.raw.get(name, {})
        if not isinstance(b, Mapping):
            raise ConfigError("expected an object", name)
        return dict(b)


def load_config(source: str | Mapping) -> RunConfig:
    """Parse a JSON file path (or an already loaded mapping) into a ``RunConfig``."""
    if isinstance(source, Mapping):
        raw = dict(source)
    else:
        try:
            with open(source, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_BLOCKS))
    if unknown:
        raise ConfigError(f"unknown top-level block(s) {unknown}; expected {list(_BLOCKS)}")
    mblock = raw.get("model")
    if not isinstance(mblock, Mapping) or "type" not in mblock:
        raise ConfigError("missing required field", "model.type")
    params = {k: v for k, v in mblock.items() if k != "type"}
    model = build_preset(str(mblock["type"]), params)
    iblock = dict(raw.get("inversion", {}))
    inversion = InversionParams(_num(iblock, "A", "inversion", 15.0, positive=True),
                                _int(iblock, "k1", "inversion", 20, minimum=0),
                                _int(iblock, "k2", "inversion", 20, minimum=0))
    cfg = RunConfig(dict(raw), model, dict(raw.get("grid", {})), dict(raw.get("parisian", {})),
                    dict(raw.get("option", {})), inversion, dict(raw.get("study", {})), dict(raw.get("mc", {})))
    _check_grid_block(cfg.grid)
    side = cfg.parisian.get("side", "below")
    if side not in ("below", "above"):
        raise ConfigError(f"must be 'below' or 'above', got {side!r}", "parisian.side")
    kind = cfg.option.get("kind", "call")
    if kind not in ("call", "put"):
        raise ConfigError(f"must be 'call' or 'put', got {kind!r}", "option.kind")
    return cfg


def _check_grid_block(g: Mapping):
    kind = g.get("type", "pu")
    if kind not in ("pu", "uniform"):
        raise ConfigError(f"must be 'pu' or 'uniform', got {kind!r}", "grid.type")
    blocks = [k for k in ("n1", "n2", "n3") if k in g]
    if blocks and len(blocks) != 3:
        raise ConfigError("give all of n1, n2, n3 or none", "grid.n1")
    if blocks and kind != "pu":
        raise ConfigError("per-block counts need grid.type = 'pu'", "grid.type")
    if ("l" in g) != ("r" in g):
        raise ConfigError("give both grid.l and grid.r", "grid.l" if "l" not in g else "grid.r")
    if "l" in g and not _num(g, "l", "grid") < _num(g, "r", "grid"):
        raise ConfigError("need grid.l < grid.r", "grid.r")


# --------------------------------------------------------------------------- #
# Builders
# --------------------------------------------------------------------------- #


def _scalar_model(cfg: RunConfig, what: str) -> ModelSpec:
    if isinstance(cfg.model, RegimeModel):
        raise ConfigError(f"'{what}' needs a single-regime model; use rs-price for RS_BS", "model.type")
    return cfg.model


def _option_setup(cfg: RunConfig, model) -> OptionSetup:
    o, p, g = cfg.option, cfg.parisian, cfg.grid
    S0 = _num(o, "S0", "option", 90.0, positive=model.state_transform == "exp")
    K = _num(o, "K", "option", 95.0, positive=model.state_transform == "exp")
    L = _num(p, "L", "parisian", 90.0, positive=model.state_transform == "exp")
    D = _num(p, "D", "parisian", 1 / 12, positive=True)
    T = _num(o, "T", "option", 1.0, positive=True)
    r = _num(o, "r", "option", 0.05)
    width = _num(g, "width", "grid", 5.0, positive=True)
    domain = (_num(g, "l", "grid"), _num(g, "r", "grid")) if "l" in g else None
    setup = OptionSetup(model, S0, K, L, D, T, r, o.get("kind", "call"), p.get("side", "below"), width, domain,
                        cfg.inversion)
    lo, hi = setup.bounds()
    for name, v in (("option.S0", setup.x0), ("option.K", setup.k), ("parisian.L", setup.l)):
        if not lo < v < hi:
            raise ConfigError(f"maps to chain state {v:.6g} outside the grid domain ({lo:.6g}, {hi:.6g})", name)
    return setup


def _grid_n(cfg: RunConfig, n: int | None = None) -> int:
    if n is not None:
        return n
    g = cfg.grid
    if "n1" in g:
        return sum(_int(g, k, "grid") for k in ("n1", "n2", "n3"))
    return _int(g, "n", "grid", 211, minimum=2)


def _grid(cfg: RunConfig, setup: OptionSetup, n: int | None = None, kind: str | None = None) -> Grid:
    g = cfg.grid
    kind = kind or g.get("type", "pu")
    lo, hi = setup.bounds()
    if kind == "uniform":
        return uniform_grid(lo, hi, _grid_n(cfg, n))
    if "n1" in g and n is None:
        return piecewise_uniform_grid(lo, hi, setup.k, setup.l, *(_int(g, k, "grid") for k in ("n1", "n2", "n3")))
    return pu_grid_from_budget(lo, hi, setup.k, setup.l, _grid_n(cfg, n))


def _payoff(kind: str, K: float, to_price) -> Callable:
    return call_payoff(K, to_price) if kind == "call" else put_payoff(K, to_price)


def _times(cfg: RunConfig, D: float) -> list[float]:
    raw = cfg.parisian.get("t", cfg.option.get("T", 1.0))
    ts = raw if isinstance(raw, list) else [raw]
    out = []
    for i, t in enumerate(ts):
        v = _num({"t": t}, "t", "parisian")
        if not v > 0 or not math.isfinite(v):
            raise ConfigError(f"must be positive and finite, got {t}", f"parisian.t[{i}]" if isinstance(raw, list) else "parisian.t")
        if abs(v - D) < 0.01 * D:
            warnings.warn(f"t={v:g} is within 1% of D={D:g}: the CDF jumps there and inversion is unreliable",
                          stacklevel=2)
        out.append(v)
    return out


# --------------------------------------------------------------------------- #
# Subcommands; each returns (header, rows)
# --------------------------------------------------------------------------- #


def _timed(fn):
    t0 = time.perf_counter()
    v = fn()
    return v, 1e3 * (time.perf_counter() - t0)


def _extrapolate(cfg: RunConfig, evaluate: Callable[[int], tuple[float, float]], n: int, value: float, delta: float):
    if not cfg.study.get("extrapolate", False):
        return None
    v2, d2 = evaluate(2 * n)
    return richardson_extrapolate([(delta, value), (d2, v2)], float(cfg.study.get("order", 2.0)))


def cmd_price(cfg: RunConfig):
    model = _scalar_model(cfg, "price")
    setup = _option_setup(cfg, model)

    def evaluate(n):
        if math.isclose(setup.K, setup.L, rel_tol=0, abs_tol=1e-12 * max(1.0, abs(setup.L))):
            lo, hi = setup.bounds()
            return two_grid_price_KeqL(setup, n), (hi - lo) / n
        grid = _grid(cfg, setup, n if n != _grid_n(cfg) else None)
        gen = build_generator(model, grid)
        prob = ParisianProblem.from_grid(grid, setup.side, setup.l, setup.D)
        return parisian_option_price(gen, setup.request(prob), cfg.inversion), grid.delta_max

    n = _grid_n(cfg)
    (value, delta), ms = _timed(lambda: evaluate(n))
    return ROW_COLUMNS, [[n, delta, value, _extrapolate(cfg, evaluate, n, value, delta), ms]]


def cmd_cdf(cfg: RunConfig):
    model = _scalar_model(cfg, "cdf")
    setup = _option_setup(cfg, model)
    ts = _times(cfg, setup.D)
    rows = []
    for t in ts:
        def evaluate(n, t=t):
            grid = _grid(cfg, setup, n if n != _grid_n(cfg) else None)
            gen = build_generator(model, grid)
            prob = ParisianProblem.from_grid(grid, setup.side, setup.l, setup.D)
            return parisian_cdf(gen, prob, t, setup.x0, cfg.inversion), grid.delta_max

        n = _grid_n(cfg)
        (value, delta), ms = _timed(lambda: evaluate(n))
        rows.append([t, n, delta, value, _extrapolate(cfg, evaluate, n, value, delta), ms])
    return ["t"] + ROW_COLUMNS, rows


def _level_grid(cfg: RunConfig, model, levels: list[float], x0: float, n: int) -> Grid:
    """Uniform grid (default ``x0 +- width * scale``) with the first level on a node when possible."""
    g = cfg.grid
    if "l" in g:
        lo, hi = _num(g, "l", "grid"), _num(g, "r", "grid")
    else:
        half = _num(g, "width", "grid", 5.0, positive=True) * model.scale
        lo, hi = x0 - half, x0 + half
    if not lo < x0 < hi:
        raise ConfigError(f"start state {x0:.6g} outside the grid domain ({lo:.6g}, {hi:.6g})", "grid.l")
    grid = uniform_grid(lo, hi, n)
    # shift the grid so the first level is a node (keeps its bounds within one step)
    lv = next((v for v in levels if lo < v < hi), None)
    if lv is not None:
        h = (hi - lo) / n
        shift = lv - (lo + round((lv - lo) / h) * h)
        grid = Grid(grid.nodes + shift, kind="uniform", blocks=(n,))
    return grid


def cmd_ruin(cfg: RunConfig):
    model = _scalar_model(cfg, "ruin")
    rb = cfg.block("ruin")
    x0 = float(model.from_price(_num(rb, "x0", "ruin", required=True)))
    L = float(model.from_price(_num(cfg.parisian, "L", "parisian", required=True)))
    D = _num(cfg.parisian, "D", "parisian", required=True, positive=True)
    horizon = _num(rb, "horizon", "ruin", math.inf, positive=True)
    n = _grid_n(cfg)

    def evaluate(n):
        grid = _level_grid(cfg, model, [L], x0, n)
        gen = build_generator(model, grid)
        prob = ParisianProblem.from_grid(grid, cfg.parisian.get("side", "below"), L, D)
        est = ruin_probability(gen, prob, horizon, x0, _num(rb, "small_q", "ruin", 1e-8, positive=True),
                               cfg.inversion)
        return est.value, grid.delta_max

    (value, delta), ms = _timed(lambda: evaluate(n))
    return ROW_COLUMNS, [[n, delta, value, _extrapolate(cfg, evaluate, n, value, delta), ms]]


def cmd_bond(cfg: RunConfig):
    model = _scalar_model(cfg, "bond")
    bb = cfg.block("bond")
    x0 = _num(bb, "x0", "bond", required=True)
    L = _num(cfg.parisian, "L", "parisian", required=True)
    D = _num(cfg.parisian, "D", "parisian", required=True, positive=True)
    T = _num(bb, "T", "bond", required=True, positive=True)
    face = _num(bb, "face", "bond", 1.0)
    n = _grid_n(cfg)

    def evaluate(n):
        grid = _level_grid(cfg, model, [L], x0, n)
        gen = build_generator(model, grid)
        return parisian_bond_price(gen, L, D, lambda x: np.full(np.shape(x), face), T, x0, cfg.inversion), grid.delta_max

    (value, delta), ms = _timed(lambda: evaluate(n))
    return ROW_COLUMNS, [[n, delta, value, _extrapolate(cfg, evaluate, n, value, delta), ms]]


def cmd_minhit(cfg: RunConfig):
    model = _scalar_model(cfg, "minhit")
    setup = _option_setup(cfg, model)
    B = _num(cfg.block("minhit"), "B", "minhit", required=True)
    b = float(model.from_price(B))
    if not b > setup.l:
        raise ConfigError("barrier B must lie above L", "minhit.B")

    def evaluate(n):
        grid = _grid(cfg, setup, n if n != _grid_n(cfg) else None)
        gen = build_generator(model, grid)
        return (min_parisian_hit_price(gen, setup.l, setup.D, b, setup.payoff(), setup.T, setup.r, setup.x0,
                                       cfg.inversion), grid.delta_max)

    n = _grid_n(cfg)
    (value, delta), ms = _timed(lambda: evaluate(n))
    return ROW_COLUMNS, [[n, delta, value, _extrapolate(cfg, evaluate, n, value, delta), ms]]


def cmd_rs_price(cfg: RunConfig):
    if not isinstance(cfg.model, RegimeModel):
        raise ConfigError("rs-price needs model.type = 'RS_BS'", "model.type")
    rm = cfg.model
    base = _option_setup(cfg, rm.regimes[0])
    # common domain from the largest regime scale
    base.domain = base.domain or (base.x0 - base.width * rm.scale * math.sqrt(base.T),
                                  base.x0 + base.width * rm.scale * math.sqrt(base.T))
    regime = _int(cfg.block("rs"), "regime", "rs", 0, minimum=0)
    if regime >= rm.n_regimes:
        raise ConfigError(f"must be < {rm.n_regimes}", "rs.regime")
    K = base.K

    def evaluate(n):
        grid = _grid(cfg, base, n if n != _grid_n(cfg) else None)
        rs = build_rs_generator(rm, grid)
        pay = (lambda s: np.maximum(s - K, 0.0)) if base.kind == "call" else (lambda s: np.maximum(K - s, 0.0))
        return (rs_parisian_price(rs, base.L, base.D, pay, base.T, base.r, (base.x0, regime), cfg.inversion,
                                  side=base.side), grid.delta_max)

    n = _grid_n(cfg)
    (value, delta), ms = _timed(lambda: evaluate(n))
    return ROW_COLUMNS, [[n, delta, value, _extrapolate(cfg, evaluate, n, value, delta), ms]]


def _set_family(cfg: RunConfig, model) -> tuple[SetFamily, list[float]]:
    mb = cfg.block("multisided")
    sets = mb.get("sets")
    if not isinstance(sets, list) or not sets:
        raise ConfigError("expected a nonempty list of sets, each a list of [lo, hi] intervals", "multisided.sets")
    fam, levels = [], []
    for i, s in enumerate(sets):
        ivs = []
        for j, iv in enumerate(s if isinstance(s, list) else []):
            path = f"multisided.sets[{i}][{j}]"
            if not (isinstance(iv, list) and len(iv) == 2):
                raise ConfigError("expected [lo, hi] (null for an infinite end)", path)
            lo = -math.inf if iv[0] is None else float(model.from_price(_num({"v": iv[0]}, "v", path)))
            hi = math.inf if iv[1] is None else float(model.from_price(_num({"v": iv[1]}, "v", path)))
            if not lo < hi:
                raise ConfigError("need lo < hi", path)
            ivs.append(Interval(lo, hi))
            levels += [v for v in (lo, hi) if math.isfinite(v)]
        if not ivs:
            raise ConfigError("a set needs at least one interval", f"multisided.sets[{i}]")
        fam.append(tuple(ivs))
    return SetFamily(tuple(fam)), levels


def cmd_multisided(cfg: RunConfig):
    model = _scalar_model(cfg, "multisided")
    mb = cfg.block("multisided")
    family, levels = _set_family(cfg, model)
    D = _num(cfg.parisian, "D", "parisian", required=True, positive=True)
    x0 = float(model.from_price(_num(cfg.option, "S0", "option", required=True)))
    what = mb.get("functional", "cdf")
    if what not in ("cdf", "price"):
        raise ConfigError("must be 'cdf' or 'price'", "multisided.functional")
    n = _grid_n(cfg)

    def run_one(t=None):
        def evaluate(n):
            grid = _level_grid(cfg, model, levels, x0, n)
            gen = build_generator(model, grid)
            if what == "cdf":
                return multi_sided_cdf(gen, family, D, t, x0, cfg.inversion), grid.delta_max
            o = cfg.option
            pay = _payoff(o.get("kind", "call"), _num(o, "K", "option", required=True), model.to_price)
            return (multi_sided_price(gen, family, D, pay, _num(o, "T", "option", 1.0, positive=True),
                                      _num(o, "r", "option", 0.05), x0, cfg.inversion), grid.delta_max)

        (value, delta), ms = _timed(lambda: evaluate(n))
        return [n, delta, value, _extrapolate(cfg, evaluate, n, value, delta), ms]

    if what == "cdf":
        return ["t"] + ROW_COLUMNS, [[t] + run_one(t) for t in _times(cfg, D)]
    return ROW_COLUMNS, [run_one()]


def cmd_convergence(cfg: RunConfig):
    model = _scalar_model(cfg, "convergence")
    setup = _option_setup(cfg, model)
    st = cfg.study
    ladder = st.get("ladder", [211, 421, 841, 1681])
    if not isinstance(ladder, list) or len(ladder) < 2:
        raise ConfigError("expected a list of at least two grid sizes", "study.ladder")
    ladder = [_int({"n": v}, "n", "study.ladder", minimum=2) for v in ladder]
    target = st.get("target", "price")
    if target not in ("price", "cdf"):
        raise ConfigError("must be 'price' or 'cdf'", "study.target")
    t = _times(cfg, setup.D)[0] if target == "cdf" else None
    kind = cfg.grid.get("type", "pu")
    reference = _num(st, "reference", "study")

    def evaluate(n):
        grid = setup.grid(n, kind)
        gen = build_generator(model, grid)
        prob = ParisianProblem.from_grid(grid, setup.side, setup.l, setup.D)
        if target == "cdf":
            return parisian_cdf(gen, prob, t, setup.x0, cfg.inversion), grid.delta_max
        return parisian_option_price(gen, setup.request(prob), cfg.inversion), grid.delta_max

    study = convergence_study(evaluate, ladder, reference, bool(st.get("extrapolate", True)),
                              float(st.get("order", 2.0)))
    rows = [[r.n, r.delta_max, r.value, r.extrapolated, r.abs_err, r.runtime_ms, study.order] for r in study.rows]
    return STUDY_COLUMNS, rows


def cmd_mc(cfg: RunConfig):
    mb = cfg.mc
    paths = _int(mb, "paths", "mc", 100_000, minimum=100)
    seed = _int(mb, "seed", "mc", 0, minimum=0)
    what = mb.get("functional", "cdf")
    n = _grid_n(cfg)
    if what in ("cdf", "price", "minhit"):
        model = _scalar_model(cfg, "mc")
        setup = _option_setup(cfg, model)
        grid = _grid(cfg, setup)
        gen = build_generator(model, grid)
        x0 = int(np.argmin(np.abs(grid.nodes - setup.x0)))
        if what == "cdf":
            prob = ParisianProblem.from_grid(grid, setup.side, setup.l, setup.D)
            est = simulate_parisian(gen, prob, CDF(_times(cfg, setup.D)[0]), x0, paths, seed)
        elif what == "price":
            prob = ParisianProblem.from_grid(grid, setup.side, setup.l, setup.D)
            est = simulate_parisian(gen, prob, Payoff(setup.payoff(), setup.T, setup.r), x0, paths, seed)
        else:
            b = float(model.from_price(_num(cfg.block("minhit"), "B", "minhit", required=True)))
            prob = ParisianProblem.from_grid(grid, "above", setup.l, setup.D)
            est = simulate_parisian(gen, prob, JointMinHit(b, setup.payoff(), setup.T, setup.r), x0, paths, seed)
    elif what in ("bond", "ruin"):
        model = _scalar_model(cfg, "mc")
        blk = cfg.block(what)
        x0v = _num(blk, "x0", what, required=True)
        L = _num(cfg.parisian, "L", "parisian", required=True)
        D = _num(cfg.parisian, "D", "parisian", required=True, positive=True)
        if what == "ruin":
            x0v, L = float(model.from_price(x0v)), float(model.from_price(L))
        grid = _level_grid(cfg, model, [L], x0v, n)
        gen = build_generator(model, grid)
        x0 = int(np.argmin(np.abs(grid.nodes - x0v)))
        if what == "bond":
            prob = ParisianProblem.from_grid(grid, "above", L, D)
            fun = Bond(lambda x: np.full(np.shape(x), _num(blk, "face", "bond", 1.0)),
                       _num(blk, "T", "bond", required=True, positive=True))
        else:
            prob = ParisianProblem.from_grid(grid, cfg.parisian.get("side", "below"), L, D)
            fun = CDF(_num(blk, "horizon", "ruin", math.inf, positive=True))
        est = simulate_parisian(gen, prob, fun, x0, paths, seed)
    else:
        raise ConfigError("must be one of cdf, price, minhit, bond, ruin", "mc.functional")
    return MC_COLUMNS, [[est.mean, est.se, est.paths, est.seed]]


COMMANDS: dict[str, Callable[[RunConfig], tuple[list, list]]] = {
    "cdf": cmd_cdf,
    "price": cmd_price,
    "ruin": cmd_ruin,
    "bond": cmd_bond,
    "minhit": cmd_minhit,
    "rs-price": cmd_rs_price,
    "multisided": cmd_multisided,
    "convergence": cmd_convergence,
    "mc": cmd_mc,
}


# --------------------------------------------------------------------------- #
# Output
# --------------------------------------------------------------------------- #


def _fmt(v: Any, precision: int | None, column: str, timing: bool) -> str:
    if column == "runtime_ms" and not timing:
        return ""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v) if precision is None else f"{v:.{precision}g}"


def to_csv(header: list[str], rows: list[list], precision: int | None = 6, timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v, precision, c, timing) for c, v in zip(header, row)])
    return buf.getvalue()


def run(config: str | Mapping, subcommand: str, precision: int | None = 6, timing: bool = False) -> str:
    """Run a subcommand and return its CSV text."""
    if subcommand not in COMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; expected one of {list(SUBCOMMANDS)}")
    cfg = load_config(config)
    header, rows = COMMANDS[subcommand](cfg)
    return to_csv(header, rows, precision, timing)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parisian-ctmc", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("config", help="JSON config file")
    p.add_argument("--precision", default="6",
                   help="significant digits for floats, or 'full' for round-trip precision (default 6)")
    p.add_argument("--timing", action="store_true", help="fill the runtime_ms column (output is then not reproducible)")
    p.add_argument("--output", "-o", help="also write the CSV to this file")
    p.add_argument("--paths", type=int, help="override mc.paths")
    p.add_argument("--seed", type=int, help="override mc.seed")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.precision == "full":
            precision = None
        else:
            try:
                precision = int(args.precision)
            except ValueError:
                raise ConfigError("expected an integer or 'full'", "--precision") from None
            if not 1 <= precision <= 17:
                raise ConfigError("must be between 1 and 17", "--precision")
        config: str | dict = args.config
        if args.paths is not None or args.seed is not None:
            cfg = load_config(args.config).raw
            mc = dict(cfg.get("mc", {}))
            if args.paths is not None:
                mc["paths"] = args.paths
            if args.seed is not None:
                mc["seed"] = args.seed
            cfg["mc"] = mc
            config = cfg
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            text = run(config, args.subcommand, precision, args.timing)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ParisianError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    sys.stdout.write(text)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

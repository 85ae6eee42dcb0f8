"""Parisian stopping times and option prices via Markov chain approximation.

Set ``PARISIAN_CTMC_THREADS`` before import to cap BLAS/OpenMP threads.
"""

import os as _os

_threads = _os.environ.get("PARISIAN_CTMC_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import ConfigError, DomainError, GeneratorError, NumericalError, ParisianError  # noqa: E402
from .model import PRESETS, ModelSpec, RegimeModel, build_preset  # noqa: E402
from .grid import Grid, piecewise_uniform_grid, pu_grid_from_budget, uniform_grid  # noqa: E402
from .generator import Generator, build_generator  # noqa: E402
from .laplace import InversionParams, build_nodes, invert, invert_values  # noqa: E402
from .parisian import (  # noqa: E402
    ExpSettings,
    ParisianProblem,
    ParisianSolver,
    parisian_transform_bd,
    parisian_transform_general,
)
from .pricing import (  # noqa: E402
    OptionSetup,
    PriceRequest,
    convergence_study,
    parisian_cdf,
    parisian_option_price,
    richardson_extrapolate,
    ruin_probability,
    two_grid_price_KeqL,
)
from .extensions import (  # noqa: E402
    SetFamily,
    build_rs_generator,
    min_parisian_hit_price,
    multi_sided_transform,
    parisian_bond_price,
    rs_parisian_price,
    sv_two_layer_build,
)
from .mc_oracle import PathEstimate, simulate_parisian  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainError", "GeneratorError", "NumericalError", "ParisianError",
    "PRESETS", "ModelSpec", "RegimeModel", "build_preset",
    "Grid", "piecewise_uniform_grid", "pu_grid_from_budget", "uniform_grid",
    "Generator", "build_generator",
    "InversionParams", "build_nodes", "invert", "invert_values",
    "ExpSettings", "ParisianProblem", "ParisianSolver", "parisian_transform_bd", "parisian_transform_general",
    "OptionSetup", "PriceRequest", "convergence_study", "parisian_cdf", "parisian_option_price",
    "richardson_extrapolate", "ruin_probability", "two_grid_price_KeqL",
    "SetFamily", "build_rs_generator", "min_parisian_hit_price", "multi_sided_transform", "parisian_bond_price",
    "rs_parisian_price", "sv_two_layer_build",
    "PathEstimate", "simulate_parisian",
]

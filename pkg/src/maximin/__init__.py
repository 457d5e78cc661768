"""Worst-case optimal portfolios for markets with unknown coefficient laws."""

from .calibration import CalibrationResult, calibrate_lambda, price_of_claim
from .errors import MaximinError
from .market_model import (
    ParamClass,
    ParamPoint,
    black_scholes,
    cumulative_r,
    market_price_of_risk,
    replication_matrix,
)
from .pde_engine import FdGrid, HSolution, h_fd_solve, h_quadrature, hx_quadrature
from .saddle import SaddleReport, run_saddle
from .simulator import SimConfig, estimate_value, replication_error, simulate_paths
from .strategy_engine import (
    Myopic,
    PdeOptimal,
    Trivial,
    build_maximin_strategy,
    r_min_of_class,
)
from .utility_dual import (
    DomainInterval,
    LogUtility,
    PowerUtility,
    QuadraticUtility,
    TabulatedUtility,
    dual_argmax,
    eval_utility,
    growth_check,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult",
    "calibrate_lambda",
    "price_of_claim",
    "MaximinError",
    "ParamClass",
    "ParamPoint",
    "black_scholes",
    "cumulative_r",
    "market_price_of_risk",
    "replication_matrix",
    "FdGrid",
    "HSolution",
    "h_fd_solve",
    "h_quadrature",
    "hx_quadrature",
    "SaddleReport",
    "run_saddle",
    "SimConfig",
    "estimate_value",
    "replication_error",
    "simulate_paths",
    "Myopic",
    "PdeOptimal",
    "Trivial",
    "build_maximin_strategy",
    "r_min_of_class",
    "DomainInterval",
    "LogUtility",
    "PowerUtility",
    "QuadraticUtility",
    "TabulatedUtility",
    "dual_argmax",
    "eval_utility",
    "growth_check",
]

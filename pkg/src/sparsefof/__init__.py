"""Sparse function-on-function regression with a dual augmented Lagrangian solver."""

from .dal import DalConfig, DalDiagnostics, DalState, solve
from .estimators import (
    CurveStandardizer,
    FpcProjector,
    FunctionOnFunctionRegressor,
    ScalarOnFunctionRegressor,
)
from .functional import CurveSet, FpcBasis, Grid, ScoreDesign, build_design, compute_fpc
from .penalty import PenaltyParams
from .selection import PathConfig, PathResult, fit_path
from .simulation import ScenarioConfig, evaluate, gen_scenario

__version__ = "0.1.0"

__all__ = [
    "CurveSet",
    "CurveStandardizer",
    "DalConfig",
    "DalDiagnostics",
    "DalState",
    "FpcBasis",
    "FpcProjector",
    "FunctionOnFunctionRegressor",
    "Grid",
    "PathConfig",
    "PathResult",
    "PenaltyParams",
    "ScalarOnFunctionRegressor",
    "ScenarioConfig",
    "ScoreDesign",
    "build_design",
    "compute_fpc",
    "evaluate",
    "fit_path",
    "gen_scenario",
    "solve",
]

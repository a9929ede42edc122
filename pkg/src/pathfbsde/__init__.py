"""Numerical solvers and verifiers for path-dependent fully coupled FBSDEs."""

from __future__ import annotations

__version__ = "0.1.0"

from .coefficients import CoefficientSet, ControlPair, PathState, continuation_set, registry_get, registry_names
from .conditions import AssumptionConstants, CheckReport
from .oracles import oracle_functional, oracle_y0, solve_riccati_example31
from .paths import Path, d_infty, horizontal_extend, restrict, vertical_bump
from .ppde import (
    PathFunctional,
    feynman_kac_check,
    horizontal_derivative,
    ito_residual,
    lift_coefficients,
    ppde_residual,
    second_vertical_derivative,
    vertical_derivative,
)
from .solver import (
    BrownianGrid,
    ContinuationSchedule,
    Discretization,
    SolutionEstimate,
    StartPoint,
    picard_solve,
    solve_fbsde,
)

__all__ = [
    "AssumptionConstants",
    "BrownianGrid",
    "CheckReport",
    "CoefficientSet",
    "ContinuationSchedule",
    "ControlPair",
    "Discretization",
    "Path",
    "PathFunctional",
    "PathState",
    "SolutionEstimate",
    "StartPoint",
    "continuation_set",
    "d_infty",
    "feynman_kac_check",
    "horizontal_derivative",
    "horizontal_extend",
    "ito_residual",
    "lift_coefficients",
    "oracle_functional",
    "oracle_y0",
    "picard_solve",
    "ppde_residual",
    "registry_get",
    "registry_names",
    "restrict",
    "second_vertical_derivative",
    "solve_fbsde",
    "solve_riccati_example31",
    "vertical_bump",
    "vertical_derivative",
]

"""Equilibrium flows on networks with monotone connection functions."""

from .connections import Affine, Penalty, PiecewiseLinear
from .errors import (AssumptionError, ConvergenceError, DeadNodeError, EqFlowError, GuardError,
                     HallViolationError, InfeasibleError, ProfitableLoopError, ValidationError)
from .network import Network

__version__ = "0.1.0"

__all__ = [
    "Affine", "Penalty", "PiecewiseLinear", "Network",
    "AssumptionError", "ConvergenceError", "DeadNodeError", "EqFlowError", "GuardError",
    "HallViolationError", "InfeasibleError", "ProfitableLoopError", "ValidationError",
]

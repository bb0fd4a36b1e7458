"""Corrected Brownian approximations for random walks crossing smooth boundaries."""

from .errors import (
    AssumptionViolation,
    BoundaryWalkError,
    ConfigError,
    NumericalRefusal,
    OutOfRangeError,
    StepCapExceeded,
)
from .model import (
    Boundary,
    DeltaTrace,
    IncrementDistribution,
    Payoff,
    Problem,
    boundary_level,
    moments,
    split_payoff,
    standard_problem,
)

__version__ = "0.1.0"

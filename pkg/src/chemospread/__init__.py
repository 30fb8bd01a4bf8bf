"""Numerical laboratory for spreading fronts of the chemotaxis system with logistic source."""

from .core import (
    Boundary,
    DomainError,
    Field,
    Grid,
    Params,
    RunRecord,
    SchemeFailure,
    State,
    UnstableStep,
    damping_condition,
    steady_state,
)
from .solver import SchemeConfig, fisher_kpp_mode, rhs_u, rhs_v, run, step

__version__ = "0.1.0"

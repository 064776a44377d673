"""Distributionally robust joint chance-constrained scheduling for DC microgrids."""

from .conic import ConicProgram, solve
from .drjcc import RateVector, bonferroni_allocate, scc_allocate, solve_drjcc
from .opf import Case, Schedule, solve_deterministic
from .uncertainty import ErrorMoments, ambiguity_set, estimate_moments, lambda_factor

__version__ = "0.1.0"

__all__ = [
    "Case",
    "ConicProgram",
    "ErrorMoments",
    "RateVector",
    "Schedule",
    "ambiguity_set",
    "bonferroni_allocate",
    "estimate_moments",
    "lambda_factor",
    "scc_allocate",
    "solve",
    "solve_deterministic",
    "solve_drjcc",
]

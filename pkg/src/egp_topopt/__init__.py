"""Density-based topology optimization with efficient gradient projection."""

from .estimators import EGPOptimizer, OCOptimizer
from .model import (ProblemDefinition, make_cantilever3d_problem, make_inverter_problem,
                    make_mbb_problem)
from .optimizer import run_egp, run_oc

__all__ = [
    "EGPOptimizer",
    "OCOptimizer",
    "ProblemDefinition",
    "make_cantilever3d_problem",
    "make_inverter_problem",
    "make_mbb_problem",
    "run_egp",
    "run_oc",
]

__version__ = "0.1.0"

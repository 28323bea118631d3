"""Joint production and maintenance scheduling of multi-component machines.

Two exact methods are provided: a compact convex MINLP (:func:`solve_compact`) and
branch-and-price over an aggregated pattern formulation (:func:`solve_bp`).
"""

from .branch_price import BpConfig, solve_bp
from .compact_solver import solve_compact
from .instgen import GenConfig, generate, make_jit_counterexample
from .master import SolveReport, rmp_gap
from .model import Instance, Schedule, validate_schedule

__all__ = ["BpConfig", "GenConfig", "Instance", "Schedule", "SolveReport", "generate", "make_jit_counterexample",
           "rmp_gap", "solve_bp", "solve_compact", "validate_schedule"]
__version__ = "0.1.0"

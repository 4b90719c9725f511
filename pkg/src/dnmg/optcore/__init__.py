"""LP/MILP modelling and solvers."""

from .lp import TOL, LPOptions, Tolerances, dual_objective, solve_lp, solve_lp_arrays, solve_lp_warm
from .backends import BACKENDS, get_backend
from .milp import solve_milp
from .model import EQ, GE, LE, Model, ModelError, SolveResult, write_lp
from .polygon import polygon_radius, polygonize_magnitude

__all__ = [
    "BACKENDS", "EQ", "GE", "LE", "TOL", "LPOptions", "Model", "ModelError", "SolveResult",
    "Tolerances", "dual_objective", "get_backend", "polygon_radius", "polygonize_magnitude",
    "solve_lp", "solve_lp_arrays", "solve_lp_warm", "solve_milp", "write_lp",
]

"""Adaptive P1 finite elements with a parallel partition-of-unity driver."""
from .mesh import Mesh, build_mesh, reconcile, reconcile_all, audit_conformity
from .fem import FeSpace, FeFunction, WeakProblem, solve, solve_newton
from .estimate import GoalFunctional, residual_indicator, mark
from .cover import partition, extend_overlap, build_pu
from .ppum import PpumConfig, run_ppum, run_ppum_goal
from .problems import get_problem, make_domain

__version__ = "0.1.0"

__all__ = [
    "Mesh", "build_mesh", "reconcile", "reconcile_all", "audit_conformity",
    "FeSpace", "FeFunction", "WeakProblem", "solve", "solve_newton",
    "GoalFunctional", "residual_indicator", "mark",
    "partition", "extend_overlap", "build_pu",
    "PpumConfig", "run_ppum", "run_ppum_goal",
    "get_problem", "make_domain",
]

"""Lowest-order HHJ plate bending with a kernel-space V-cycle multigrid."""

from .certify import ExactnessReport, check_commute_curl, check_commute_divdiv, check_exactness
from .hhj import Discretization, SolverError
from .mesh import MeshError, RefinementMap, Triangulation, build_triangulation, initial_mesh, refine_uniform
from .multigrid import ConvergenceError, Hierarchy, build_hierarchy, mg_solve, vcycle
from .pipeline import (
    ExperimentConfig,
    manufactured_square_case,
    run_experiment,
    solve_plate,
)

__version__ = "0.1.0"

"""HDG discretization of tangential Dirichlet boundary control for Stokes flow."""

from .mesh import Mesh, build_square_mesh
from .control_solver import SolverConfig, IterationReport, solve_control_problem

__all__ = ["Mesh", "build_square_mesh", "SolverConfig", "IterationReport",
           "solve_control_problem"]

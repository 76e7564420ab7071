"""
Mesh-refinement studies: errors, observed orders and expected orders.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..control_solver import solve_control_problem
from ..mesh import build_square_mesh
from .errors import FIELDS, projection_errors, reference_errors, \
    solution_errors
from .problems import ManufacturedSolution
from .regularity import expected_orders

UNDEFINED = "--"
NORMS = ("projection", "exact")


def observed_orders(errors):
    """
    ``log2(e_{2h} / e_h)`` between successive entries; ``None`` where an
    error is zero or non-finite.
    """
    out = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        if a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b):
            out.append(math.log2(a / b))
        else:
            out.append(None)
    return out


def check_dyadic(ns):
    ns = [int(n) for n in ns]
    if len(ns) < 2:
        raise ValueError("a convergence study needs at least two meshes")
    for a, b in zip(ns[:-1], ns[1:]):
        if a < 1 or b != 2 * a:
            raise ValueError(f"mesh sizes must double: got {a} then {b}")
    return ns


@dataclass
class ConvergenceTable:
    """Errors per field and mesh, with orders and expected orders."""

    ns: list
    side: float
    errors: dict                  # field -> list of errors
    expected: dict                # field -> expected order or None
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)

    @property
    def orders(self):
        return {f: observed_orders(e) for f, e in self.errors.items()}

    def h_over_sqrt2(self):
        return [self.side / n for n in self.ns]

    def to_csv(self):
        """CSV text in scientific notation with 6 significant digits."""
        cols = ["n", "h_over_sqrt2"]
        for f in FIELDS:
            cols += [f"err_{f}", f"ord_{f}"]
        cols += [f"EO_{f}" for f in FIELDS]
        lines = [",".join(cols)]
        orders = self.orders
        for i, n in enumerate(self.ns):
            row = [str(n), _fmt(self.side / n)]
            for f in FIELDS:
                row += [_fmt(self.errors[f][i]), _fmt(orders[f][i])]
            row += [_fmt(self.expected.get(f)) for f in FIELDS]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return UNDEFINED
    return f"{v:.5e}"


def convergence_study(config, ns, problem, norm="projection",
                      reference_n=None, reference=None, omega=np.pi / 2,
                      progress=None):
    """
    Solve on a sequence of uniform meshes and tabulate errors.

    Parameters
    ----------
    config : SolverConfig
    ns : sequence of int
        Cells per side, each double the previous.
    problem : ManufacturedSolution or BenchmarkProblem
        Problems without a closed-form solution are compared with a
        reference solution on ``reference_n`` cells per side (or a given
        ``reference`` DiscreteSolution), in the exact L2 norm.
    norm : {"projection", "exact"}
        For closed-form problems: distance to the L2 projection of the
        exact fields onto the discrete spaces, or to the exact fields.
    progress : callable, optional
        Called with a one-line message after each solve.
    """
    ns = check_dyadic(ns)
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}")
    side, origin = problem.side, problem.origin
    manufactured = isinstance(problem, ManufacturedSolution)
    if not manufactured and reference is None:
        if reference_n is None:
            raise ValueError("a reference mesh size is required for problems "
                             "without a closed-form solution")
        if reference_n % ns[-1]:
            raise ValueError("the reference mesh must refine every study "
                             "mesh")
        mesh = build_square_mesh(reference_n, side, origin)
        reference, rep = solve_control_problem(mesh, config, problem.forcing,
                                               problem.target)
        if progress:
            progress(f"reference n={reference_n}: {rep.iterations} "
                     "iterations")
    errors = {f: [] for f in FIELDS}
    iterations, converged = [], []
    for n in ns:
        mesh = build_square_mesh(n, side, origin)
        sol, rep = solve_control_problem(mesh, config, problem.forcing,
                                         problem.target)
        iterations.append(rep.iterations)
        converged.append(rep.converged)
        if manufactured:
            e = (projection_errors(sol, problem) if norm == "projection"
                 else solution_errors(sol, problem))
        else:
            n_ref = round(side / reference.mesh.face_lengths.min())
            e = reference_errors(sol, reference, n, n_ref, side, origin)
        for f in FIELDS:
            errors[f].append(e[f])
        if progress:
            progress(f"n={n}: {rep.iterations} iterations, "
                     + ", ".join(f"{f}={e[f]:.3e}" for f in FIELDS))
    eo = expected_orders(config.k, omega).orders
    return ConvergenceTable(ns, side, errors, eo, iterations, converged)

import functools

import pytest

from hdgstokes import SolverConfig, build_square_mesh, solve_control_problem
from hdgstokes.analysis.problems import EXAMPLE1


@functools.lru_cache(maxsize=None)
def example1_run(n, k=1, dt=256.0, stabilization="face", tol=1e-8):
    """Cached Example 1 solve: (mesh, config, solution, report)."""
    mesh = build_square_mesh(n)
    config = SolverConfig(k=k, dt=dt, tol=tol, stabilization=stabilization)
    sol, rep = solve_control_problem(mesh, config, EXAMPLE1.forcing,
                                     EXAMPLE1.target)
    return mesh, config, sol, rep


@pytest.fixture(scope="session")
def run_example1():
    return example1_run


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance():
    """Recorder for acceptance outcomes: ``acceptance(label, ok, detail)``."""
    def record(label, ok, detail=""):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  ({detail})"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)

"""
Benchmark data: a closed-form optimality-system solution on the unit square
and a polynomial vortex target on [0, 1/8]^2.

All evaluators take coordinate arrays ``x1, x2`` of any common shape and
return tuples of arrays (vector fields as ``(c1, c2)``, tensors as
``((d1 c1, d2 c1), (d1 c2, d2 c2))``).
"""

from dataclasses import dataclass

import numpy as np

PI = np.pi


def example1_velocity(x1, x2):
    s1, c1 = np.sin(PI * x1), np.cos(PI * x1)
    s2, c2 = np.sin(PI * x2), np.cos(PI * x2)
    y1 = -2 * PI**2 * s1**2 * c2 - 2 * PI**2 * s1 * np.sin(2 * PI * x2)
    y2 = 2 * PI**2 * c1 * s2**2 + 2 * PI**2 * s2 * np.sin(2 * PI * x1)
    return y1, y2


def example1_adjoint(x1, x2):
    s1, s2 = np.sin(PI * x1), np.sin(PI * x2)
    z1 = PI * s1**2 * np.sin(2 * PI * x2)
    z2 = -PI * s2**2 * np.sin(2 * PI * x1)
    return z1, z2


def example1_pressure(x1, x2):
    return np.cos(PI * x1) + 0.0 * x2


example1_dual_pressure = example1_pressure


def example1_velocity_gradient(x1, x2):
    s1, c1 = np.sin(PI * x1), np.cos(PI * x1)
    s2, c2 = np.sin(PI * x2), np.cos(PI * x2)
    d1y1 = -2 * PI**3 * (2 * s1 * c2 + np.sin(2 * PI * x2)) * c1
    d2y1 = -2 * PI**3 * (2 * np.cos(2 * PI * x2) - s1 * s2) * s1
    d1y2 = 2 * PI**3 * (2 * np.cos(2 * PI * x1) - s1 * s2) * s2
    d2y2 = 2 * PI**3 * (np.sin(2 * PI * x1) + 2 * s2 * c1) * c2
    return (d1y1, d2y1), (d1y2, d2y2)


def example1_adjoint_gradient(x1, x2):
    s1, c1 = np.sin(PI * x1), np.cos(PI * x1)
    s2, c2 = np.sin(PI * x2), np.cos(PI * x2)
    d1z1 = 2 * PI**2 * s1 * c1 * np.sin(2 * PI * x2)
    d2z1 = 2 * PI**2 * s1**2 * np.cos(2 * PI * x2)
    d1z2 = -2 * PI**2 * s2**2 * np.cos(2 * PI * x1)
    d2z2 = -2 * PI**2 * np.sin(2 * PI * x1) * s2 * c2
    return (d1z1, d2z1), (d1z2, d2z2)


def _laplacians(x1, x2):
    s1, c1 = np.sin(PI * x1), np.cos(PI * x1)
    s2, c2 = np.sin(PI * x2), np.cos(PI * x2)
    lap_y1 = 2 * PI**4 * (5 * s1**2 + 10 * s1 * s2 - 2) * c2
    lap_y2 = -2 * PI**4 * (5 * s2**2 + 10 * s1 * s2 - 2) * c1
    lap_z1 = 2 * PI**3 * (2 * np.cos(2 * PI * x1) - 1) * np.sin(2 * PI * x2)
    lap_z2 = -2 * PI**3 * (2 * np.cos(2 * PI * x2) - 1) * np.sin(2 * PI * x1)
    return lap_y1, lap_y2, lap_z1, lap_z2


def example1_forcing(x1, x2):
    """f = -lap y + grad p."""
    lap_y1, lap_y2, _, _ = _laplacians(x1, x2)
    return -lap_y1 - PI * np.sin(PI * x1), -lap_y2 + 0.0 * x1


def example1_target(x1, x2):
    """y_d = y + lap z + grad q."""
    y1, y2 = example1_velocity(x1, x2)
    _, _, lap_z1, lap_z2 = _laplacians(x1, x2)
    return y1 + lap_z1 - PI * np.sin(PI * x1), y2 + lap_z2


def example1_exact(x1, x2):
    """(y, z, p, q) of the closed-form solution with gamma = 1."""
    return (example1_velocity(x1, x2), example1_adjoint(x1, x2),
            example1_pressure(x1, x2), example1_dual_pressure(x1, x2))


def example1_data(x1, x2):
    """(f, y_d) matching ``example1_exact``."""
    return example1_forcing(x1, x2), example1_target(x1, x2)


def example2_target(x1, x2):
    """Polynomial vortex on [0, 1/8]^2, vanishing on its boundary."""
    c = 200.0 * 8.0**3
    a = x1**2 * (1 - 8 * x1) ** 2 * x2 * (1 - 8 * x2) * (1 - 16 * x2)
    b = x1 * (1 - 8 * x1) * (1 - 16 * x1) * x2**2 * (1 - 8 * x2) ** 2
    return c * a, -c * b


def zero_vector(x1, x2):
    z = np.zeros(np.broadcast(x1, x2).shape)
    return z, z


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form fields of a control problem with known solution."""

    velocity: object
    adjoint: object
    pressure: object
    dual_pressure: object
    velocity_gradient: object
    adjoint_gradient: object
    forcing: object
    target: object
    gamma: float = 1.0
    side: float = 1.0
    origin: tuple = (0.0, 0.0)

    def control(self, x1, x2, tangent):
        """u = y . tau on the boundary."""
        y1, y2 = self.velocity(x1, x2)
        return y1 * tangent[..., 0] + y2 * tangent[..., 1]


EXAMPLE1 = ManufacturedSolution(
    example1_velocity, example1_adjoint, example1_pressure,
    example1_dual_pressure, example1_velocity_gradient,
    example1_adjoint_gradient, example1_forcing, example1_target)


@dataclass(frozen=True)
class BenchmarkProblem:
    """Data of a control problem without a known solution."""

    forcing: object
    target: object
    gamma: float = 1.0
    side: float = 1.0
    origin: tuple = (0.0, 0.0)


EXAMPLE2 = BenchmarkProblem(zero_vector, example2_target, 1.0, 0.125)

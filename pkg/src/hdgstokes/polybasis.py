"""
Modal polynomial bases and quadrature on the reference triangle and edge.

Reference triangle: {x >= 0, y >= 0, x + y <= 1} (area 1/2).
Reference edge: [-1, 1].

The triangle basis is the orthonormal Dubiner basis, written through the
scaled Legendre recurrence so that values and gradients are polynomial
evaluations with no collapsed-coordinate singularity at the top vertex.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi, roots_legendre

MAX_TRIANGLE_EXACTNESS = 60


@dataclass(frozen=True)
class QuadratureRule:
    """Points, weights and polynomial exactness of a reference rule."""

    points: np.ndarray
    weights: np.ndarray
    exactness: int

    @property
    def size(self):
        return self.weights.shape[0]


@lru_cache(maxsize=None)
def triangle_quadrature(exactness):
    """
    Collapsed Gauss rule on the reference triangle.

    Gauss-Legendre in the collapsed horizontal direction and Gauss-Jacobi
    (alpha=1) in the vertical direction; all weights are positive.

    Parameters
    ----------
    exactness : int
        Total polynomial degree integrated exactly.
    """
    exactness = int(exactness)
    if exactness < 1:
        raise ValueError("exactness must be >= 1")
    if exactness > MAX_TRIANGLE_EXACTNESS:
        raise ValueError(f"triangle exactness {exactness} exceeds the "
                         f"supported maximum {MAX_TRIANGLE_EXACTNESS}")
    npts = (exactness + 2) // 2
    a, wa = roots_legendre(npts)
    b, wb = roots_jacobi(npts, 1.0, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    x = 0.25 * (1.0 + A) * (1.0 - B)
    y = 0.5 * (1.0 + B)
    w = np.outer(wa, wb) / 8.0
    pts = np.column_stack([x.ravel(), y.ravel()])
    pts.setflags(write=False)
    w = w.ravel()
    w.setflags(write=False)
    return QuadratureRule(pts, w, exactness)


@lru_cache(maxsize=None)
def edge_quadrature(points):
    """Gauss-Legendre rule with ``points`` nodes on [-1, 1]."""
    points = int(points)
    if points < 1:
        raise ValueError("points must be >= 1")
    t, w = roots_legendre(points)
    t = t.reshape(-1, 1)
    t.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(t, w, 2 * points - 1)


def triangle_dim(degree):
    return (degree + 1) * (degree + 2) // 2


def _mode_indices(degree):
    # hierarchical: lower-degree spaces are leading subsets
    return [(n - q, q) for n in range(degree + 1) for q in range(n + 1)]


def _scaled_legendre(x, y, pmax):
    """(1-y)^p P_p((2x+y-1)/(1-y)) and its gradient, p = 0..pmax."""
    s = 2.0 * x + y - 1.0
    t = 1.0 - y
    Q = [np.ones_like(x)]
    Qx = [np.zeros_like(x)]
    Qy = [np.zeros_like(x)]
    if pmax >= 1:
        Q.append(s.copy())
        Qx.append(2.0 * np.ones_like(x))
        Qy.append(np.ones_like(x))
    for p in range(1, pmax):
        c1 = (2 * p + 1) / (p + 1)
        c2 = p / (p + 1)
        Q.append(c1 * s * Q[p] - c2 * t * t * Q[p - 1])
        Qx.append(c1 * (2.0 * Q[p] + s * Qx[p]) - c2 * t * t * Qx[p - 1])
        Qy.append(c1 * (Q[p] + s * Qy[p])
                  - c2 * (-2.0 * t * Q[p - 1] + t * t * Qy[p - 1]))
    return Q, Qx, Qy


@dataclass(frozen=True)
class TriangleBasis:
    """Orthonormal Dubiner basis of total degree ``degree``."""

    degree: int
    modes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        object.__setattr__(self, "modes", tuple(_mode_indices(self.degree)))

    @property
    def dim(self):
        return triangle_dim(self.degree)

    def evaluate(self, points, gradient=False):
        """
        Evaluate the basis at reference points.

        Parameters
        ----------
        points : array_like, shape (..., 2)
        gradient : bool
            Also return gradients, shape (..., dim, 2).

        Returns
        -------
        values : ndarray, shape (..., dim)
        """
        pts = np.asarray(points, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        Q, Qx, Qy = _scaled_legendre(x, y, self.degree)
        b = 2.0 * y - 1.0
        vals = np.empty(pts.shape[:-1] + (self.dim,))
        grads = np.empty(pts.shape[:-1] + (self.dim, 2)) if gradient else None
        for i, (p, q) in enumerate(self.modes):
            c = np.sqrt(2.0 * (2 * p + 1) * (p + q + 1))
            J = eval_jacobi(q, 2 * p + 1, 0, b)
            vals[..., i] = c * Q[p] * J
            if gradient:
                if q > 0:
                    dJ = (q + 2 * p + 2) / 2.0 * eval_jacobi(
                        q - 1, 2 * p + 2, 1, b) * 2.0
                else:
                    dJ = 0.0
                grads[..., i, 0] = c * Qx[p] * J
                grads[..., i, 1] = c * (Qy[p] * J + Q[p] * dJ)
        if gradient:
            return vals, grads
        return vals


@dataclass(frozen=True)
class EdgeBasis:
    """Orthonormal Legendre basis on [-1, 1]."""

    degree: int

    @property
    def dim(self):
        return self.degree + 1

    def evaluate(self, points):
        t = np.asarray(points, dtype=float)
        if t.ndim and t.shape[-1] == 1:
            t = t[..., 0]
        out = np.empty(t.shape + (self.dim,))
        P0, P1 = np.ones_like(t), t
        for i in range(self.dim):
            if i == 0:
                P = P0
            elif i == 1:
                P = P1
            else:
                P = ((2 * i - 1) * t * P1 - (i - 1) * P0) / i
                P0, P1 = P1, P
            out[..., i] = np.sqrt((2 * i + 1) / 2.0) * P
        return out


def eval_basis(basis, points, gradient=False):
    """
    Tabulate ``basis`` at reference ``points``.

    Returns the (npoints, dim) value table, and for a TriangleBasis with
    ``gradient=True`` also the (npoints, dim, 2) gradient table.
    """
    if isinstance(basis, EdgeBasis):
        if gradient:
            raise ValueError("EdgeBasis provides no gradient table")
        return basis.evaluate(points)
    return basis.evaluate(points, gradient=gradient)

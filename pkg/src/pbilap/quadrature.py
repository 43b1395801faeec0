"""Quadrature rules on the reference segment [0, 1] and the unit triangle."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = {1: 10, 2: 8}


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points in reference coordinates and positive weights.

    Segment points are ``t`` in [0, 1]; triangle points are ``(x, y)`` in the
    unit triangle ``x, y >= 0, x + y <= 1``.
    """

    dim: int
    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def barycentric(self) -> np.ndarray:
        if self.dim == 1:
            t = self.points[:, 0]
            return np.column_stack([1.0 - t, t])
        x, y = self.points.T
        return np.column_stack([1.0 - x - y, x, y])

    def __len__(self):
        return len(self.weights)


def _gauss_legendre_01(n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def quad_rule(dim: int, exact_degree: int) -> QuadratureRule:
    """Return a rule integrating total degree ``<= exact_degree`` exactly.

    Segments use Gauss-Legendre.  Triangles use the centroid and three-point
    symmetric rules for degree 1 and 2, and a collapsed Gauss-Jacobi product
    rule above that.
    """
    if dim not in MAX_DEGREE:
        raise ValueError(f"no quadrature for dimension {dim}")
    if not 0 <= exact_degree <= MAX_DEGREE[dim]:
        raise ValueError(
            f"quadrature degree {exact_degree} unsupported in {dim}D (max {MAX_DEGREE[dim]})"
        )
    n = max(1, (exact_degree + 2) // 2)
    if dim == 1:
        t, w = _gauss_legendre_01(n)
        points = t[:, None]
    elif exact_degree <= 1:
        points = np.array([[1.0 / 3.0, 1.0 / 3.0]])
        w = np.array([0.5])
    elif exact_degree == 2:
        points = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        w = np.full(3, 1.0 / 6.0)
    else:
        u, wu = _gauss_legendre_01(n)
        # weight (1 - v) on [0, 1] from Jacobi(alpha=1, beta=0) on [-1, 1]
        s, ws = roots_jacobi(n, 1.0, 0.0)
        v = 0.5 * (s + 1.0)
        wv = 0.25 * ws
        U, V = np.meshgrid(u, v, indexing="ij")
        points = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
        w = np.outer(wu, wv).ravel()
    points.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(dim, exact_degree, points, w)


def facet_rule(dim: int, exact_degree: int) -> QuadratureRule:
    """Rule on a facet: a single point in 1D, a segment rule in 2D."""
    if dim == 1:
        return QuadratureRule(0, exact_degree, np.zeros((1, 0)), np.ones(1))
    return quad_rule(1, exact_degree)

"""Quadrature on the reference triangle (0,0), (1,0), (0,1) and the unit interval."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_TRIANGLE_DEGREE = 10
MAX_EDGE_DEGREE = 11


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __len__(self) -> int:
        return len(self.weights)


def _rule(points, weights, degree):
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    points.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(points, weights, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Positive-weight rule exact for all monomials ``x^a y^b`` with ``a + b <= degree``.

    Degrees 1 and 2 use the symmetric centroid and three-point rules; higher
    degrees use a collapsed (Duffy) tensor product of Gauss-Jacobi and
    Gauss-Legendre points.
    """
    if not 1 <= degree <= MAX_TRIANGLE_DEGREE:
        raise ValueError(
            f"triangle quadrature degree must be in [1, {MAX_TRIANGLE_DEGREE}], got {degree}"
        )
    if degree == 1:
        return _rule([[1 / 3, 1 / 3]], [0.5], 1)
    if degree == 2:
        a, b = 1 / 6, 2 / 3
        return _rule([[a, a], [b, a], [a, b]], [1 / 6] * 3, 2)

    n = (degree + 2) // 2
    # weight (1 - xi) absorbs the Duffy Jacobian (1 - u)
    xi_u, w_u = roots_jacobi(n, 1.0, 0.0)
    xi_v, w_v = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (xi_u + 1.0)
    v = 0.5 * (xi_v + 1.0)
    U, Vv = np.meshgrid(u, v, indexing="ij")
    W = np.outer(w_u / 4.0, w_v / 2.0)
    points = np.column_stack([U.ravel(), ((1.0 - U) * Vv).ravel()])
    return _rule(points, W.ravel(), degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact to ``degree``."""
    if not 1 <= degree <= MAX_EDGE_DEGREE:
        raise ValueError(
            f"edge quadrature degree must be in [1, {MAX_EDGE_DEGREE}], got {degree}"
        )
    n = (degree + 2) // 2
    xi, w = np.polynomial.legendre.leggauss(n)
    return _rule(0.5 * (xi + 1.0), 0.5 * w, degree)

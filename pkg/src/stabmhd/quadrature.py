"""Quadrature rules on the reference triangle and tetrahedron.

Rules are collapsed (conical) Gauss-Jacobi products: every point lies in the
open interior of the reference simplex and all weights are positive.  A
degree-0/1 request returns the one-point centroid rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 14


class UnsupportedDegreeError(ValueError):
    pass


@dataclass(frozen=True)
class QuadRule:
    """Points in reference coordinates and weights in reference measure."""

    points: np.ndarray
    weights: np.ndarray
    degree: int
    dim: int

    @property
    def negative_weights(self) -> bool:
        return bool(np.any(self.weights < 0))

    @property
    def barycentric(self) -> np.ndarray:
        """Barycentric coordinates ``(lambda_0, ..., lambda_dim)`` of the points."""
        return np.column_stack([1.0 - self.points.sum(axis=1), self.points])

    def __len__(self) -> int:
        return len(self.weights)


def _gauss_jacobi01(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    # nodes/weights for int_0^1 f(t) (1-t)^alpha dt
    x, w = roots_jacobi(n, alpha, 0)
    t = 0.5 * (1.0 + x)
    return t, w / 2.0 ** (alpha + 1)


def _check_degree(degree: int) -> None:
    if not 0 <= degree <= MAX_DEGREE:
        raise UnsupportedDegreeError(
            f"unsupported quadrature degree {degree} (supported: 0..{MAX_DEGREE})"
        )


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> QuadRule:
    """Rule on {x, y, z >= 0, x + y + z <= 1} exact for total degree ``degree``."""
    _check_degree(degree)
    n = max(1, (degree + 2) // 2)
    t1, w1 = _gauss_jacobi01(n, 2)
    t2, w2 = _gauss_jacobi01(n, 1)
    t3, w3 = _gauss_jacobi01(n, 0)
    a, b, c = np.meshgrid(t1, t2, t3, indexing="ij")
    wa, wb, wc = np.meshgrid(w1, w2, w3, indexing="ij")
    x = a
    y = b * (1.0 - a)
    z = c * (1.0 - a) * (1.0 - b)
    pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    wts = (wa * wb * wc).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(pts, wts, degree, 3)


@lru_cache(maxsize=None)
def tri_rule(degree: int) -> QuadRule:
    """Rule on {s, t >= 0, s + t <= 1} exact for total degree ``degree``."""
    _check_degree(degree)
    n = max(1, (degree + 2) // 2)
    t1, w1 = _gauss_jacobi01(n, 1)
    t2, w2 = _gauss_jacobi01(n, 0)
    a, b = np.meshgrid(t1, t2, indexing="ij")
    wa, wb = np.meshgrid(w1, w2, indexing="ij")
    pts = np.column_stack([a.ravel(), (b * (1.0 - a)).ravel()])
    wts = (wa * wb).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(pts, wts, degree, 2)


@lru_cache(maxsize=None)
def line_rule(degree: int) -> QuadRule:
    """Gauss-Legendre rule on [0, 1]."""
    _check_degree(degree)
    t, w = _gauss_jacobi01(max(1, (degree + 2) // 2), 0)
    return QuadRule(t[:, None], w, degree, 1)


def monomial_integral(exponents: tuple[int, ...]) -> float:
    """Exact integral of prod x_i^a_i over the reference simplex of matching dimension."""
    num = 1
    for a in exponents:
        num *= factorial(a)
    return num / factorial(sum(exponents) + len(exponents))


def verify_exactness(rule: QuadRule, rtol: float = 1e-12) -> float:
    """Largest relative error over all monomials up to the rule's degree."""
    worst = 0.0
    for exps in _exponents(rule.dim, rule.degree):
        vals = np.prod(rule.points ** np.asarray(exps), axis=1)
        exact = monomial_integral(exps)
        err = abs(vals @ rule.weights - exact) / exact
        worst = max(worst, err)
    if worst > rtol:
        raise AssertionError(f"quadrature rule of degree {rule.degree} inexact: {worst:.3e}")
    return worst


def _exponents(dim: int, degree: int):
    if dim == 1:
        for a in range(degree + 1):
            yield (a,)
        return
    for a in range(degree + 1):
        for rest in _exponents(dim - 1, degree - a):
            yield (a,) + rest

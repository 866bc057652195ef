"""Quadrature on the reference triangle and the unit interval.

Triangle rules are conical products of a Gauss-Jacobi rule (weight 1-x)
with a Gauss-Legendre rule, mapped to the reference triangle with
vertices (0,0), (1,0), (0,1).  An n x n product integrates all
polynomials of total degree 2n-1 exactly, has strictly positive weights,
and keeps every node strictly inside the triangle.  Every constructed
rule is verified against closed-form monomial integrals before use; a
rule that misses the 1e-13 relative target is rejected, not trusted.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

MIN_DEGREE = 1
MAX_DEGREE = 20
_MONOMIAL_RTOL = 1e-13


class QuadratureError(Exception):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature nodes in barycentric coordinates plus weights.

    Triangle rules: points (n, 3), weights summing to 1/2 (the reference
    area).  Edge rules: points (n, 2) barycentric on [0, 1], weights
    summing to 1.
    """
    kind: str
    degree: int
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.points.flags.writeable = False
        self.weights.flags.writeable = False


def _check_degree(degree):
    if not (MIN_DEGREE <= int(degree) <= MAX_DEGREE):
        raise QuadratureError(
            f"unsupported degree {degree}; supported degrees are "
            f"{MIN_DEGREE}..{MAX_DEGREE}")
    return int(degree)


def reference_triangle_integral(i, j):
    """Exact integral of x^i y^j over the reference triangle."""
    return math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)


def _verify_triangle(rule):
    x = rule.points[:, 1]
    y = rule.points[:, 2]
    for i in range(rule.degree + 1):
        for j in range(rule.degree + 1 - i):
            exact = reference_triangle_integral(i, j)
            got = float(rule.weights @ (x ** i * y ** j))
            if abs(got - exact) > _MONOMIAL_RTOL * abs(exact):
                raise QuadratureError(
                    f"triangle rule degree {rule.degree} misses x^{i} y^{j}: "
                    f"{got!r} vs {exact!r}")


def _verify_edge(rule):
    t = rule.points[:, 1]
    for k in range(rule.degree + 1):
        exact = 1.0 / (k + 1)
        got = float(rule.weights @ t ** k)
        if abs(got - exact) > _MONOMIAL_RTOL * abs(exact):
            raise QuadratureError(
                f"edge rule degree {rule.degree} misses t^{k}: "
                f"{got!r} vs {exact!r}")


_triangle_cache = {}
_edge_cache = {}


def triangle_rule(degree):
    """Rule exact for all bivariate polynomials of total degree ``degree``."""
    degree = _check_degree(degree)
    if degree not in _triangle_cache:
        n = (degree + 2) // 2
        tj, wj = roots_jacobi(n, 1, 0)
        u = 0.5 * (tj + 1.0)            # Gauss-Jacobi for weight (1-u) on [0,1]
        wu = 0.25 * wj                  # sums to 1/2
        tg, wg = leggauss(n)
        v = 0.5 * (tg + 1.0)
        wv = 0.5 * wg                   # sums to 1
        x = np.repeat(u, n)
        yy = np.tile(v, n) * (1.0 - x)
        w = np.repeat(wu, n) * np.tile(wv, n)
        pts = np.column_stack([1.0 - x - yy, x, yy])
        rule = QuadratureRule("triangle", degree, pts, w)
        if np.any(w <= 0) or np.any(pts < 0) or np.any(pts > 1):
            raise QuadratureError("triangle rule with invalid weights/points")
        _verify_triangle(rule)
        _triangle_cache[degree] = rule
    return _triangle_cache[degree]


def edge_rule(degree):
    """Gauss rule on the unit interval, exact through ``degree``."""
    degree = _check_degree(degree)
    if degree not in _edge_cache:
        n = (degree + 2) // 2
        tg, wg = leggauss(n)
        t = 0.5 * (tg + 1.0)
        w = 0.5 * wg
        pts = np.column_stack([1.0 - t, t])
        rule = QuadratureRule("edge", degree, pts, w)
        if np.any(w <= 0) or np.any(pts < 0) or np.any(pts > 1):
            raise QuadratureError("edge rule with invalid weights/points")
        _verify_edge(rule)
        _edge_cache[degree] = rule
    return _edge_cache[degree]


def quadrature_rule(kind, degree):
    """Dispatch on element kind, either "triangle" or "edge"."""
    if kind == "triangle":
        return triangle_rule(degree)
    if kind == "edge":
        return edge_rule(degree)
    raise QuadratureError(f"unknown element kind {kind!r}")

from math import factorial

import numpy as np
import pytest

from sparseafem.quadrature import (MAX_DEGREE, MIN_DEGREE, QuadratureError,
                                   edge_rule, quadrature_rule, triangle_rule)


def triangle_monomial_integral(i, j):
    # int over the unit reference triangle of x^i y^j
    return factorial(i) * factorial(j) / factorial(i + j + 2)


def apply_triangle(rule, f):
    x = rule.points[:, 1]
    y = rule.points[:, 2]
    return float((rule.weights * f(x, y)).sum())


class TestTriangleRules:
    def test_constant(self):
        rule = triangle_rule(1)
        assert apply_triangle(rule, lambda x, y: 1.0 + 0 * x) \
            == pytest.approx(0.5, abs=1e-15)

    def test_linear(self):
        rule = triangle_rule(2)
        assert apply_triangle(rule, lambda x, y: x) \
            == pytest.approx(1 / 6, rel=1e-14)

    @pytest.mark.parametrize("degree", range(MIN_DEGREE, MAX_DEGREE + 1))
    def test_monomial_exactness(self, degree):
        rule = triangle_rule(degree)
        assert rule.degree == degree
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                got = apply_triangle(rule, lambda x, y: x ** i * y ** j)
                want = triangle_monomial_integral(i, j)
                assert abs(got - want) <= 1e-13 * abs(want)

    def test_points_and_weights(self):
        for degree in (1, 4, 19):
            rule = triangle_rule(degree)
            assert (rule.weights > 0).all()
            assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
            # barycentric points strictly inside
            assert (rule.points > 0).all() and (rule.points < 1).all()
            np.testing.assert_allclose(rule.points.sum(axis=1), 1.0,
                                       rtol=1e-14)

    def test_cache_identity(self):
        assert triangle_rule(7) is triangle_rule(7)


class TestEdgeRules:
    def test_quadratic(self):
        rule = edge_rule(3)
        got = float((rule.weights * rule.points[:, 1] ** 2).sum())
        assert got == pytest.approx(1 / 3, rel=1e-14)

    @pytest.mark.parametrize("degree", range(MIN_DEGREE, MAX_DEGREE + 1))
    def test_monomial_exactness(self, degree):
        rule = edge_rule(degree)
        t = rule.points[:, 1]
        for i in range(degree + 1):
            got = float((rule.weights * t ** i).sum())
            want = 1.0 / (i + 1)
            assert abs(got - want) <= 1e-13 * want


class TestDispatch:
    def test_kinds(self):
        assert quadrature_rule("triangle", 5) is triangle_rule(5)
        assert quadrature_rule("edge", 5) is edge_rule(5)

    def test_bad_kind(self):
        with pytest.raises(QuadratureError):
            quadrature_rule("square", 3)

    @pytest.mark.parametrize("degree", [0, 21, -4])
    def test_unsupported_degree(self, degree):
        with pytest.raises(QuadratureError, match=r"1.*20"):
            triangle_rule(degree)

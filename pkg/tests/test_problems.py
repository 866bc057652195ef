import numpy as np
import pytest

from sparseafem.assembly import P0, P1, FeFunction
from sparseafem.mesh import (LSHAPE, UNIT_SQUARE, make_initial_mesh,
                             refine_bisection)
from sparseafem.optimality import ProblemData, Solution
from sparseafem.problems import (ErrorNorms, ManufacturedProblem,
                                 ProblemsError, _singular_part,
                                 exact_error_norms, example1, example2,
                                 get_example)

FD_STEP = 1e-4
PROBE_STEP = 1e-3


def sample_interior(domain, n, rng, margin):
    """Uniform points at distance > margin from the domain boundary."""
    pts = np.empty((0, 2))
    while len(pts) < n:
        if domain == UNIT_SQUARE:
            cand = rng.uniform(margin, 1.0 - margin, size=(2 * n, 2))
            keep = np.ones(len(cand), dtype=bool)
        else:
            cand = rng.uniform(-1.0 + margin, 1.0 - margin, size=(4 * n, 2))
            # distance to the removed quadrant [0,1) x (-1,0]
            nx = np.clip(cand[:, 0], 0.0, 1.0)
            ny = np.clip(cand[:, 1], -1.0, 0.0)
            keep = np.hypot(cand[:, 0] - nx, cand[:, 1] - ny) > margin
        pts = np.vstack([pts, cand[keep]])
    return pts[:n, 0], pts[:n, 1]


def fd_laplacian(g, x, y, h=FD_STEP):
    return (g(x + h, y) + g(x - h, y) + g(x, y + h) + g(x, y - h)
            - 4.0 * g(x, y)) / h ** 2


def fourth_difference(g, x, y, H=PROBE_STEP):
    """Absolute 4th central differences along each axis; estimates the
    derivatives entering the 5-point stencil's truncation error."""
    def d4(gm2, gm1, g0, gp1, gp2):
        return np.abs(gm2 - 4 * gm1 + 6 * g0 - 4 * gp1 + gp2) / H ** 4

    g0 = g(x, y)
    dx = d4(g(x - 2 * H, y), g(x - H, y), g0, g(x + H, y), g(x + 2 * H, y))
    dy = d4(g(x, y - 2 * H), g(x, y - H), g0, g(x, y + H), g(x, y + 2 * H))
    return dx, dy


def third_difference(g, x, y, H=PROBE_STEP):
    def d3(gm2, gm1, gp1, gp2):
        return np.abs(-0.5 * gm2 + gm1 - gp1 + 0.5 * gp2) / H ** 3

    dx = d3(g(x - 2 * H, y), g(x - H, y), g(x + H, y), g(x + 2 * H, y))
    dy = d3(g(x, y - 2 * H), g(x, y - H), g(x, y + H), g(x, y + 2 * H))
    return dx, dy


def fd_data_consistency(problem, n_points, rng, margin):
    """Check f = -lap(y) - u and y_omega = y + lap(p) against 5-point
    finite-difference Laplacians.

    Tolerance per point: 1e-6 relative to the terms involved plus the
    stencil's own truncation budget (h^2/12 times the measured fourth
    differences) -- without the budget no oracle of this kind can pass
    near steep layers or corner singularities.  Returns the worst ratio
    of |residual| to tolerance (must be <= 1 to pass).
    """
    x, y = sample_interior(problem.domain, n_points, rng, margin)
    d = problem.data
    worst = 0.0
    for lhs, fun, extra in (
            (d.f(x, y), problem.y, problem.u(x, y)),
            (d.y_omega(x, y) - problem.y(x, y), problem.p, None)):
        lap = fd_laplacian(fun, x, y)
        if extra is not None:
            resid = lhs + lap + extra
            scale = 1.0 + np.abs(lhs) + np.abs(lap) + np.abs(extra)
        else:
            resid = lhs - lap
            scale = 1.0 + np.abs(lhs) + np.abs(lap)
        d4x, d4y = fourth_difference(fun, x, y)
        tol = 1e-6 * scale + 1.5 * (FD_STEP ** 2 / 12.0) * (d4x + d4y)
        worst = max(worst, float((np.abs(resid) / tol).max()))
    return worst


def refined(domain, rounds):
    mesh = make_initial_mesh(domain)
    for _ in range(rounds):
        mesh = refine_bisection(mesh, np.arange(mesh.num_triangles))
    return mesh


class TestExample1:
    def test_adjoint_center_value(self):
        prob = example1()
        assert prob.p(0.5, 0.5) == pytest.approx(1.25, abs=1e-15)

    def test_state_vanishes_on_boundary(self):
        prob = example1()
        t = np.linspace(0.0, 1.0, 101)
        z = np.zeros_like(t)
        for x, y in ((t, z), (t, z + 1.0), (z, t), (z + 1.0, t)):
            np.testing.assert_allclose(prob.y(x, y), 0.0, atol=1e-14)
            np.testing.assert_allclose(prob.p(x, y), 0.0, atol=1e-14)

    def test_control_zero_iff_small_adjoint(self):
        prob = example1()
        rng = np.random.default_rng(21)
        x, y = sample_interior(UNIT_SQUARE, 2000, rng, 1e-3)
        p = prob.p(x, y)
        u = prob.u(x, y)
        off = np.abs(np.abs(p) - prob.data.beta) > 1e-12
        np.testing.assert_array_equal(u[off] == 0.0,
                                      np.abs(p[off]) <= prob.data.beta)

    def test_pointwise_bounds(self):
        prob = example1()
        rng = np.random.default_rng(22)
        x, y = sample_interior(UNIT_SQUARE, 2000, rng, 1e-3)
        u, lam = prob.u(x, y), prob.lam(x, y)
        assert (u >= prob.data.a).all() and (u <= prob.data.b).all()
        assert (np.abs(lam) <= 1.0).all()

    def test_data_consistency(self):
        worst = fd_data_consistency(example1(), 1000,
                                    np.random.default_rng(2024), 5e-3)
        assert worst <= 1.0

    def test_gradient_consistency(self):
        prob = example1()
        rng = np.random.default_rng(23)
        x, y = sample_interior(UNIT_SQUARE, 500, rng, 5e-3)
        h = FD_STEP
        for fun, grad in ((prob.y, prob.y_grad), (prob.p, prob.p_grad)):
            gx, gy = grad(x, y)
            fdx = (fun(x + h, y) - fun(x - h, y)) / (2 * h)
            fdy = (fun(x, y + h) - fun(x, y - h)) / (2 * h)
            d3x, d3y = third_difference(fun, x, y)
            allow_x = 1e-6 * (1 + np.abs(gx)) + 1.5 * (h ** 2 / 6.0) * d3x
            allow_y = 1e-6 * (1 + np.abs(gy)) + 1.5 * (h ** 2 / 6.0) * d3y
            assert (np.abs(fdx - gx) <= allow_x).all()
            assert (np.abs(fdy - gy) <= allow_y).all()


class TestExample2:
    def test_corner_values(self):
        prob = example2()
        assert prob.y(0.0, 0.0) == 0.0
        assert prob.p(0.0, 0.0) == 0.0

    def test_reentrant_edges(self):
        prob = example2()
        t = np.linspace(1e-6, 0.999, 64)
        np.testing.assert_allclose(prob.y(t, np.zeros_like(t)), 0.0,
                                   atol=1e-12)
        np.testing.assert_allclose(prob.p(t, np.zeros_like(t)), 0.0,
                                   atol=1e-12)
        np.testing.assert_allclose(prob.y(np.zeros_like(t), -t), 0.0,
                                   atol=1e-12)
        np.testing.assert_allclose(prob.p(np.zeros_like(t), -t), 0.0,
                                   atol=1e-12)

    def test_outer_boundary_zero(self):
        prob = example2()
        t = np.linspace(-1.0, 1.0, 101)
        ones = np.ones_like(t)
        half = np.linspace(0.0, 1.0, 51)
        edges = ((t, ones),                       # top
                 (-ones, t),                      # left
                 (t[t <= 0], -np.ones_like(t[t <= 0])),   # bottom-left
                 (np.ones_like(half), half))      # right, upper half
        for x, y in edges:
            np.testing.assert_allclose(prob.y(x, y), 0.0, atol=1e-12)
            np.testing.assert_allclose(prob.p(x, y), 0.0, atol=1e-12)

    def test_singular_part_harmonic(self):
        rng = np.random.default_rng(24)
        x, y = sample_interior(LSHAPE, 500, rng, 0.02)
        rho = np.hypot(x, y)
        x, y = x[rho > 0.25], y[rho > 0.25]
        s = lambda xx, yy: _singular_part(xx, yy)[0]
        lap = fd_laplacian(s, x, y)
        d4x, d4y = fourth_difference(s, x, y)
        tol = 1e-6 + 1.5 * (FD_STEP ** 2 / 12.0) * (d4x + d4y)
        assert (np.abs(lap) <= tol).all()

    def test_singular_gradient_consistency(self):
        rng = np.random.default_rng(25)
        x, y = sample_interior(LSHAPE, 300, rng, 0.05)
        s, sx, sy = _singular_part(x, y)
        h = 1e-6
        fdx = (_singular_part(x + h, y)[0]
               - _singular_part(x - h, y)[0]) / (2 * h)
        fdy = (_singular_part(x, y + h)[0]
               - _singular_part(x, y - h)[0]) / (2 * h)
        np.testing.assert_allclose(fdx, sx, atol=1e-6, rtol=1e-5)
        np.testing.assert_allclose(fdy, sy, atol=1e-6, rtol=1e-5)

    def test_data_consistency(self):
        worst = fd_data_consistency(example2(), 1000,
                                    np.random.default_rng(2024), 0.02)
        assert worst <= 1.0

    def test_bounds_fixed_by_problem(self):
        prob = example2()
        assert prob.data.a == -0.6 and prob.data.b == 1.0
        assert prob.data.alpha == 1e-3 and prob.data.beta == 0.2


class TestGetExample:
    def test_lookup(self):
        assert get_example(1).name == "example1"
        assert get_example("2").name == "example2"

    def test_overrides(self):
        prob = get_example("1", alpha=0.5)
        assert prob.data.alpha == 0.5 and prob.data.beta == 0.7
        prob = get_example(2, beta=0.4)
        assert prob.data.beta == 0.4 and prob.data.alpha == 1e-3

    def test_unknown(self):
        with pytest.raises(ProblemsError, match="unknown"):
            get_example("3")


def affine_problem():
    """Exact quadruple that P1/P0 spaces reproduce exactly: affine
    state and a constant adjoint inside the sparsity band."""
    data = ProblemData(alpha=1.0, beta=1.0, a=-1.0, b=1.0,
                       f=lambda x, y: np.zeros_like(x),
                       y_omega=lambda x, y: np.zeros_like(x))
    c = 0.3
    return ManufacturedProblem(
        name="affine", domain=UNIT_SQUARE, data=data,
        y=lambda x, yy: 1.0 + x - 2.0 * yy,
        y_grad=lambda x, yy: (np.ones_like(x), -2.0 * np.ones_like(x)),
        y_laplacian=lambda x, yy: np.zeros_like(x),
        p=lambda x, yy: np.full_like(x, c),
        p_grad=lambda x, yy: (np.zeros_like(x), np.zeros_like(x)),
        p_laplacian=lambda x, yy: np.zeros_like(x))


class TestExactErrorNorms:
    def test_interpolant_of_representable_solution_has_zero_error(self):
        prob = affine_problem()
        mesh = refined(UNIT_SQUARE, 1)
        vx, vy = mesh.vertices[:, 0], mesh.vertices[:, 1]
        sol = Solution(
            scheme="pc",
            y=FeFunction(mesh, P1, prob.y(vx, vy)),
            p=FeFunction(mesh, P1, prob.p(vx, vy)),
            u=FeFunction(mesh, P0, np.zeros(mesh.num_triangles)),
            lam=FeFunction(mesh, P0, np.full(mesh.num_triangles, -0.3)),
            newton_iterations=0, data=prob.data)
        norms = exact_error_norms(mesh, sol, prob)
        for name in ("err_y_h1", "err_y_l2", "err_p_h1", "err_p_l2",
                     "err_u", "err_lam", "total_energy", "total_l2"):
            assert getattr(norms, name) <= 1e-12

    def test_totals_are_root_sum_square(self):
        prob = example1()
        mesh = refined(UNIT_SQUARE, 2)
        from sparseafem.optimality import solve_optimality
        sol = solve_optimality(mesh, prob.data, "pc")
        n = exact_error_norms(mesh, sol, prob)
        assert n.total_energy == pytest.approx(
            np.sqrt(n.err_y_h1 ** 2 + n.err_p_h1 ** 2
                    + n.err_u ** 2 + n.err_lam ** 2), rel=1e-13)
        assert n.total_l2 == pytest.approx(
            np.sqrt(n.err_y_l2 ** 2 + n.err_p_l2 ** 2
                    + n.err_u ** 2 + n.err_lam ** 2), rel=1e-13)

    def test_per_element_sums_match_totals(self):
        prob = example1()
        mesh = refined(UNIT_SQUARE, 2)
        from sparseafem.optimality import solve_optimality
        sol = solve_optimality(mesh, prob.data, "p1")
        n = exact_error_norms(mesh, sol, prob, per_element=True)
        assert n.per_element is not None
        assert np.sqrt(n.per_element["u"].sum()) \
            == pytest.approx(n.err_u, rel=1e-12)
        assert (n.per_element["y_h1"] >= 0).all()

    def test_interpolated_smooth_state_decays_quadratically(self):
        # interpolation error of a smooth function in L2 drops by ~4
        # per uniform halving; exercises the quadrature bookkeeping
        def smooth(x, y):
            return np.sin(np.pi * x) * np.sin(np.pi * y)

        data = ProblemData(alpha=1.0, beta=2.0, a=-1.0, b=1.0,
                           f=lambda x, y: np.zeros_like(x),
                           y_omega=lambda x, y: np.zeros_like(x))
        prob = ManufacturedProblem(
            name="smooth", domain=UNIT_SQUARE, data=data,
            y=smooth,
            y_grad=lambda x, y: (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                                 np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)),
            y_laplacian=lambda x, y: -2 * np.pi ** 2 * smooth(x, y),
            p=lambda x, y: np.zeros_like(x),
            p_grad=lambda x, y: (np.zeros_like(x), np.zeros_like(x)),
            p_laplacian=lambda x, y: np.zeros_like(x))
        errs = []
        for rounds in (2, 4, 6):    # each pair of sweeps halves h
            mesh = refined(UNIT_SQUARE, rounds)
            vx, vy = mesh.vertices[:, 0], mesh.vertices[:, 1]
            sol = Solution(
                scheme="vd",
                y=FeFunction(mesh, P1, smooth(vx, vy)),
                p=FeFunction(mesh, P1, np.zeros(mesh.num_vertices)),
                u=None, lam=None, newton_iterations=0, data=data)
            errs.append(exact_error_norms(mesh, sol, prob).err_y_l2)
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.2)

    def test_domain_mismatch(self):
        prob = example2()
        mesh = refined(UNIT_SQUARE, 1)
        sol = Solution(scheme="vd",
                       y=FeFunction.zero(mesh, P1),
                       p=FeFunction.zero(mesh, P1),
                       u=None, lam=None, newton_iterations=0,
                       data=prob.data)
        with pytest.raises(ProblemsError, match="domain"):
            exact_error_norms(mesh, sol, prob)

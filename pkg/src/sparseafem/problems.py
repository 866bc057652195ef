"""Manufactured benchmark problems with known exact solutions.

Both problems prescribe exact state and adjoint pairs (zero on the
boundary), derive the control and subgradient through the pointwise
law, and then build the source term and tracking target so that the
full optimality system holds:

    f = -lap(y_exact) - u_exact,     y_target = y_exact + lap(p_exact).

Example 1 lives on the unit square with a steep interior layer in the
state; Example 2 lives on the L-shaped domain and carries the corner
singularity rho^(2/3) sin(2 omega / 3) in both state and adjoint.
Closed-form Laplacians are hand-derived and cross-checked against
finite differences in the test suite.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import physical_quadrature
from .mesh import LSHAPE, UNIT_SQUARE
from .optimality import ProblemData, pointwise_control_law
from .quadrature import triangle_rule


class ProblemsError(Exception):
    pass


@dataclass(frozen=True)
class ManufacturedProblem:
    """Problem data plus the exact solution quadruple and derivatives.

    All callables are vectorized over coordinate arrays; gradients
    return a pair (d/dx, d/dy).
    """
    name: str
    domain: str
    data: ProblemData
    y: Callable = field(repr=False)
    y_grad: Callable = field(repr=False)
    y_laplacian: Callable = field(repr=False)
    p: Callable = field(repr=False)
    p_grad: Callable = field(repr=False)
    p_laplacian: Callable = field(repr=False)

    def u(self, x, y):
        return pointwise_control_law(self.p(x, y), self.data)[0]

    def lam(self, x, y):
        return pointwise_control_law(self.p(x, y), self.data)[1]


def example1(alpha=1e-2, beta=0.7):
    """Unit-square problem with an interior layer of width 0.01.

    Exact state x1 x2 (x1-1)(x2-1) atan((x1-0.5)/0.01); exact adjoint
    20 x1 x2 (1-x1)(1-x2); box bounds [-3, 3].
    """
    eps = 0.01

    def _t(x):
        return np.arctan((x - 0.5) / eps)

    def _t1(x):
        s = (x - 0.5) / eps
        return (1.0 / eps) / (1.0 + s * s)

    def _t2(x):
        s = (x - 0.5) / eps
        return (-2.0 * s / eps ** 2) / (1.0 + s * s) ** 2

    def _ax(x):
        return x * (x - 1.0) * _t(x)

    def _ax1(x):
        return (2.0 * x - 1.0) * _t(x) + x * (x - 1.0) * _t1(x)

    def _ax2(x):
        return 2.0 * _t(x) + 2.0 * (2.0 * x - 1.0) * _t1(x) \
            + x * (x - 1.0) * _t2(x)

    def y_exact(x, y):
        return _ax(x) * y * (y - 1.0)

    def y_grad(x, y):
        return _ax1(x) * y * (y - 1.0), _ax(x) * (2.0 * y - 1.0)

    def y_lap(x, y):
        return _ax2(x) * y * (y - 1.0) + 2.0 * _ax(x)

    def p_exact(x, y):
        return 20.0 * x * y * (1.0 - x) * (1.0 - y)

    def p_grad(x, y):
        return (20.0 * (1.0 - 2.0 * x) * y * (1.0 - y),
                20.0 * x * (1.0 - x) * (1.0 - 2.0 * y))

    def p_lap(x, y):
        return -40.0 * (x * (1.0 - x) + y * (1.0 - y))

    data_holder = {}

    def f(x, y):
        u = pointwise_control_law(p_exact(x, y), data_holder["data"])[0]
        return -y_lap(x, y) - u

    def y_omega(x, y):
        return y_exact(x, y) + p_lap(x, y)

    data = ProblemData(alpha=alpha, beta=beta, a=-3.0, b=3.0,
                       f=f, y_omega=y_omega)
    data_holder["data"] = data
    return ManufacturedProblem(
        name="example1", domain=UNIT_SQUARE, data=data,
        y=y_exact, y_grad=y_grad, y_laplacian=y_lap,
        p=p_exact, p_grad=p_grad, p_laplacian=p_lap)


def _polar(x, y):
    """Polar coordinates with the angle in [0, 2 pi), measured so the
    L-shaped domain occupies angles [0, 3 pi / 2]."""
    rho = np.hypot(x, y)
    omega = np.arctan2(y, x)
    omega = np.where(omega < 0.0, omega + 2.0 * np.pi, omega)
    return rho, omega


def _singular_part(x, y):
    """The harmonic function rho^(2/3) sin(2 omega / 3) and its
    gradient; finite everywhere, gradient unbounded at the origin."""
    rho, omega = _polar(x, y)
    s = rho ** (2.0 / 3.0) * np.sin(2.0 * omega / 3.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = (2.0 / 3.0) * rho ** (-1.0 / 3.0)
        sx = -scale * np.sin(omega / 3.0)
        sy = scale * np.cos(omega / 3.0)
    return s, sx, sy


def example2(alpha=1e-3, beta=0.2):
    """L-shaped-domain problem with the rho^(2/3) corner singularity in
    state and adjoint; box bounds [-0.6, 1]."""
    half_pi = 0.5 * np.pi

    def w_y(x, y):
        return 0.2 * np.sin(half_pi * (y + 1.0)) * np.sin(half_pi * (x + 1.0))

    def w_y_grad(x, y):
        return (0.2 * half_pi * np.cos(half_pi * (x + 1.0))
                * np.sin(half_pi * (y + 1.0)),
                0.2 * half_pi * np.sin(half_pi * (x + 1.0))
                * np.cos(half_pi * (y + 1.0)))

    def w_p(x, y):
        return 0.5 * np.cos(half_pi * y) * np.sin(half_pi * (x + 1.0))

    def w_p_grad(x, y):
        return (0.5 * half_pi * np.cos(half_pi * (x + 1.0))
                * np.cos(half_pi * y),
                -0.5 * half_pi * np.sin(half_pi * y)
                * np.sin(half_pi * (x + 1.0)))

    def _make(w, w_grad):
        def value(x, y):
            s, _, _ = _singular_part(x, y)
            return w(x, y) * s

        def grad(x, y):
            s, sx, sy = _singular_part(x, y)
            wx, wy = w_grad(x, y)
            return wx * s + w(x, y) * sx, wy * s + w(x, y) * sy

        def lap(x, y):
            # the singular factor is harmonic, so lap(w s) collapses to
            # s lap(w) + 2 grad(w) . grad(s)
            s, sx, sy = _singular_part(x, y)
            wx, wy = w_grad(x, y)
            return (-half_pi ** 2 * 2.0) * w(x, y) * s \
                + 2.0 * (wx * sx + wy * sy)

        return value, grad, lap

    y_exact, y_grad, y_lap = _make(w_y, w_y_grad)
    p_exact, p_grad, p_lap = _make(w_p, w_p_grad)

    data_holder = {}

    def f(x, y):
        u = pointwise_control_law(p_exact(x, y), data_holder["data"])[0]
        return -y_lap(x, y) - u

    def y_omega(x, y):
        return y_exact(x, y) + p_lap(x, y)

    data = ProblemData(alpha=alpha, beta=beta, a=-0.6, b=1.0,
                       f=f, y_omega=y_omega)
    data_holder["data"] = data
    return ManufacturedProblem(
        name="example2", domain=LSHAPE, data=data,
        y=y_exact, y_grad=y_grad, y_laplacian=y_lap,
        p=p_exact, p_grad=p_grad, p_laplacian=p_lap)


def get_example(key, alpha=None, beta=None):
    """Benchmark lookup by key "1" or "2"; alpha/beta override the
    defaults of the chosen example."""
    key = str(key)
    if key == "1":
        kw = {}
        if alpha is not None:
            kw["alpha"] = alpha
        if beta is not None:
            kw["beta"] = beta
        return example1(**kw)
    if key == "2":
        kw = {}
        if alpha is not None:
            kw["alpha"] = alpha
        if beta is not None:
            kw["beta"] = beta
        return example2(**kw)
    raise ProblemsError(f"unknown example {key!r}; available: 1, 2")


@dataclass(frozen=True)
class ErrorNorms:
    """Exact discretization errors of a solution.

    H1 seminorm and L2 errors of state and adjoint, L2 errors of the
    control and subgradient, and both combined norms: ``total_energy``
    combines H1 state/adjoint seminorms with L2 control/subgradient
    terms; ``total_l2`` uses L2 everywhere.  Optional per-element
    squared contributions support localized comparisons.
    """
    err_y_h1: float
    err_y_l2: float
    err_p_h1: float
    err_p_l2: float
    err_u: float
    err_lam: float
    total_energy: float
    total_l2: float
    per_element: Optional[dict] = None

    def components_for_scheme(self, scheme):
        """(err_y, err_p, err_u, err_lam, total) in the norm in which
        the scheme's analysis is stated: energy-type for "pc", L2 for
        "p1" and "vd"."""
        if scheme == "pc":
            return (self.err_y_h1, self.err_p_h1, self.err_u, self.err_lam,
                    self.total_energy)
        return (self.err_y_l2, self.err_p_l2, self.err_u, self.err_lam,
                self.total_l2)


def exact_error_norms(mesh, solution, problem, degree=19,
                      per_element=False, chunk=8192):
    """Quadrature evaluation of the errors of a discrete solution
    against the manufactured exact solution."""
    if problem.domain != mesh.domain:
        raise ProblemsError(
            f"problem domain {problem.domain!r} does not match mesh "
            f"domain {mesh.domain!r}")
    rule = triangle_rule(degree)
    nt = mesh.num_triangles
    acc = {k: np.zeros(nt) for k in
           ("y_h1", "y_l2", "p_h1", "p_l2", "u", "lam")}
    grads_y = solution.y.gradients()
    grads_p = solution.p.gradients()
    for start in range(0, nt, chunk):
        idx = np.arange(start, min(start + chunk, nt))
        pts, w = physical_quadrature(mesh, rule, idx)
        x, yy = pts[..., 0], pts[..., 1]

        ex_y = problem.y(x, yy)
        dh = solution.y.at_quadrature(rule, idx) - ex_y
        acc["y_l2"][idx] = (w * dh * dh).sum(axis=1)
        gx, gy = problem.y_grad(x, yy)
        dgx = grads_y[idx, 0][:, None] - gx
        dgy = grads_y[idx, 1][:, None] - gy
        acc["y_h1"][idx] = (w * (dgx * dgx + dgy * dgy)).sum(axis=1)

        ex_p = problem.p(x, yy)
        dh = solution.p.at_quadrature(rule, idx) - ex_p
        acc["p_l2"][idx] = (w * dh * dh).sum(axis=1)
        gx, gy = problem.p_grad(x, yy)
        dgx = grads_p[idx, 0][:, None] - gx
        dgy = grads_p[idx, 1][:, None] - gy
        acc["p_h1"][idx] = (w * (dgx * dgx + dgy * dgy)).sum(axis=1)

        ex_u, ex_lam = pointwise_control_law(ex_p, problem.data)
        dh = solution.control_at_quadrature(rule, idx) - ex_u
        acc["u"][idx] = (w * dh * dh).sum(axis=1)
        dh = solution.multiplier_at_quadrature(rule, idx) - ex_lam
        acc["lam"][idx] = (w * dh * dh).sum(axis=1)

    tot = {k: float(v.sum()) for k, v in acc.items()}
    energy = np.sqrt(tot["y_h1"] + tot["p_h1"] + tot["u"] + tot["lam"])
    l2 = np.sqrt(tot["y_l2"] + tot["p_l2"] + tot["u"] + tot["lam"])
    return ErrorNorms(
        err_y_h1=np.sqrt(tot["y_h1"]), err_y_l2=np.sqrt(tot["y_l2"]),
        err_p_h1=np.sqrt(tot["p_h1"]), err_p_l2=np.sqrt(tot["p_l2"]),
        err_u=np.sqrt(tot["u"]), err_lam=np.sqrt(tot["lam"]),
        total_energy=float(energy), total_l2=float(l2),
        per_element=acc if per_element else None)

"""Discrete optimality systems for sparse box-constrained control.

The continuous problem minimizes

    1/2 ||y - y_target||^2 + alpha/2 ||u||^2 + beta ||u||_L1

over controls a <= u <= b (a < 0 < b) subject to -lap(y) = u + f with
homogeneous Dirichlet data.  The optimality conditions reduce to a
pointwise law expressing the control u and the L1 subgradient lam
through the adjoint state p:

    u = Pi_[a,b](-(p + beta*lam)/alpha),   lam = Pi_[-1,1](-p/beta),

and u vanishes exactly where |p| <= beta.  Three discretizations share
one semismooth Newton iteration on the reduced pair (y, p); they differ
only in how the adjoint is averaged before entering the law:

    "pc"  piecewise constant control, cell averages of p,
    "p1"  continuous piecewise linear control with lumped L2/L1 terms,
          weighted vertex averages of p,
    "vd"  variational discretization, p used pointwise (the control is
          not discretized; integrals are evaluated exactly by clipping
          elements along the law's kink lines).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import (P0, P1, P1_H10, FeFunction, assemble_load,
                       assemble_mass, assemble_stiffness, lumped_weights,
                       physical_quadrature)
from .linsolve import factorize_spd, solve_coupled
from .quadrature import triangle_rule

SCHEMES = ("pc", "p1", "vd")
_REGION_DEGREE = 4


class OptimalityError(Exception):
    pass


class NewtonError(OptimalityError):
    """Semismooth Newton failed; carries the last iterate."""

    def __init__(self, message, y=None, p=None, increment=None,
                 iterations=None):
        super().__init__(message)
        self.y = y
        self.p = p
        self.increment = increment
        self.iterations = iterations


@dataclass(frozen=True)
class ProblemData:
    """Problem coefficients: Tikhonov weight alpha, sparsity weight beta,
    box bounds a < 0 < b, source f(x, y), and tracking target
    y_omega(x, y).  Both callables must accept numpy arrays."""
    alpha: float
    beta: float
    a: float
    b: float
    f: Callable
    y_omega: Callable

    def __post_init__(self):
        if not self.alpha > 0:
            raise OptimalityError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise OptimalityError(f"beta must be positive, got {self.beta}")
        if not self.a < 0 < self.b:
            raise OptimalityError(
                f"box bounds must satisfy a < 0 < b, got a={self.a}, "
                f"b={self.b}")

    def thresholds(self):
        """Kink locations of the control law in the adjoint variable,
        strictly increasing."""
        return np.array([-self.beta - self.alpha * self.b, -self.beta,
                         self.beta, self.beta - self.alpha * self.a])


def pointwise_control_law(q, data):
    """Control and subgradient from an adjoint-type value q.

    Returns (u, lam) with u = Pi_[a,b](-(q + beta*lam)/alpha) and
    lam = Pi_[-1,1](-q/beta); vectorized over q.
    """
    q = np.asarray(q, dtype=float)
    al, be = data.alpha, data.beta
    u = (np.maximum(0.0, -q - be) + np.minimum(0.0, -q + be)
         - np.maximum(0.0, -q - be - al * data.b)
         - np.minimum(0.0, -q + be - al * data.a)) / al
    # the identity stays in [a, b] in exact arithmetic; the clamp only
    # removes the rounding spill of the 1/alpha division
    u = np.clip(u, data.a, data.b)
    lam = np.clip(-q / be, -1.0, 1.0)
    return u, lam


def newton_slope(q, data):
    """Generalized derivative du/dq of the control law, in {0, -1/alpha}.

    One-sided conventions at the kinks: d max(0,s) = 1 for s >= 0,
    d min(0,s) = 1 for s <= 0.
    """
    q = np.asarray(q, dtype=float)
    al, be = data.alpha, data.beta
    s = ((-q - be >= 0).astype(float)
         + (-q + be <= 0)
         - (-q - be - al * data.b >= 0)
         - (-q + be - al * data.a <= 0))
    return -s / al


def _band_tables(data):
    """Per-band affine coefficients: on band k the law reads
    u = cu0[k] + cu1[k]*q and lam = cl0[k] + cl1[k]*q."""
    al, be = data.alpha, data.beta
    cu0 = np.array([data.b, -be / al, 0.0, be / al, data.a])
    cu1 = np.array([0.0, -1.0 / al, 0.0, -1.0 / al, 0.0])
    cl0 = np.array([1.0, 1.0, 0.0, -1.0, -1.0])
    cl1 = np.array([0.0, 0.0, -1.0 / be, 0.0, 0.0])
    usign = np.array([1.0, 1.0, 0.0, -1.0, -1.0])
    return cu0, cu1, cl0, cl1, usign


def _band_index(values, thresholds):
    return np.searchsorted(thresholds, values)


def _clip_band(poly, lo, hi):
    """Clip a polygon with per-vertex affine values to lo <= value <= hi."""
    for level, keep_ge in ((lo, True), (hi, False)):
        if not np.isfinite(level):
            continue
        out = []
        npts = len(poly)
        for i in range(npts):
            x0, y0, s0 = poly[i]
            x1, y1, s1 = poly[(i + 1) % npts]
            in0 = s0 >= level if keep_ge else s0 <= level
            in1 = s1 >= level if keep_ge else s1 <= level
            if in0:
                out.append((x0, y0, s0))
            if in0 != in1:
                t = (level - s0) / (s1 - s0)
                out.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0), level))
        poly = out
        if len(poly) < 3:
            return []
    return poly


class ControlRegions:
    """Bandwise decomposition of a triangulation under the control law.

    Each triangle is split along the level lines of the elementwise
    affine adjoint at the law's four kink values; on each resulting
    sub-triangle the projected control and subgradient are affine, so
    their integrals (and integrals of squared differences against
    discrete functions) are evaluated exactly by a fixed low-order rule.
    """

    def __init__(self, mesh, p_vertex_values, data):
        self.mesh = mesh
        self.data = data
        thresholds = data.thresholds()
        tri_p = np.asarray(p_vertex_values)[mesh.triangles]
        lo_band = _band_index(tri_p.min(axis=1), thresholds)
        hi_band = _band_index(tri_p.max(axis=1), thresholds)
        uncut = lo_band == hi_band

        parents = [np.flatnonzero(uncut)]
        coords = [mesh.triangle_coords()[uncut]]
        pvals = [tri_p[uncut]]
        bands = [lo_band[uncut]]

        bounds = np.concatenate([[-np.inf], thresholds, [np.inf]])
        tri_coords = mesh.triangle_coords()
        for k in np.flatnonzero(~uncut):
            base = [(tri_coords[k, i, 0], tri_coords[k, i, 1], tri_p[k, i])
                    for i in range(3)]
            for band in range(int(lo_band[k]), int(hi_band[k]) + 1):
                poly = _clip_band(base, bounds[band], bounds[band + 1])
                for i in range(1, len(poly) - 1):
                    tri = (poly[0], poly[i], poly[i + 1])
                    parents.append(np.array([k]))
                    coords.append(np.array([[v[:2] for v in tri]]))
                    pvals.append(np.array([[v[2] for v in tri]]))
                    bands.append(np.array([band]))
        self.parent = np.concatenate(parents)
        self.coords = np.concatenate(coords)
        self.pvals = np.concatenate(pvals)
        self.band = np.concatenate(bands)

        d1 = self.coords[:, 1] - self.coords[:, 0]
        d2 = self.coords[:, 2] - self.coords[:, 0]
        self.areas = np.maximum(
            0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]), 0.0)

        # inverse affine maps of the parent triangles, for evaluating
        # parent-affine functions at sub-triangle quadrature nodes
        pc = tri_coords[self.parent]
        e1 = pc[:, 1] - pc[:, 0]
        e2 = pc[:, 2] - pc[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self._origin = pc[:, 0]
        self._binv = np.empty((len(det), 2, 2))
        self._binv[:, 0, 0] = e2[:, 1] / det
        self._binv[:, 0, 1] = -e2[:, 0] / det
        self._binv[:, 1, 0] = -e1[:, 1] / det
        self._binv[:, 1, 1] = e1[:, 0] / det

        rule = triangle_rule(_REGION_DEGREE)
        self._rule = rule
        self._phys = np.einsum("qb,sbi->sqi", rule.points, self.coords)
        self._w = rule.weights[None, :] * (2.0 * self.areas)[:, None]
        self._p_at = self.pvals @ rule.points.T
        self._tables = _band_tables(data)

    def control_values(self):
        """(u, lam) at the internal quadrature nodes, shape (ns, nq)."""
        cu0, cu1, cl0, cl1, _ = self._tables
        b = self.band
        u = cu0[b][:, None] + cu1[b][:, None] * self._p_at
        lam = cl0[b][:, None] + cl1[b][:, None] * self._p_at
        return u, lam

    def parent_barycentric(self):
        """Barycentric coordinates of the quadrature nodes with respect
        to the parent triangles, shape (ns, nq, 3)."""
        rel = self._phys - self._origin[:, None, :]
        lam12 = np.einsum("sij,sqj->sqi", self._binv, rel)
        lam0 = 1.0 - lam12.sum(axis=2, keepdims=True)
        return np.concatenate([lam0, lam12], axis=2)

    def reduce_per_element(self, values):
        """Sum w * values into per-parent-triangle totals."""
        out = np.zeros(self.mesh.num_triangles)
        np.add.at(out, self.parent, (self._w * values).sum(axis=1))
        return out

    def integrate(self, values):
        return float((self._w * values).sum())

    def control_rhs(self):
        """Load vector of the projected control against all P1 hats."""
        u, _ = self.control_values()
        bary = self.parent_barycentric()
        contrib = np.einsum("sq,sq,sqk->sk", self._w, u, bary)
        vec = np.zeros(self.mesh.num_vertices)
        np.add.at(vec, self.mesh.triangles[self.parent].ravel(),
                  contrib.ravel())
        return vec

    def coupling_matrix(self):
        """Matrix of the law's generalized slope against P1 hat pairs,
        over all vertices (negative semidefinite)."""
        _, cu1, _, _, _ = self._tables
        xi = cu1[self.band]
        sel = np.flatnonzero(xi != 0.0)
        nv = self.mesh.num_vertices
        if len(sel) == 0:
            return sp.csr_matrix((nv, nv))
        bary = self.parent_barycentric()[sel]
        w = self._w[sel] * xi[sel][:, None]
        local = np.einsum("sq,sqj,sqk->sjk", w, bary, bary)
        tri = self.mesh.triangles[self.parent[sel]]
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)),
                             shape=(nv, nv)).tocsr()

    def control_norms(self):
        """(integral of u^2, integral of |u|), both exact."""
        u, _ = self.control_values()
        usign = self._tables[4][self.band][:, None]
        return (float((self._w * u * u).sum()),
                float((self._w * usign * u).sum()))

    def pair_difference_per_element(self, u_discrete, lam_discrete):
        """Elementwise squared L2 distances between the projected pair
        and a discrete pair (P0 or P1 functions on the parent mesh)."""
        u, lam = self.control_values()
        ud = self._discrete_at_nodes(u_discrete)
        ld = self._discrete_at_nodes(lam_discrete)
        du = self.reduce_per_element((u - ud) ** 2)
        dl = self.reduce_per_element((lam - ld) ** 2)
        return du, dl

    def _discrete_at_nodes(self, f):
        if f.space == P0:
            return f.coeffs[self.parent][:, None]
        vals = f.element_vertex_values()[self.parent]
        return np.einsum("sqk,sk->sq", self.parent_barycentric(), vals)


@dataclass
class Solution:
    """Converged discrete optimality triple.

    ``u`` and ``lam`` are stored functions for the "pc" and "p1"
    schemes; for "vd" they are None because the control is defined
    pointwise through the adjoint (use the evaluation helpers).
    """
    scheme: str
    y: FeFunction
    p: FeFunction
    u: Optional[FeFunction]
    lam: Optional[FeFunction]
    newton_iterations: int
    data: ProblemData = field(repr=False)
    state_residual: float = 0.0
    adjoint_residual: float = 0.0

    def control_at_quadrature(self, rule, triangles=None):
        if self.scheme == "vd":
            p_at = self.p.at_quadrature(rule, triangles)
            return pointwise_control_law(p_at, self.data)[0]
        return self.u.at_quadrature(rule, triangles)

    def multiplier_at_quadrature(self, rule, triangles=None):
        if self.scheme == "vd":
            p_at = self.p.at_quadrature(rule, triangles)
            return pointwise_control_law(p_at, self.data)[1]
        return self.lam.at_quadrature(rule, triangles)


class _PCOps:
    """Piecewise constant control: q = cell averages of p."""

    def __init__(self, mesh, data):
        self.data = data
        nt = mesh.num_triangles
        rows = np.repeat(np.arange(nt), 3)
        cols = mesh.triangles.ravel()
        avg = sp.coo_matrix((np.full(3 * nt, 1.0 / 3.0), (rows, cols)),
                            shape=(nt, mesh.num_vertices)).tocsr()
        self.avg = avg[:, mesh.interior_vertices]
        self.mass_p0 = assemble_mass(mesh, P1_H10, P0)

    def q_values(self, p):
        return self.avg @ p

    def terms(self, p, q):
        u, _ = pointwise_control_law(q, self.data)
        xi = newton_slope(q, self.data)
        bu = self.mass_p0 @ u
        B = (self.mass_p0 @ sp.diags(xi) @ self.avg).tocsr()
        return bu, B

    def finalize(self, mesh, p, q):
        u, lam = pointwise_control_law(q, self.data)
        return FeFunction(mesh, P0, u), FeFunction(mesh, P0, lam)


class _P1Ops:
    """Continuous piecewise linear control with lumped inner products:
    q = weighted vertex averages of p over all vertices."""

    def __init__(self, mesh, data):
        self.data = data
        self.mass_fi = assemble_mass(mesh, P1, P1_H10)
        self.mass_if = self.mass_fi.T.tocsr()
        self.lump = lumped_weights(mesh)

    def q_values(self, p):
        return (self.mass_fi @ p) / self.lump

    def terms(self, p, q):
        u, _ = pointwise_control_law(q, self.data)
        xi = newton_slope(q, self.data)
        bu = self.mass_if @ u
        B = (self.mass_if @ sp.diags(xi / self.lump) @ self.mass_fi).tocsr()
        return bu, B

    def finalize(self, mesh, p, q):
        u, lam = pointwise_control_law(q, self.data)
        return FeFunction(mesh, P1, u), FeFunction(mesh, P1, lam)


class _VDOps:
    """Variational discretization: p enters the law pointwise.  Exact
    integration clips elements along the law's kink lines; the
    quadrature fallback samples the law at a degree-19 rule instead."""

    def __init__(self, mesh, data, exact=True):
        self.mesh = mesh
        self.data = data
        self.exact = exact
        self.interior = mesh.interior_vertices
        if not exact:
            self._rule = triangle_rule(19)
            self._pts, self._w = physical_quadrature(mesh, self._rule)

    def q_values(self, p):
        full = np.zeros(self.mesh.num_vertices)
        full[self.interior] = p
        return full

    def terms(self, p, q):
        if self.exact:
            regions = ControlRegions(self.mesh, q, self.data)
            bu = regions.control_rhs()[self.interior]
            B = regions.coupling_matrix()[self.interior][:, self.interior]
            return bu, B.tocsr()
        rule = self._rule
        p_at = q[self.mesh.triangles] @ rule.points.T
        u, _ = pointwise_control_law(p_at, self.data)
        xi = newton_slope(p_at, self.data)
        contrib = np.einsum("tq,tq,qk->tk", self._w, u, rule.points)
        vec = np.zeros(self.mesh.num_vertices)
        np.add.at(vec, self.mesh.triangles.ravel(), contrib.ravel())
        local = np.einsum("tq,tq,qj,qk->tjk", self._w, xi,
                          rule.points, rule.points)
        tri = self.mesh.triangles
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        B = sp.coo_matrix((local.ravel(), (rows, cols)),
                          shape=(self.mesh.num_vertices,) * 2).tocsr()
        return (vec[self.interior],
                B[self.interior][:, self.interior].tocsr())

    def finalize(self, mesh, p, q):
        return None, None


def _make_ops(mesh, data, scheme, vd_exact):
    if scheme == "pc":
        return _PCOps(mesh, data)
    if scheme == "p1":
        return _P1Ops(mesh, data)
    if scheme == "vd":
        return _VDOps(mesh, data, exact=vd_exact)
    raise OptimalityError(f"unknown scheme {scheme!r}; expected one of "
                          f"{SCHEMES}")


def solve_optimality(mesh, data, scheme, tol=1e-10, max_iter=50,
                     p0=None, y0=None, vd_exact=True):
    """Solve the discrete optimality system by semismooth Newton.

    ``p0``/``y0`` warm-start the iteration (interior-vertex coefficient
    arrays or FeFunctions); the default start is p = 0 with the state
    solved consistently.  Convergence requires the active-set
    classification of the control degrees of freedom to repeat AND the
    relative Newton increment to drop below ``tol``.  Raises NewtonError
    carrying the last iterate if ``max_iter`` is exhausted.
    """
    if mesh.num_interior_vertices == 0:
        raise OptimalityError("mesh has no interior vertices")
    ops = _make_ops(mesh, data, scheme, vd_exact)
    A = assemble_stiffness(mesh)
    M = assemble_mass(mesh, P1_H10, P1_H10)
    lu = factorize_spd(A)
    bf = assemble_load(mesh, data.f, degree=19)
    byom = assemble_load(mesh, data.y_omega, degree=19)
    n = mesh.num_interior_vertices

    def coeffs(v):
        if v is None:
            return None
        arr = v.coeffs if isinstance(v, FeFunction) else np.asarray(v, float)
        if arr.shape != (n,):
            raise OptimalityError("warm-start length does not match the "
                                  "interior vertex count")
        return arr.copy()

    p = coeffs(p0)
    if p is None:
        p = np.zeros(n)
    y = coeffs(y0)
    if y is None:
        bu0, _ = ops.terms(p, ops.q_values(p))
        y = lu.solve(bu0 + bf)

    lintol = max(tol / 10.0, 1e-13)
    prev_class = None
    inc = np.inf
    iters = 0
    while True:
        q = ops.q_values(p)
        cls = _band_index(q, data.thresholds())
        if (prev_class is not None and np.array_equal(cls, prev_class)
                and inc <= tol):
            break
        if iters >= max_iter:
            raise NewtonError(
                f"no convergence in {max_iter} Newton steps "
                f"(last relative increment {inc:.3e})",
                y=y, p=p, increment=inc, iterations=iters)
        bu, B = ops.terms(p, q)
        r1 = A @ y - bu - bf
        r2 = A @ p - M @ y + byom
        dy, dp = solve_coupled(A, B, M, -r1, -r2, tol=lintol, factor=lu)
        y += dy
        p += dp
        scale = max(np.sqrt(y @ y + p @ p), 1e-300)
        inc = np.sqrt(dy @ dy + dp @ dp) / scale
        prev_class = cls
        iters += 1

    bu, _ = ops.terms(p, q)
    state_res = np.linalg.norm(A @ y - bu - bf)
    adj_res = np.linalg.norm(A @ p - M @ y + byom)
    u, lam = ops.finalize(mesh, p, q)
    return Solution(scheme=scheme,
                    y=FeFunction(mesh, P1_H10, y),
                    p=FeFunction(mesh, P1_H10, p),
                    u=u, lam=lam,
                    newton_iterations=iters,
                    data=data,
                    state_residual=float(state_res),
                    adjoint_residual=float(adj_res))


def auxiliary_control_pair(mesh, solution_or_p, data=None):
    """Bandwise-exact projected pair built from a discrete adjoint.

    Accepts a Solution or an adjoint FeFunction; returns ControlRegions,
    whose nodes carry the projected control/subgradient as exactly
    integrable piecewise-affine data.
    """
    if isinstance(solution_or_p, Solution):
        p = solution_or_p.p
        data = solution_or_p.data if data is None else data
    else:
        p = solution_or_p
        if data is None:
            raise OptimalityError("data required when passing a bare adjoint")
    return ControlRegions(mesh, p.vertex_values(), data)


def evaluate_cost(mesh, solution, data, degree=19):
    """Value of the discrete objective at a solution.

    The tracking term integrates with the given quadrature degree; the
    control terms use the scheme's own inner products (exact elementwise
    for "pc", lumped for "p1", bandwise-exact for "vd").
    """
    rule = triangle_rule(degree)
    pts, w = physical_quadrature(mesh, rule)
    y_at = solution.y.at_quadrature(rule)
    diff = y_at - data.y_omega(pts[..., 0], pts[..., 1])
    track = 0.5 * float((w * diff * diff).sum())
    al, be = data.alpha, data.beta
    if solution.scheme == "pc":
        u = solution.u.coeffs
        ctrl = float((mesh.areas * (0.5 * al * u * u + be * np.abs(u))).sum())
    elif solution.scheme == "p1":
        u = solution.u.coeffs
        lump = lumped_weights(mesh)
        ctrl = float((lump * (0.5 * al * u * u + be * np.abs(u))).sum())
    else:
        regions = auxiliary_control_pair(mesh, solution, data)
        sq, ab = regions.control_norms()
        ctrl = 0.5 * al * sq + be * ab
    return track + ctrl

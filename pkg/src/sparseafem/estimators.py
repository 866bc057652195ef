"""Residual a posteriori error indicators and data oscillation.

State and adjoint indicators are standard residual estimators for the
Poisson sub-problems: elementwise interior residuals plus gradient
jumps across interior edges, scaled for either the energy norm
(h^2 / h^1 powers) or the L2 norm (h^4 / h^3).  Control and subgradient
indicators compare the discrete pair against the projected pair rebuilt
from the discrete adjoint; those integrals are exact via the bandwise
decomposition.  Per scheme the total estimator combines

    "pc":  energy-scaled state/adjoint + control + subgradient,
    "p1":  L2-scaled state/adjoint + control + subgradient,
    "vd":  L2-scaled state/adjoint only (the projected pair coincides
           with the implicit control, so those terms vanish identically).
"""

from dataclasses import dataclass

import numpy as np

from .assembly import FeFunction, physical_quadrature
from .optimality import auxiliary_control_pair
from .quadrature import triangle_rule

ENERGY = "energy"
L2 = "l2"
_SCHEME_SCALING = {"pc": ENERGY, "p1": L2, "vd": L2}


class EstimatorError(Exception):
    pass


@dataclass
class IndicatorSet:
    """Per-element squared indicator contributions plus weights.

    ``ey``/``ep`` carry the requested h-power scaling; ``eu``/``elam``
    are unscaled L2 quantities.  ``weights`` orders the four terms
    (state, adjoint, control, subgradient).
    """
    scaling: str
    ey: np.ndarray
    ep: np.ndarray
    eu: np.ndarray
    elam: np.ndarray
    weights: tuple = (1.0, 1.0, 1.0, 1.0)

    def element_totals_squared(self):
        w = self.weights
        return (w[0] * self.ey + w[1] * self.ep
                + w[2] * self.eu + w[3] * self.elam)

    def component_totals(self):
        """Unweighted component estimator values (est_y, est_p, est_u,
        est_lam)."""
        return (float(np.sqrt(self.ey.sum())),
                float(np.sqrt(self.ep.sum())),
                float(np.sqrt(self.eu.sum())),
                float(np.sqrt(self.elam.sum())))


def total_estimator(indicators):
    """Weighted root-sum-square over all elements and components."""
    return float(np.sqrt(indicators.element_totals_squared().sum()))


def _jump_contributions(mesh, grads):
    """Per-element sums of squared-jump L2 norms of a piecewise
    constant gradient field over the element's interior edges."""
    interior = ~mesh.boundary_edge_mask
    et = mesh.edge_triangles[interior]
    ev = mesh.vertices[mesh.edges[interior, 1]] \
        - mesh.vertices[mesh.edges[interior, 0]]
    lengths = np.hypot(ev[:, 0], ev[:, 1])
    normals = np.column_stack([ev[:, 1], -ev[:, 0]]) / lengths[:, None]
    dg = grads[et[:, 0]] - grads[et[:, 1]]
    jumps = (dg * normals).sum(axis=1) ** 2 * lengths
    out = np.zeros(mesh.num_triangles)
    np.add.at(out, et[:, 0], jumps)
    np.add.at(out, et[:, 1], jumps)
    return out


def _residual_norms(mesh, values_at, rule, chunk=8192):
    """Elementwise squared L2 norms of a function given through a
    callback idx -> values at the rule's physical nodes."""
    nt = mesh.num_triangles
    out = np.empty(nt)
    for start in range(0, nt, chunk):
        idx = np.arange(start, min(start + chunk, nt))
        pts, w = physical_quadrature(mesh, rule, idx)
        vals = values_at(idx, pts)
        out[idx] = (w * vals * vals).sum(axis=1)
    return out


def _scaling_powers(scaling):
    if scaling == ENERGY:
        return 2, 1
    if scaling == L2:
        return 4, 3
    raise EstimatorError(f"unknown scaling {scaling!r}; "
                         f"expected {ENERGY!r} or {L2!r}")


def poisson_indicators(mesh, zh, g, scaling=ENERGY, degree=19):
    """Squared residual indicators for a plain Poisson solve
    -lap(z) = g: h^s ||g||_K^2 + h^(s-1) ||jump grad zh||^2."""
    rule = triangle_rule(degree)
    sq, sj = _scaling_powers(scaling)

    def residual(idx, pts):
        return np.broadcast_to(np.asarray(g(pts[..., 0], pts[..., 1]),
                                          dtype=float),
                               pts.shape[:2])

    res = _residual_norms(mesh, residual, rule)
    jumps = _jump_contributions(mesh, zh.gradients())
    return mesh.h ** sq * res + mesh.h ** sj * jumps


def state_adjoint_indicators(mesh, solution, data, scaling, degree=19):
    """Squared indicators (ey, ep) for the state and adjoint equations.

    State residual: discrete control + f; adjoint residual: discrete
    state - tracking target; both plus gradient jump terms.
    """
    rule = triangle_rule(degree)
    sq, sj = _scaling_powers(scaling)

    def state_residual(idx, pts):
        u = solution.control_at_quadrature(rule, idx)
        return u + data.f(pts[..., 0], pts[..., 1])

    def adjoint_residual(idx, pts):
        y = solution.y.at_quadrature(rule, idx)
        return y - data.y_omega(pts[..., 0], pts[..., 1])

    ey = mesh.h ** sq * _residual_norms(mesh, state_residual, rule) \
        + mesh.h ** sj * _jump_contributions(mesh, solution.y.gradients())
    ep = mesh.h ** sq * _residual_norms(mesh, adjoint_residual, rule) \
        + mesh.h ** sj * _jump_contributions(mesh, solution.p.gradients())
    return ey, ep


def control_subgradient_indicators(mesh, solution, data):
    """Squared L2 distances, per element, between the discrete control
    and subgradient and the pair projected from the discrete adjoint.

    For the variational discretization these vanish identically (the
    projected pair IS the implicit control pair) and zeros are
    returned.
    """
    nt = mesh.num_triangles
    if solution.scheme == "vd":
        return np.zeros(nt), np.zeros(nt)
    regions = auxiliary_control_pair(mesh, solution, data)
    return regions.pair_difference_per_element(solution.u, solution.lam)


def estimator_for_scheme(mesh, solution, data, weights=(1.0, 1.0, 1.0, 1.0)):
    """The scheme's total indicator set: energy scaling for "pc", L2
    scaling for "p1"/"vd"; control terms included except for "vd"."""
    scaling = _SCHEME_SCALING[solution.scheme]
    ey, ep = state_adjoint_indicators(mesh, solution, data, scaling)
    eu, elam = control_subgradient_indicators(mesh, solution, data)
    return IndicatorSet(scaling=scaling, ey=ey, ep=ep, eu=eu, elam=elam,
                        weights=tuple(float(w) for w in weights))


def data_oscillation(mesh, g, kappa=0, degree=19):
    """Data oscillation sum_K h_K^(2(kappa+1)) ||g - proj_K g||_K^2,
    with an elementwise L2 projection onto polynomials of degree kappa.

    Returns the square root of the sum.  kappa in {0, 1}.
    """
    if kappa not in (0, 1):
        raise EstimatorError("kappa must be 0 or 1")
    rule = triangle_rule(degree)
    pts, w = physical_quadrature(mesh, rule)
    vals = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, w.shape)
    if kappa == 0:
        mean = (w * vals).sum(axis=1) / mesh.areas
        resid = vals - mean[:, None]
    else:
        centroid = mesh.triangle_coords().mean(axis=1)
        basis = np.stack([np.ones_like(w),
                          pts[..., 0] - centroid[:, None, 0],
                          pts[..., 1] - centroid[:, None, 1]], axis=2)
        gram = np.einsum("tq,tqi,tqj->tij", w, basis, basis)
        rhs = np.einsum("tq,tq,tqi->ti", w, vals, basis)
        coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
        resid = vals - np.einsum("tqi,ti->tq", basis, coef)
    local = (w * resid * resid).sum(axis=1)
    return float(np.sqrt((mesh.h ** (2 * (kappa + 1)) * local).sum()))

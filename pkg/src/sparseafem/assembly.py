"""Finite element spaces and matrix/vector assembly.

Three spaces on a triangulation: continuous piecewise linears over all
vertices ("p1"), the same with zero boundary values indexed by interior
vertices ("p1_h10"), and piecewise constants indexed by triangles
("p0").  Stiffness and mass matrices use exact closed-form element
integrals; load vectors use quadrature of chosen degree.  Matrices are
scipy CSR with sorted, duplicate-free column indices.
"""

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .quadrature import triangle_rule

P0 = "p0"
P1 = "p1"
P1_H10 = "p1_h10"
_SPACES = (P0, P1, P1_H10)


class AssemblyError(Exception):
    pass


def space_dimension(mesh, space):
    if space == P0:
        return mesh.num_triangles
    if space == P1:
        return mesh.num_vertices
    if space == P1_H10:
        return mesh.num_interior_vertices
    raise AssemblyError(f"unknown space {space!r}")


class FeFunction:
    """Coefficient vector attached to a mesh and a space.

    For "p1_h10" the coefficients are the interior vertex values; the
    boundary values are identically zero.
    """

    def __init__(self, mesh, space, coeffs):
        if space not in _SPACES:
            raise AssemblyError(f"unknown space {space!r}")
        coeffs = np.asarray(coeffs, dtype=float)
        n = space_dimension(mesh, space)
        if coeffs.shape != (n,):
            raise AssemblyError(
                f"coefficient length {coeffs.shape} does not match "
                f"dim {space} = {n}")
        self.mesh = mesh
        self.space = space
        self.coeffs = coeffs

    @classmethod
    def zero(cls, mesh, space):
        return cls(mesh, space, np.zeros(space_dimension(mesh, space)))

    def vertex_values(self):
        """Values at all mesh vertices (P1-type spaces only)."""
        if self.space == P1:
            return self.coeffs
        if self.space == P1_H10:
            full = np.zeros(self.mesh.num_vertices)
            full[self.mesh.interior_vertices] = self.coeffs
            return full
        raise AssemblyError("vertex_values undefined for p0")

    def element_vertex_values(self):
        """Per-triangle corner values, shape (nt, 3)."""
        return self.vertex_values()[self.mesh.triangles]

    def gradients(self):
        """Per-triangle gradient, shape (nt, 2); constant on each element."""
        b, c = _gradient_coefficients(self.mesh)
        vals = self.element_vertex_values()
        gx = (vals * b).sum(axis=1)
        gy = (vals * c).sum(axis=1)
        return np.column_stack([gx, gy])

    def at_quadrature(self, rule, triangles=None):
        """Values at the rule's nodes on each (or selected) triangle."""
        if self.space == P0:
            vals = self.coeffs if triangles is None else self.coeffs[triangles]
            return np.broadcast_to(vals[:, None],
                                   (len(vals), len(rule.weights))).copy()
        vv = self.element_vertex_values()
        if triangles is not None:
            vv = vv[triangles]
        return vv @ rule.points.T


def _gradient_coefficients(mesh):
    """Coefficients of the P1 basis gradients: grad(phi_k) = (b_k, c_k)."""
    coords = mesh.triangle_coords()
    x = coords[..., 0]
    y = coords[..., 1]
    twoA = (2.0 * mesh.areas)[:, None]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0],
                  y[:, 0] - y[:, 1]], axis=1) / twoA
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2],
                  x[:, 1] - x[:, 0]], axis=1) / twoA
    return b, c


def local_stiffness(coords):
    """Element stiffness matrix for one triangle with rows ``coords`` (3,2)."""
    coords = np.asarray(coords, dtype=float)
    x, y = coords[:, 0], coords[:, 1]
    area = 0.5 * ((x[1] - x[0]) * (y[2] - y[0])
                  - (y[1] - y[0]) * (x[2] - x[0]))
    if area <= 0:
        raise AssemblyError("clockwise or degenerate triangle")
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    return (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)


def local_mass_p1(area):
    """Element P1 mass matrix for a triangle of given area."""
    return (area / 12.0) * (np.ones((3, 3)) + np.eye(3))


def assemble_stiffness(mesh, reduce=True):
    """Stiffness matrix of the Laplacian; ``reduce`` drops boundary rows
    and columns (homogeneous Dirichlet by elimination)."""
    b, c = _gradient_coefficients(mesh)
    area = mesh.areas[:, None, None]
    local = (b[:, :, None] * b[:, None, :]
             + c[:, :, None] * c[:, None, :]) * area
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)),
                      shape=(mesh.num_vertices, mesh.num_vertices)).tocsr()
    if reduce:
        idx = mesh.interior_vertices
        A = A[idx][:, idx]
    A.sum_duplicates()
    A.sort_indices()
    return A.tocsr()


def _dof_map(mesh, space):
    """(element dof indices (nt, k), global dimension) for a space."""
    if space == P0:
        return np.arange(mesh.num_triangles)[:, None], mesh.num_triangles
    return mesh.triangles, mesh.num_vertices


def assemble_mass(mesh, rows=P1, cols=P1):
    """Mass matrix between two spaces, exact element integrals.

    Entry (i, j) is the integral of chi_i * phi_j with chi from the row
    space and phi from the column space.  Rows or columns in "p1_h10"
    are the interior-vertex slices of the full "p1" assembly.
    """
    for s in (rows, cols):
        if s not in _SPACES:
            raise AssemblyError(f"unknown space {s!r}")
    rspace = P1 if rows == P1_H10 else rows
    cspace = P1 if cols == P1_H10 else cols
    rdofs, nr = _dof_map(mesh, rspace)
    cdofs, nc = _dof_map(mesh, cspace)
    a = mesh.areas
    if rspace == P1 and cspace == P1:
        local = local_mass_p1(1.0)[None, :, :] * a[:, None, None]
    elif rspace == P0 and cspace == P0:
        local = a[:, None, None]
    else:
        local = np.full((len(a), 1, 3), 1.0 / 3.0) * a[:, None, None]
        if rspace == P1:            # p1 rows, p0 cols
            local = local.transpose(0, 2, 1)
    kr = rdofs.shape[1]
    kc = cdofs.shape[1]
    r = np.repeat(rdofs, kc, axis=1).ravel()
    c = np.tile(cdofs, (1, kr)).ravel()
    M = sp.coo_matrix((local.ravel(), (r, c)), shape=(nr, nc)).tocsr()
    if rows == P1_H10:
        M = M[mesh.interior_vertices]
    if cols == P1_H10:
        M = M[:, mesh.interior_vertices]
    M.sum_duplicates()
    M.sort_indices()
    return M.tocsr()


def physical_quadrature(mesh, rule, triangles=None):
    """Physical node coordinates and scaled weights for a triangle rule.

    Returns (points (nt, nq, 2), weights (nt, nq)); the weights already
    include the element areas, so sums of w * f(points) are integrals.
    """
    coords = mesh.triangle_coords()
    areas = mesh.areas
    if triangles is not None:
        coords = coords[triangles]
        areas = areas[triangles]
    pts = np.einsum("qb,tbi->tqi", rule.points, coords)
    w = rule.weights[None, :] * (2.0 * areas)[:, None]
    return pts, w


def assemble_load(mesh, g, degree=19, reduce=True):
    """Load vector of a scalar function against the P1 basis.

    ``g`` is a vectorized callable g(x, y).  ``reduce`` restricts to
    interior vertices.  Raises AssemblyError on non-finite samples,
    naming the offending element.
    """
    rule = triangle_rule(degree)
    pts, w = physical_quadrature(mesh, rule)
    vals = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, w.shape)
    if not np.isfinite(vals).all():
        bad = int(np.argwhere(~np.isfinite(vals).all(axis=1))[0, 0])
        raise AssemblyError(f"non-finite load sample in element {bad}")
    contrib = np.einsum("tq,tq,qk->tk", w, vals, rule.points)
    vec = np.zeros(mesh.num_vertices)
    np.add.at(vec, mesh.triangles.ravel(), contrib.ravel())
    return vec[mesh.interior_vertices] if reduce else vec


def lumped_weights(mesh):
    """Lumped P1 mass weights: integral of each hat function, all vertices."""
    w = np.zeros(mesh.num_vertices)
    np.add.at(w, mesh.triangles.ravel(),
              np.repeat(mesh.areas / 3.0, 3))
    return w


def cell_average(f):
    """Elementwise average of a P1-type function, as a P0 function."""
    if f.space == P0:
        return f
    return FeFunction(f.mesh, P0, f.element_vertex_values().mean(axis=1))


def quasi_interpolate(mesh, w, degree=19):
    """Weighted vertex averages theta_v(w) = int(w phi_v) / int(phi_v).

    ``w`` may be an FeFunction (integrated exactly) or a vectorized
    callable (integrated with the given quadrature degree).  Returns a
    P1 function over all vertices.  Reproduces P1 functions exactly at
    interior vertices of a conforming patch only in the mean sense, but
    reproduces global constants exactly.
    """
    lump = lumped_weights(mesh)
    if isinstance(w, FeFunction):
        if w.space == P0:
            numer = assemble_mass(mesh, P1, P0) @ w.coeffs
        else:
            numer = assemble_mass(mesh, P1, P1) @ w.vertex_values()
    else:
        numer = assemble_load(mesh, w, degree=degree, reduce=False)
    return FeFunction(mesh, P1, numer / lump)

"""Conforming triangulations with longest-edge bisection refinement.

A mesh is an immutable pair of arrays (vertices, triangles) plus derived
edge topology.  Refinement never mutates a mesh; it returns a new one.
Supported computational domains are the unit square (0,1)^2 and the
L-shaped domain (-1,1)^2 minus the closed quadrant [0,1) x (-1,0].
"""

import numpy as np

UNIT_SQUARE = "unit_square"
LSHAPE = "lshape"

_GEOMETRY_TOL = 1e-12


class MeshError(Exception):
    """Raised for invalid mesh input or broken mesh invariants."""


def _as_edge(u, v):
    return (u, v) if u < v else (v, u)


class Mesh:
    """Conforming triangle mesh.

    Parameters
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Vertex indices per triangle, counterclockwise.
    domain : str or None
        One of UNIT_SQUARE, LSHAPE, or None for free-form meshes.
    generation : int
        Number of refinement rounds since the initial mesh.

    Derived edge data (edges, boundary flags, interior vertices) is built
    once in the constructor; all arrays are marked read-only.
    """

    def __init__(self, vertices, triangles, domain=None, generation=0,
                 bisection_parents=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be an (nt, 3) array")
        if triangles.size and (triangles.min() < 0
                               or triangles.max() >= len(vertices)):
            raise MeshError("triangle vertex index out of range")
        self.vertices = vertices
        self.triangles = triangles
        self.domain = domain
        self.generation = generation
        # rows (child_vertex, parent_a, parent_b) for vertices created by the
        # refinement call that produced this mesh; used for P1 prolongation
        self.bisection_parents = (np.zeros((0, 3), dtype=np.int64)
                                  if bisection_parents is None
                                  else np.asarray(bisection_parents,
                                                  dtype=np.int64))

        coords = vertices[triangles]                      # (nt, 3, 2)
        d1 = coords[:, 1] - coords[:, 0]
        d2 = coords[:, 2] - coords[:, 0]
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(signed <= 0):
            k = int(np.argmax(signed <= 0))
            raise MeshError(f"triangle {k} is degenerate or clockwise "
                            f"(signed area {signed[k]:g})")
        self.areas = signed

        # unique undirected edges; local edge k sits opposite local vertex k
        raw = np.concatenate([triangles[:, [1, 2]],
                              triangles[:, [2, 0]],
                              triangles[:, [0, 1]]], axis=0)
        raw_sorted = np.sort(raw, axis=1)
        self.edges, inverse, counts = np.unique(
            raw_sorted, axis=0, return_inverse=True, return_counts=True)
        if counts.max(initial=0) > 2:
            raise MeshError("an edge is shared by more than two triangles")
        nt = len(triangles)
        self.triangle_edges = inverse.reshape(3, nt).T    # (nt, 3)
        self.boundary_edge_mask = counts == 1

        # incident triangles per edge, -1 where absent
        ne = len(self.edges)
        edge_tris = np.full((ne, 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        tri_of_entry = np.tile(np.arange(nt), 3)[order]
        eids = inverse[order]
        first = np.ones(ne, dtype=bool)
        slot = np.zeros(len(eids), dtype=np.int64)
        # entries sorted by edge id; within each edge the first entry fills
        # slot 0, the second slot 1
        starts = np.searchsorted(eids, np.arange(ne))
        slot[:] = np.arange(len(eids)) - starts[eids]
        edge_tris[eids, slot] = tri_of_entry
        self.edge_triangles = edge_tris
        del first

        evec = vertices[self.edges[:, 1]] - vertices[self.edges[:, 0]]
        self.edge_lengths = np.hypot(evec[:, 0], evec[:, 1])
        self.h = self.edge_lengths[self.triangle_edges].max(axis=1)

        bmask = np.zeros(len(vertices), dtype=bool)
        bmask[self.edges[self.boundary_edge_mask]] = True
        self.boundary_vertex_mask = bmask
        self.interior_vertices = np.flatnonzero(~bmask)

        for a in (self.vertices, self.triangles, self.areas, self.edges,
                  self.triangle_edges, self.edge_triangles, self.edge_lengths,
                  self.h, self.boundary_vertex_mask, self.interior_vertices):
            a.flags.writeable = False

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def num_interior_vertices(self):
        return len(self.interior_vertices)

    def triangle_coords(self):
        """Vertex coordinates per triangle, shape (nt, 3, 2)."""
        return self.vertices[self.triangles]

    def min_angle(self):
        """Smallest interior angle over all triangles, in degrees."""
        coords = self.triangle_coords()
        angles = np.empty((self.num_triangles, 3))
        for k in range(3):
            u = coords[:, (k + 1) % 3] - coords[:, k]
            v = coords[:, (k + 2) % 3] - coords[:, k]
            cosang = (u * v).sum(axis=1) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles[:, k] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return float(angles.min())

    def validate(self, min_angle_floor=None):
        """Check conformity, orientation, and boundary geometry.

        Raises MeshError on violation.  Positive areas and the two-triangle
        edge bound were already enforced in the constructor; this re-checks
        interior/boundary classification and, for the named domains, that
        boundary edges actually lie on the domain boundary.
        """
        interior = ~self.boundary_edge_mask
        if np.any(self.edge_triangles[interior] < 0):
            raise MeshError("interior edge with fewer than two triangles")
        if np.any(self.edge_triangles[self.boundary_edge_mask, 1] >= 0):
            raise MeshError("boundary edge with two incident triangles")
        if self.domain in (UNIT_SQUARE, LSHAPE):
            be = self.edges[self.boundary_edge_mask]
            ends = self.vertices[be]                      # (nb, 2, 2)
            mids = ends.mean(axis=1)
            for pts in (ends[:, 0], ends[:, 1], mids):
                ok = _on_domain_boundary(self.domain, pts)
                if not ok.all():
                    bad = int(np.argmin(ok))
                    raise MeshError(
                        f"boundary edge {bad} does not lie on the domain "
                        f"boundary (point {pts[bad]})")
        if min_angle_floor is not None and self.min_angle() < min_angle_floor:
            raise MeshError(
                f"minimal angle {self.min_angle():g} below {min_angle_floor:g}")

    def dump(self, f):
        """Write the mesh in plain text.

        Format: header line ``V T E`` with the vertex/triangle/edge counts,
        then one line ``x y boundary_flag`` per vertex, then one line
        ``v0 v1 v2`` per triangle.
        """
        close = False
        if isinstance(f, (str, bytes)):
            f = open(f, "w")
            close = True
        try:
            f.write(f"{self.num_vertices} {self.num_triangles} "
                    f"{self.num_edges}\n")
            for (x, y), flag in zip(self.vertices, self.boundary_vertex_mask):
                f.write(f"{x:.17g} {y:.17g} {int(flag)}\n")
            for a, b, c in self.triangles:
                f.write(f"{a} {b} {c}\n")
        finally:
            if close:
                f.close()


def _on_domain_boundary(domain, pts):
    x, y = pts[:, 0], pts[:, 1]
    t = _GEOMETRY_TOL
    if domain == UNIT_SQUARE:
        inside = (x > -t) & (x < 1 + t) & (y > -t) & (y < 1 + t)
        on_line = (np.abs(x) < t) | (np.abs(x - 1) < t) \
            | (np.abs(y) < t) | (np.abs(y - 1) < t)
        return inside & on_line
    if domain == LSHAPE:
        inside = (x > -1 - t) & (x < 1 + t) & (y > -1 - t) & (y < 1 + t)
        outer = (np.abs(x + 1) < t) | (np.abs(y + 1) < t) \
            | (np.abs(x - 1) < t) | (np.abs(y - 1) < t)
        reentrant = (np.abs(y) < t) & (x > -t) \
            | (np.abs(x) < t) & (y < t)
        return inside & (outer | reentrant)
    raise MeshError(f"unknown domain {domain!r}")


def _squares_to_mesh(squares, spacing):
    """Triangulate axis-aligned cells, each split by its lower-left to
    upper-right diagonal.  ``squares`` lists lower-left cell corners."""
    vid = {}
    vertices = []

    def vertex(px, py):
        key = (px, py)
        if key not in vid:
            vid[key] = len(vertices)
            vertices.append((px, py))
        return vid[key]

    triangles = []
    for (cx, cy) in squares:
        ll = vertex(cx, cy)
        lr = vertex(cx + spacing, cy)
        ur = vertex(cx + spacing, cy + spacing)
        ul = vertex(cx, cy + spacing)
        triangles.append((ll, lr, ur))
        triangles.append((ll, ur, ul))
    return np.array(vertices, dtype=float), np.array(triangles, dtype=np.int64)


def make_initial_mesh(domain):
    """Coarse initial triangulation of a named domain.

    Unit square: 2x2 cells, 8 right isosceles triangles, one interior
    vertex.  L-shape: the same cell pattern on each of the three unit
    squares, 24 triangles, with the reentrant corner (0, 0) as a vertex.
    """
    if domain == UNIT_SQUARE:
        cells = [(i * 0.5, j * 0.5) for j in range(2) for i in range(2)]
        spacing = 0.5
    elif domain == LSHAPE:
        cells = []
        for (ox, oy) in ((-1.0, -1.0), (-1.0, 0.0), (0.0, 0.0)):
            cells.extend((ox + i * 0.5, oy + j * 0.5)
                         for j in range(2) for i in range(2))
        spacing = 0.5
    else:
        raise MeshError(f"unknown domain {domain!r}; "
                        f"expected {UNIT_SQUARE!r} or {LSHAPE!r}")
    vertices, triangles = _squares_to_mesh(cells, spacing)
    return Mesh(vertices, triangles, domain=domain)


def refine_bisection(mesh, marked):
    """Bisect the marked triangles and restore conformity.

    Every marked triangle is bisected across its longest edge at its exact
    midpoint; neighbors are refined recursively (Rivara closure) so the
    result is again conforming.  Ties in edge length are broken by the
    smaller sorted vertex-index pair, which makes the procedure
    deterministic and the propagation chains finite.

    Returns a new Mesh; with no marked triangles the input mesh itself is
    returned unchanged.
    """
    marked = sorted({int(k) for k in marked})
    if not marked:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.num_triangles:
        raise MeshError("marked triangle index out of range")

    verts = [tuple(v) for v in mesh.vertices]
    tris = {i: tuple(t) for i, t in enumerate(mesh.triangles)}
    edge_map = {}
    for tid, (a, b, c) in tris.items():
        for e in (_as_edge(b, c), _as_edge(c, a), _as_edge(a, b)):
            edge_map.setdefault(e, set()).add(tid)
    midpoints = {}
    parents = []
    next_id = mesh.num_triangles

    def longest_edge(tri):
        a, b, c = tri
        best = None
        for (u, v) in ((b, c), (c, a), (a, b)):
            e = _as_edge(u, v)
            dx = verts[u][0] - verts[v][0]
            dy = verts[u][1] - verts[v][1]
            d = dx * dx + dy * dy
            if best is None or d > best[0] or (d == best[0] and e < best[1]):
                best = (d, e)
        return best[1]

    def split(tid, e):
        nonlocal next_id
        tri = tris.pop(tid)
        a, b, c = tri
        for (w, u, v) in ((a, b, c), (b, c, a), (c, a, b)):
            if _as_edge(u, v) == e:
                break
        m = midpoints.get(e)
        if m is None:
            mx = 0.5 * (verts[u][0] + verts[v][0])
            my = 0.5 * (verts[u][1] + verts[v][1])
            verts.append((mx, my))
            m = len(verts) - 1
            midpoints[e] = m
            parents.append((m, e[0], e[1]))
        for (p, q) in ((a, b), (b, c), (c, a)):
            edge_map[_as_edge(p, q)].discard(tid)
        for child in ((w, u, m), (w, m, v)):
            tris[next_id] = child
            ca, cb, cc = child
            for pe in (_as_edge(cb, cc), _as_edge(cc, ca), _as_edge(ca, cb)):
                edge_map.setdefault(pe, set()).add(next_id)
            next_id += 1

    def refine_one(tid0):
        stack = [tid0]
        while stack:
            t = stack[-1]
            if t not in tris:
                stack.pop()
                continue
            e = longest_edge(tris[t])
            others = edge_map.get(e, set()) - {t}
            if not others:
                split(t, e)
                stack.pop()
            else:
                (nb,) = tuple(others)
                if longest_edge(tris[nb]) == e:
                    split(t, e)
                    split(nb, e)
                    stack.pop()
                else:
                    stack.append(nb)

    for k in marked:
        if k in tris:
            refine_one(k)

    order = sorted(tris)
    new_tris = np.array([tris[i] for i in order], dtype=np.int64)
    return Mesh(np.array(verts), new_tris, domain=mesh.domain,
                generation=mesh.generation + 1,
                bisection_parents=np.array(parents, dtype=np.int64))


def element_patch(mesh, k):
    """Triangles sharing an interior edge with triangle ``k``, plus ``k``.

    A triangle whose edges are all on the boundary has the singleton patch
    {k}.
    """
    if not 0 <= k < mesh.num_triangles:
        raise MeshError(f"triangle index {k} out of range")
    patch = {int(k)}
    for eid in mesh.triangle_edges[k]:
        if mesh.boundary_edge_mask[eid]:
            continue
        patch.update(int(t) for t in mesh.edge_triangles[eid] if t >= 0)
    return patch

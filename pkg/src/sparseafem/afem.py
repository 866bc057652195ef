"""Marking, degrees-of-freedom accounting, and the adaptive
solve-estimate-mark-refine loop.

``adaptive_solve`` drives the full pipeline on a manufactured problem
(with exact errors) or on bare problem data (estimator only).  Uniform
mode marks every element each round; adaptive mode marks elements
whose indicator exceeds half the maximum.
"""

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimators import estimator_for_scheme
from .mesh import UNIT_SQUARE, make_initial_mesh, refine_bisection
from .optimality import SCHEMES, NewtonError, solve_optimality
from .problems import ManufacturedProblem, exact_error_norms

UNIFORM = "uniform"
ADAPTIVE = "adaptive"


class AfemError(Exception):
    pass


@dataclass
class ConvergenceRecord:
    """One row of a convergence study.

    Error fields are NaN when no exact solution is available.  Totals
    are weighted root-sum-squares of the four components; effectivity
    is est_total / err_total in the scheme's norm.
    """
    step: int
    ndof: int
    h_max: float
    err_y: float
    err_p: float
    err_u: float
    err_lam: float
    err_total: float
    est_y: float
    est_p: float
    est_u: float
    est_lam: float
    est_total: float
    effectivity: float
    newton_iterations: int
    wall_time_ms: float


@dataclass
class AdaptiveResult:
    records: list
    converged: bool
    failure: Optional[NewtonError]
    mesh: object
    solution: object


def mark_max_strategy(indicators, fraction=0.5):
    """Elements whose indicator strictly exceeds ``fraction`` times the
    maximum.  All-zero indicators give an empty set."""
    ind = np.asarray(indicators, dtype=float)
    if ind.size == 0:
        raise AfemError("marking needs at least one element")
    return np.nonzero(ind > fraction * ind.max())[0]


def count_ndof(mesh, scheme):
    """Scheme degrees of freedom: state + adjoint interior vertices,
    plus the control unknowns (elements for "pc", all interior vertices
    again for "p1", none for "vd")."""
    if scheme not in SCHEMES:
        raise AfemError(f"unknown scheme {scheme!r}")
    dimv = mesh.num_interior_vertices
    if scheme == "pc":
        return 2 * dimv + mesh.num_triangles
    if scheme == "p1":
        return 3 * dimv
    return 2 * dimv


def prolong_vertex_values(mesh, values):
    """Carry vertex values to a mesh produced by ``refine_bisection``:
    surviving vertices keep their value, bisection midpoints average
    their edge endpoints.  Exact for functions affine on split edges."""
    values = np.asarray(values, dtype=float)
    n_old = mesh.num_vertices - len(mesh.bisection_parents)
    if values.shape != (n_old,):
        raise AfemError("value array does not match the parent mesh")
    out = np.empty(mesh.num_vertices)
    out[:n_old] = values
    # parents always precede children, so one in-order pass suffices
    for child, pa, pb in mesh.bisection_parents:
        out[child] = 0.5 * (out[pa] + out[pb])
    return out


def _weighted_total(components, weights):
    c = np.asarray(components, dtype=float)
    return float(np.sqrt((np.asarray(weights) * c * c).sum()))


def adaptive_solve(problem, scheme, mode=ADAPTIVE, max_ndof=10000,
                   weights=(1.0, 1.0, 1.0, 1.0), tol=1e-10,
                   mark_fraction=0.5, domain=None, vd_exact=True,
                   on_step=None):
    """Run the solve-estimate-mark-refine loop until the recorded ndof
    exceeds ``max_ndof`` (the final record overshoots by one round).

    ``problem`` is a ManufacturedProblem (exact errors recorded) or a
    bare ProblemData (pass ``domain``; error fields are NaN).  Newton
    is warm-started across meshes by interpolating the previous state
    and adjoint.  ``on_step(step, mesh, solution, indicators, record)``
    is called after each record.  A solver failure aborts the loop and
    is returned in ``AdaptiveResult.failure`` together with the records
    so far; an empty marked set stops with ``converged`` set.
    """
    if isinstance(problem, ManufacturedProblem):
        data, exact = problem.data, problem
        dom = problem.domain
    else:
        data, exact = problem, None
        dom = UNIT_SQUARE if domain is None else domain
    if mode not in (UNIFORM, ADAPTIVE):
        raise AfemError(f"unknown mode {mode!r}")

    mesh = make_initial_mesh(dom)
    if count_ndof(mesh, scheme) >= max_ndof:
        raise AfemError("max_ndof must exceed the initial mesh's "
                        f"{count_ndof(mesh, scheme)} degrees of freedom")

    records = []
    converged = False
    failure = None
    solution = None
    y0 = p0 = None
    step = 0
    while True:
        t0 = time.perf_counter()
        try:
            solution = solve_optimality(mesh, data, scheme, tol=tol,
                                        p0=p0, y0=y0, vd_exact=vd_exact)
        except NewtonError as err:
            failure = err
            break
        indicators = estimator_for_scheme(mesh, solution, data, weights)
        est_y, est_p, est_u, est_lam = indicators.component_totals()
        totals_sq = indicators.element_totals_squared()
        est_total = float(np.sqrt(totals_sq.sum()))
        elapsed_ms = (time.perf_counter() - t0) * 1e3

        if exact is not None:
            norms = exact_error_norms(mesh, solution, exact)
            err_y, err_p, err_u, err_lam, _ = \
                norms.components_for_scheme(scheme)
            err_total = _weighted_total((err_y, err_p, err_u, err_lam),
                                        weights)
            effectivity = est_total / err_total if err_total > 0 \
                else float("inf")
        else:
            err_y = err_p = err_u = err_lam = float("nan")
            err_total = effectivity = float("nan")

        record = ConvergenceRecord(
            step=step, ndof=count_ndof(mesh, scheme),
            h_max=float(mesh.h.max()),
            err_y=err_y, err_p=err_p, err_u=err_u, err_lam=err_lam,
            err_total=err_total,
            est_y=est_y, est_p=est_p, est_u=est_u, est_lam=est_lam,
            est_total=est_total, effectivity=effectivity,
            newton_iterations=solution.newton_iterations,
            wall_time_ms=elapsed_ms)
        records.append(record)
        if on_step is not None:
            on_step(step, mesh, solution, indicators, record)
        if record.ndof > max_ndof:
            break

        if mode == UNIFORM:
            marked = np.arange(mesh.num_triangles)
        else:
            marked = mark_max_strategy(np.sqrt(totals_sq), mark_fraction)
            if marked.size == 0:
                converged = True
                break
        new_mesh = refine_bisection(mesh, marked)
        y0 = prolong_vertex_values(
            new_mesh, solution.y.vertex_values())[new_mesh.interior_vertices]
        p0 = prolong_vertex_values(
            new_mesh, solution.p.vertex_values())[new_mesh.interior_vertices]
        mesh = new_mesh
        step += 1

    return AdaptiveResult(records=records, converged=converged,
                          failure=failure, mesh=mesh, solution=solution)

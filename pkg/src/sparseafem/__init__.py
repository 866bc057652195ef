"""Adaptive finite elements for sparse optimal control of the Poisson
equation.

The package solves

    min  1/2 ||y - y_Omega||^2 + alpha/2 ||u||^2 + beta ||u||_L1
    s.t. -lap(y) = u + f,  y = 0 on the boundary,  a <= u <= b,

with piecewise constant ("pc"), piecewise linear ("p1", lumped L1 term)
or variational ("vd") control discretizations, residual a posteriori
error estimation, and adaptive mesh refinement driven by a maximum
marking strategy.
"""

from .afem import (AdaptiveResult, ConvergenceRecord, adaptive_solve,
                   count_ndof, mark_max_strategy)
from .assembly import (AssemblyError, FeFunction, assemble_load,
                       assemble_mass, assemble_stiffness, cell_average,
                       lumped_weights, quasi_interpolate)
from .estimators import (EstimatorError, IndicatorSet, data_oscillation,
                         estimator_for_scheme, poisson_indicators,
                         total_estimator)
from .linsolve import LinearSolveError, solve_coupled, solve_spd
from .mesh import (LSHAPE, UNIT_SQUARE, Mesh, MeshError, element_patch,
                   make_initial_mesh, refine_bisection)
from .optimality import (NewtonError, ProblemData, Solution,
                         auxiliary_control_pair, evaluate_cost,
                         newton_slope, pointwise_control_law,
                         solve_optimality)
from .problems import (ErrorNorms, ManufacturedProblem, exact_error_norms,
                       example1, example2, get_example)
from .quadrature import QuadratureError, QuadratureRule, edge_rule, \
    quadrature_rule, triangle_rule

__version__ = "1.0.0"

__all__ = [
    "AdaptiveResult", "AssemblyError", "ConvergenceRecord", "ErrorNorms",
    "EstimatorError", "FeFunction", "IndicatorSet", "LSHAPE",
    "LinearSolveError", "ManufacturedProblem", "Mesh", "MeshError",
    "NewtonError", "ProblemData", "QuadratureError", "QuadratureRule",
    "Solution", "UNIT_SQUARE", "adaptive_solve", "assemble_load",
    "assemble_mass", "assemble_stiffness", "auxiliary_control_pair",
    "cell_average", "count_ndof", "data_oscillation", "edge_rule",
    "element_patch", "estimator_for_scheme", "evaluate_cost",
    "exact_error_norms", "example1", "example2", "get_example",
    "lumped_weights", "make_initial_mesh", "mark_max_strategy",
    "newton_slope", "pointwise_control_law", "poisson_indicators",
    "quadrature_rule", "quasi_interpolate", "refine_bisection",
    "solve_coupled", "solve_optimality", "solve_spd", "total_estimator",
    "triangle_rule",
]

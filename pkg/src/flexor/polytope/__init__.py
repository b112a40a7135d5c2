"""Polyhedral toolkit: H-representation, LP, projection and planar geometry."""

from .geometry import Shadow, hull_2d, polygon_area, polygon_vertices, shadow_2d
from .hpoly import (AffineMap, EmptyPolyhedronError, HPolyhedron, Reduction, UnboundedError,
                    canonicalize, eliminate_equalities)
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LpError, LpSolution, lp_solve
from .projection import (ProjectionError, ProjectionStats, argsupport, fm_project,
                         lifted_membership, project, redundancy_filter, support)

__all__ = [
    "AffineMap", "EmptyPolyhedronError", "HPolyhedron", "INFEASIBLE", "LpError",
    "LpSolution", "OPTIMAL", "ProjectionError", "ProjectionStats", "Reduction",
    "Shadow", "UNBOUNDED", "UnboundedError", "argsupport", "canonicalize",
    "eliminate_equalities", "fm_project", "hull_2d", "lifted_membership", "lp_solve",
    "polygon_area", "polygon_vertices", "project", "redundancy_filter", "shadow_2d",
    "support",
]

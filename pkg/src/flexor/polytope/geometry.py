"""Planar geometry: convex hulls, polygon areas and 2D shadows of polyhedra."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..tolerances import VERTEX_TOL
from .hpoly import HPolyhedron, UnboundedError
from .lp import UNBOUNDED, lp_solve
from .projection import ProjectionStats, project


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _merge_close(pts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    tol = VERTEX_TOL * max(1.0, max(max(abs(x), abs(y)) for x, y in pts))
    kept: list[tuple[float, float]] = []
    for p in pts:
        if all(abs(p[0] - q[0]) > tol or abs(p[1] - q[1]) > tol for q in kept):
            kept.append(p)
    return kept


def hull_2d(points) -> np.ndarray:
    """Convex hull by Andrew's monotone chain.

    Vertices come back counter-clockwise starting from the lexicographically
    smallest point; collinear boundary points are dropped and points closer
    than ``VERTEX_TOL`` (scaled by the coordinate magnitude) are merged.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("hull_2d needs at least one point")
    uniq = _merge_close(sorted(set(map(tuple, pts.tolist()))))
    if len(uniq) <= 2:
        return np.array(uniq, dtype=float)

    lower: list[tuple[float, float]] = []
    for p in uniq:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(uniq):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=float)


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass(frozen=True)
class Shadow:
    dims: tuple[str, str]
    vertices: np.ndarray
    kind: str  # polygon | segment | point | empty
    poly: HPolyhedron

    @property
    def area(self) -> float:
        return polygon_area(self.vertices) if self.kind == "polygon" else 0.0


def _intersect(r1, b1, r2, b2) -> np.ndarray | None:
    m = np.array([r1, r2])
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-12:
        return None
    return np.linalg.solve(m, np.array([b1, b2]))


def _segment_or_point(poly: HPolyhedron) -> np.ndarray:
    """Vertices of a 2D polyhedron carrying at least one equality."""
    if poly.n_eq >= 2:
        res = lp_solve(np.zeros(2), poly.a_ineq, poly.b_ineq, poly.a_eq, poly.b_eq)
        return res.x.reshape(1, 2)
    normal = poly.a_eq[0]
    tangent = np.array([-normal[1], normal[0]])
    ends = []
    for sense in (False, True):
        res = lp_solve(tangent, poly.a_ineq, poly.b_ineq, poly.a_eq, poly.b_eq, maximize=sense)
        if res.status == UNBOUNDED:
            raise UnboundedError(f"shadow unbounded along {tangent.tolist()}", res.ray)
        ends.append(res.x)
    return hull_2d(np.array(ends))


def polygon_vertices(poly: HPolyhedron) -> tuple[np.ndarray, str]:
    """Ordered vertices of a planar polyhedron given by (irredundant) halfplanes."""
    if poly.dim != 2:
        raise ValueError("polygon_vertices works on 2-variable polyhedra")
    if poly.empty:
        return np.zeros((0, 2)), "empty"
    if poly.n_eq:
        verts = _segment_or_point(poly)
        return verts, ("point" if len(verts) == 1 else "segment")
    a, b = poly.a_ineq, poly.b_ineq
    angles = np.arctan2(a[:, 1], a[:, 0])
    order = np.argsort(angles, kind="stable")
    a, b, angles = a[order], b[order], angles[order]
    gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]])) if len(angles) else []
    if len(angles) < 3 or np.max(gaps) >= np.pi - 1e-12:
        raise UnboundedError("2D shadow is unbounded")

    verts = []
    degenerate = False
    m = len(b)
    for i in range(m):
        j = (i + 1) % m
        v = _intersect(a[i], b[i], a[j], b[j])
        if v is None:
            degenerate = True
            break
        verts.append(v)
    if not degenerate:
        verts = np.array(verts)
        slack = verts @ a.T - b
        degenerate = bool(np.max(slack) > VERTEX_TOL)
    if degenerate:
        # thin region: fall back to all pairwise intersections
        cand = []
        for i in range(m):
            for j in range(i + 1, m):
                v = _intersect(a[i], b[i], a[j], b[j])
                if v is not None and np.max(a @ v - b) <= VERTEX_TOL:
                    cand.append(v)
        verts = np.array(cand).reshape(-1, 2)
        if verts.shape[0] == 0:
            return verts, "empty"
    hull = hull_2d(verts)
    kind = {1: "point", 2: "segment"}.get(len(hull), "polygon")
    return hull, kind


def shadow_2d(poly: HPolyhedron, dims: Sequence[str], *,
              stats: ProjectionStats | None = None) -> Shadow:
    """Project onto two variables and enumerate the polygon counter-clockwise."""
    dims = tuple(dims)
    if len(dims) != 2:
        raise ValueError("shadow_2d takes exactly two dimensions")
    for nm in dims:
        poly.index(nm)
    flat = project(poly, dims, stats=stats)
    verts, kind = polygon_vertices(flat)
    return Shadow(dims, verts, kind, flat)


def support_of_points(points, direction) -> float:
    pts = np.asarray(points, dtype=float)
    return float(np.max(pts @ np.asarray(direction, dtype=float)))


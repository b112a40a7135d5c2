"""AC reference regions: directional sampling, grid refinement and comparison."""

from __future__ import annotations

import io
import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .aggregation import ForResult, for_membership
from .coupling import CouplingSpec
from .grid_model import GridCase
from .polytope import hull_2d, polygon_area, polygon_vertices
from .slp import AcSample, Objective, direction_label, slp_optimize
from .tolerances import MEMBERSHIP_TOL

log = logging.getLogger(__name__)

DEFAULT_N_GRID = 15
OPTIMALITY_SLACK = 1e-6

__all__ = [
    "AcSample", "DegenerateRegionError", "SampledFor", "compare_for", "directions_2d",
    "distance_to_polygon", "sample_boundary", "sample_extremes_7d", "samples_csv", "slp_optimize",
]


class DegenerateRegionError(RuntimeError):
    pass


def directions_2d() -> list[tuple[int, int]]:
    """The eight nonzero vectors of ``{-1, 0, 1}^2`` in a fixed order."""
    return [d for d in itertools.product((-1, 0, 1), repeat=2) if d != (0, 0)]


@dataclass
class SampledFor:
    labels: tuple[str, ...]
    samples: list[AcSample]
    hull: np.ndarray
    grid_refinement: int
    optimality_violations: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def converged(self) -> list[AcSample]:
        return [s for s in self.samples if s.converged]

    @property
    def points(self) -> np.ndarray:
        pts = [s.z for s in self.converged]
        return np.array(pts).reshape(-1, len(self.labels))

    @property
    def area(self) -> float:
        return polygon_area(self.hull)

    def hull_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(self.labels) + "\n")
        for v in self.hull:
            out.write(",".join(_fmt(x) for x in v) + "\n")
        return out.getvalue()


def _fmt(v: float) -> str:
    return format(float(v) + 0.0, ".12g")


def samples_csv(samples: Sequence[AcSample], labels: Sequence[str]) -> str:
    """One row per sample: direction, coupling coordinates, converged flag, mismatch."""
    out = io.StringIO()
    out.write(",".join(["direction", *labels, "converged", "mismatch"]) + "\n")
    for s in samples:
        coords = [_fmt(x) for x in s.z] if np.all(np.isfinite(s.z)) else ["nan"] * len(labels)
        out.write(",".join([s.direction, *coords, "1" if s.converged else "0",
                            format(float(s.mismatch), ".3e")]) + "\n")
    return out.getvalue()


def _check_optimality(samples: Sequence[AcSample], directions: Mapping[str, np.ndarray]
                      ) -> list[str]:
    done = [s for s in samples if s.converged]
    notes = []
    for s in done:
        c = directions.get(s.direction)
        if c is None:
            continue
        best = min(float(c @ o.z) for o in done)
        if best < float(c @ s.z) - OPTIMALITY_SLACK:
            notes.append(f"{s.direction}: local optimum, another sample improves the "
                         f"objective by {float(c @ s.z) - best:.3e}")
    return notes


def sample_boundary(case: GridCase, coupling: CouplingSpec, *, n_grid: int = DEFAULT_N_GRID,
                    pins: Mapping[int, tuple[float, float]] | None = None) -> SampledFor:
    """AC samples of a 2D coupling region and their convex hull.

    Phase one minimizes every direction of ``{-1, 0, 1}^2``.  Phase two fixes
    the first coordinate at ``n_grid`` interior points of the phase-one range
    and minimizes and maximizes the second coordinate.
    """
    if coupling.dim != 2:
        raise ValueError("sample_boundary needs a 2D coupling")
    if n_grid < 0:
        raise ValueError("n_grid must be non-negative")
    labels = coupling.labels
    samples, dirs = [], {}
    for d in directions_2d():
        c = np.array(d, dtype=float)
        s = slp_optimize(case, Objective.along(coupling, c), coupling=coupling, pins=pins)
        dirs[s.direction] = c
        samples.append(s)
    first = np.array([s.z for s in samples if s.converged]).reshape(-1, 2)
    if first.shape[0] and n_grid:
        lo, hi = float(first[:, 0].min()), float(first[:, 0].max())
        if hi - lo > 1e-9:
            for value in np.linspace(lo, hi, n_grid + 2)[1:-1]:
                for sign in (-1.0, 1.0):
                    c = np.array([0.0, sign])
                    tag = f"{direction_label(labels, c)}|{labels[0]}={value:.9g}"
                    obj = Objective.along(coupling, c, tag)
                    samples.append(slp_optimize(case, obj, coupling=coupling, pins=pins,
                                                fixed={labels[0]: float(value)}))
    samples.sort(key=lambda s: s.direction)
    ok = [s for s in samples if s.converged]
    if len(ok) < 3:
        raise DegenerateRegionError(f"only {len(ok)} of {len(samples)} AC samples converged")
    notes = _check_optimality(samples, dirs)
    for s in samples:
        if not s.converged:
            notes.append(f"{s.direction}: not converged ({s.message})")
    hull = hull_2d(np.array([s.z for s in ok]))
    return SampledFor(tuple(labels), samples, hull, n_grid, len(_local(notes)), notes)


def _local(notes: Sequence[str]) -> list[str]:
    return [n for n in notes if "local optimum" in n]


def sample_extremes_7d(case: GridCase, coupling: CouplingSpec, *,
                       pins: Mapping[int, tuple[float, float]] | None = None
                       ) -> list[AcSample]:
    """Coordinate extremes plus sign patterns over the two active interconnection flows.

    Each sample maximizes ``c @ z`` for its direction ``c``; tags read ``NN:max<c>``.

    Every boundary bus is pinned to v = 1, theta = 0 unless ``pins`` says otherwise.
    """
    labels = coupling.labels
    if len(case.interconnections) != 2:
        raise ValueError("sample_extremes_7d needs a case with two interconnections")
    flows = [f"p_{br.from_bus}_{br.to_bus}" for br in case.interconnections]
    missing = [f for f in flows if f not in labels]
    if missing:
        raise ValueError(f"coupling lacks the active flows {missing}")
    dirs = []
    for j in range(coupling.dim):
        for sign in (1.0, -1.0):
            c = np.zeros(coupling.dim)
            c[j] = sign
            dirs.append(c)
    i, k = labels.index(flows[0]), labels.index(flows[1])
    for a, b in directions_2d():
        c = np.zeros(coupling.dim)
        c[i], c[k] = a, b
        dirs.append(c)
    samples = []
    for n, c in enumerate(dirs):
        tag = f"{n:02d}:max{direction_label(labels, c)}"
        s = slp_optimize(case, Objective.along(coupling, -c, tag), coupling=coupling, pins=pins)
        if not s.converged:
            log.warning("extreme %s did not converge: %s", tag, s.message)
        samples.append(s)
    return samples


def distance_to_polygon(vertices: np.ndarray, z) -> float:
    """Euclidean distance from ``z`` to a convex polygon, segment or point (0 inside)."""
    z = np.asarray(z, dtype=float)
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if v.shape[0] == 0:
        return float("inf")
    if v.shape[0] == 1:
        return float(np.linalg.norm(z - v[0]))
    if v.shape[0] >= 3:
        edges = np.roll(v, -1, axis=0) - v
        cross = edges[:, 0] * (z[1] - v[:, 1]) - edges[:, 1] * (z[0] - v[:, 0])
        if np.all(cross >= 0):
            return 0.0
    segs = range(v.shape[0]) if v.shape[0] >= 3 else range(1)
    best = float("inf")
    for a in segs:
        p, q = v[a], v[(a + 1) % v.shape[0]]
        e = q - p
        t = float(np.clip((z - p) @ e / max(e @ e, 1e-300), 0.0, 1.0))
        best = min(best, float(np.linalg.norm(z - (p + t * e))))
    return best


def compare_for(linearized: ForResult, sampled: SampledFor, *, inflation: float = 0.02
                ) -> dict:
    """Containment, areas and outward distance of AC samples w.r.t. a linearized FOR."""
    if list(linearized.labels) != list(sampled.labels):
        raise ValueError(f"coupling mismatch: {linearized.labels} vs {list(sampled.labels)}")
    if linearized.poly.dim != 2:
        raise ValueError("compare_for works on 2D regions")
    pts = sampled.points
    inside = [for_membership(linearized, z, MEMBERSHIP_TOL)[0] for z in pts]
    verts, kind = polygon_vertices(linearized.poly)
    lin_area = polygon_area(verts) if kind == "polygon" else 0.0
    dist = max([distance_to_polygon(verts, z) for z in pts], default=0.0)
    ranges = linearized.coordinate_ranges()
    widths = inflation * (ranges[:, 1] - ranges[:, 0])
    grown = linearized.poly.inflate(widths)
    outside_inflated = sum(not grown.contains(v, MEMBERSHIP_TOL) for v in sampled.hull)
    ratio = sampled.area / lin_area if lin_area > 0 else float("nan")
    return {
        "labels": list(sampled.labels),
        "variant": linearized.variant,
        "samples": len(sampled.samples),
        "converged": len(pts),
        "containment_fraction": float(np.mean(inside)) if inside else float("nan"),
        "sampled_area": sampled.area,
        "linearized_area": lin_area,
        "area_ratio": ratio,
        "max_outward_distance": dist,
        "inflation": inflation,
        "hull_vertices_outside_inflated": int(outside_inflated),
        "optimality_violations": sampled.optimality_violations,
        "grid_refinement": sampled.grid_refinement,
    }

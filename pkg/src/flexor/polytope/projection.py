"""Fourier-Motzkin projection with LP-based redundancy removal."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..tolerances import DUPLICATE_TOL, FEAS_TOL, MEMBERSHIP_TOL, REDUNDANCY_TOL, ZERO_TOL
from .hpoly import (EmptyPolyhedronError, HPolyhedron, UnboundedError, canonicalize,
                    eliminate_equalities)
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LpError, batch_vertex_lp_max, lp_solve

log = logging.getLogger(__name__)

DEFAULT_MAX_ROWS = 100_000
# a combined row this much shorter than its parents is a cancelled row
CANCEL_TOL = 1e-9
# interior radius below which the polyhedron counts as flat
INTERIOR_TOL = 1e-9
# relative tie window when a ray crosses several rows at once
HIT_TIE = 1e-9
# random rays per dimension used to find facets before any LP
SEED_RAYS = 20
# objective cap used when measuring the bounding box of a whitened polyhedron
BOX_CAP = 1e6
# problems x rows per batched LP call
BATCH_ENTRIES = 2_000_000


class ProjectionError(RuntimeError):
    pass


@dataclass
class ProjectionStats:
    eliminated: list[str] = field(default_factory=list)
    # rows after each elimination: (candidates generated, after dedupe, after LP filter)
    rows: list[tuple[int, int, int]] = field(default_factory=list)
    lp_calls: int = 0

    def as_dict(self) -> dict:
        return {"eliminated": list(self.eliminated),
                "rows": [list(r) for r in self.rows],
                "lp_calls": self.lp_calls}


def _normalize(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(a, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    a = a / safe[:, None]
    a[np.abs(a) < ZERO_TOL] = 0.0
    return a, b / safe


def _dedupe(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Indices of rows to keep: one representative (tightest) per normal direction.

    Normals are compared on a grid of spacing ``DUPLICATE_TOL``; near-parallel
    rows that straddle a grid line survive and are left to the LP filter.
    """
    if a.shape[0] == 0:
        return np.zeros(0, dtype=int)
    keys = np.round(a / DUPLICATE_TOL).astype(np.int64)
    _, group = np.unique(keys, axis=0, return_inverse=True)
    group = group.reshape(-1)
    # tightest row of each group, lowest index among equal right-hand sides
    order = np.lexsort((np.arange(b.size), b, group))
    first = np.ones(order.size, dtype=bool)
    first[1:] = group[order][1:] != group[order][:-1]
    return np.sort(order[first])


def _chebyshev_center(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Center and radius of the largest ball inside ``{a x <= b}`` (radius capped at 1)."""
    n = a.shape[1]
    norms = np.linalg.norm(a, axis=1)
    rows = np.vstack([np.column_stack([a, norms]), np.eye(n + 1)[-1]])
    rhs = np.concatenate([b, [1.0]])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = lp_solve(c, rows, rhs, maximize=True)
    if res.status != OPTIMAL:
        return np.zeros(n), 0.0
    return res.x[:n], float(res.x[-1])


def _first_hits(a: np.ndarray, slack: np.ndarray, dirs: np.ndarray, pool: np.ndarray
                ) -> np.ndarray:
    """Row of ``pool`` first crossed by each ray ``x0 + t d``.

    -1 when no row blocks the ray, -2 when several rows are crossed at the
    same point (the ray met a lower-dimensional face).
    """
    speed = dirs @ a[pool].T
    scale = ZERO_TOL * np.maximum(1.0, np.abs(dirs).max(axis=1))
    ahead = speed > scale[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ahead, slack[pool][None, :] / speed, np.inf)
    best = t.min(axis=1)
    ties = (t <= best[:, None] * (1.0 + HIT_TIE) + HIT_TIE).sum(axis=1)
    hit = pool[np.argmin(t, axis=1)]
    return np.where(~np.isfinite(best), -1, np.where(ties > 1, -2, hit))


def _exact_redundant(a: np.ndarray, b: np.ndarray, i: int, others: np.ndarray,
                     tol: float) -> bool:
    rows = np.vstack([a[others], a[i]])
    rhs = np.concatenate([b[others], [b[i] + 1.0]])
    try:
        res = lp_solve(a[i], rows, rhs, maximize=True)
    except LpError:
        return False
    return res.status == OPTIMAL and res.value <= b[i] + tol


def _irredundant_sequential(a: np.ndarray, b: np.ndarray, stats: ProjectionStats | None,
                            tol: float) -> np.ndarray:
    m = a.shape[0]
    active = np.ones(m, dtype=bool)
    for i in range(m):
        active[i] = False
        if stats is not None:
            stats.lp_calls += 1
        # capping row i keeps the test LP bounded
        if not _exact_redundant(a, b, i, np.flatnonzero(active), tol):
            active[i] = True
    return active


def _whiten(a: np.ndarray, b: np.ndarray, x0: np.ndarray, rng) -> tuple[np.ndarray, ...]:
    """Affine change of variables ``x = x0 + L y`` that makes the polyhedron roundish.

    ``L`` comes from the second moment of boundary points hit by random rays
    from ``x0``.  Returns the unit-norm rows, their right-hand sides and the
    row scale factors (a tolerance ``t`` on row i becomes ``t / scale_i``).
    """
    m, n = a.shape
    slack = b - a @ x0
    dirs = rng.normal(size=(SEED_RAYS * max(n, 1), n))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    speed = dirs @ a.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(speed > ZERO_TOL, slack[None, :] / speed, np.inf).min(axis=1)
    lift = np.eye(n)
    if np.all(np.isfinite(t)):
        pts = dirs * t[:, None]
        eig, vec = np.linalg.eigh(pts.T @ pts / pts.shape[0])
        eig = np.maximum(eig, eig.max() * 1e-16)
        lift = vec * np.sqrt(eig)[None, :]
    a_y = a @ lift
    scale = np.linalg.norm(a_y, axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    return a_y / scale[:, None], slack / scale, scale


def _irredundant(a: np.ndarray, b: np.ndarray, stats: ProjectionStats | None = None,
                 tol: float = REDUNDANCY_TOL) -> np.ndarray:
    """Boolean mask of rows that are not implied by the others.

    Clarkson's scheme in rounds, in coordinates where the polyhedron is
    roundish: every undecided row is tested by an LP over the rows already
    known to be facets only (all such LPs are solved as one batch).  A row
    whose LP is inconclusive sends a ray from an interior point towards its
    optimizer; the first row the ray crosses is a facet.  Ambiguous rays fall
    back to an LP against all other rows.  Without an interior point the rows
    are tested one by one in index order.  Of two mutually implying rows
    exactly one survives.
    """
    m, n = a.shape
    if m == 0:
        return np.zeros(0, dtype=bool)
    x0, radius = _chebyshev_center(a, b)
    if stats is not None:
        stats.lp_calls += 1
    if radius <= INTERIOR_TOL:
        return _irredundant_sequential(a, b, stats, tol)
    rng = np.random.default_rng(0)
    a, b, scale = _whiten(a, b, x0, rng)
    tol = tol / scale
    y0 = np.zeros(n)
    # a box strictly around the polyhedron bounds every partial system; it
    # never decides redundancy because the polyhedron lies well inside it
    eye = np.vstack([np.eye(n), -np.eye(n)])
    reach, _ = batch_vertex_lp_max(eye, a, b, eye, np.full(2 * n, BOX_CAP), y0)
    boxed = bool(np.all(reach < 0.5 * BOX_CAP))
    if boxed:
        a = np.vstack([a, eye])
        b = np.concatenate([b, np.full(2 * n, 2.0 * float(np.max(np.abs(reach))) + 1.0)])
        tol = np.concatenate([tol, np.zeros(2 * n)])
    state = np.zeros(a.shape[0], dtype=np.int8)  # 1 facet, -1 redundant, 0 undecided
    state[m:] = 1
    chunk = max(1, BATCH_ENTRIES // max(m, 1))
    # rays along random directions and along every row normal expose facets cheaply
    rays = np.vstack([rng.normal(size=(SEED_RAYS * max(n, 1), n)), a[:m]])
    for lo in range(0, rays.shape[0], chunk):
        seeds = _first_hits(a, b, rays[lo:lo + chunk], np.arange(m))
        state[seeds[seeds >= 0]] = 1
    while True:
        todo = np.flatnonzero(state == 0)
        if todo.size == 0:
            break
        known = state == 1
        keep = np.flatnonzero(known)
        pool = np.flatnonzero(state[:m] >= 0)
        for lo in range(0, todo.size, chunk):
            part = todo[lo:lo + chunk]
            part = part[state[part] == 0]
            if part.size == 0:
                continue
            vals, ys = batch_vertex_lp_max(a[part], a[keep], b[keep], a[part], b[part] + 1.0, y0)
            if stats is not None:
                stats.lp_calls += part.size
            implied = vals <= b[part] + tol[part]
            state[part[implied]] = -1
            rest = np.flatnonzero(~implied)
            if rest.size == 0:
                continue
            hits = _first_hits(a, b, ys[rest], pool)
            stuck = []
            for r, j in zip(part[rest], hits):
                if j == r or (j >= 0 and not known[j]):
                    state[j] = 1
                else:
                    stuck.append(r)
            # rays through lower-dimensional faces: test against all other rows
            stuck = np.array([r for r in stuck if state[r] == 0], dtype=int)
            if stuck.size:
                state[stuck] = np.where(
                    _implied(a, b, stuck, np.flatnonzero(state >= 0), y0, tol, stats), -1, 1)
    return _cleanup(a, b, state == 1, y0, stats, tol, m)[:m]


def _implied(a, b, rows, kept, x0, tol, stats) -> np.ndarray:
    """For each row in ``rows``: is it implied by ``kept`` (ignoring itself)?"""
    if rows.size == 0:
        return np.zeros(0, dtype=bool)
    where = np.searchsorted(kept, rows)
    inside = (where < kept.size) & (kept[np.minimum(where, kept.size - 1)] == rows)
    skip = np.where(inside, where, -1)
    vals, _ = batch_vertex_lp_max(a[rows], a[kept], b[kept], a[rows], b[rows] + 1.0, x0,
                                  skip=skip)
    if stats is not None:
        stats.lp_calls += rows.size
    return vals <= b[rows] + tol[rows]


def _cleanup(a, b, facet, x0, stats, tol, n_real) -> np.ndarray:
    """Make the kept rows imply every dropped row, then drop weakly redundant kept rows.

    Only the first ``n_real`` rows are candidates for removal.  Kept rows are
    removed one at a time in index order, so of two mutually implying rows
    exactly one survives.
    """
    facet = facet.copy()
    dropped = np.flatnonzero(~facet)
    ok = _implied(a, b, dropped, np.flatnonzero(facet), x0, tol, stats)
    facet[dropped[~ok]] = True
    kept = np.flatnonzero(facet[:n_real])
    for r in kept[_implied(a, b, kept, np.flatnonzero(facet), x0, tol, stats)]:
        if _implied(a, b, np.array([r]), np.flatnonzero(facet), x0, tol, stats)[0]:
            facet[r] = False
    return facet


def _is_empty(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape[0] == 0:
        return False
    return lp_solve(np.zeros(a.shape[1]), a, b).status == INFEASIBLE


def redundancy_filter(poly: HPolyhedron, tol: float = REDUNDANCY_TOL) -> HPolyhedron:
    """Drop every inequality implied by the remaining ones (canonical output)."""
    if poly.n_eq:
        raise ValueError("redundancy_filter expects a polyhedron without equalities")
    if poly.empty:
        return poly
    poly = canonicalize(poly)
    if poly.empty:
        return poly
    if _is_empty(poly.a_ineq, poly.b_ineq):
        return HPolyhedron.empty_set(poly.var_names)
    mask = _irredundant(poly.a_ineq, poly.b_ineq, tol=tol)
    return canonicalize(HPolyhedron(poly.var_names, poly.a_ineq[mask], poly.b_ineq[mask]))


def fm_project(poly: HPolyhedron, keep: Sequence[str], *, max_rows: int = DEFAULT_MAX_ROWS,
               stats: ProjectionStats | None = None) -> HPolyhedron:
    """Project an inequality-only polyhedron onto the variables ``keep``.

    Variables are eliminated one at a time, always picking the one with the
    fewest (positive x negative) row pairs.  Every combined row goes through
    the exact LP redundancy test after every elimination.
    """
    if poly.n_eq:
        raise ValueError("fm_project expects no equalities; call eliminate_equalities first")
    keep = list(keep)
    missing = [nm for nm in keep if nm not in poly.var_names]
    if missing:
        raise KeyError(f"cannot keep unknown variables {missing}")
    if len(set(keep)) != len(keep):
        raise ValueError("duplicate names in keep")
    stats = stats if stats is not None else ProjectionStats()
    names = list(poly.var_names)
    if poly.empty:
        return HPolyhedron.empty_set(keep)

    a, b = _normalize(poly.a_ineq.copy(), poly.b_ineq.copy())
    zero = ~np.any(a != 0.0, axis=1)
    if np.any(zero & (b < -FEAS_TOL)):
        return HPolyhedron.empty_set(keep)
    a, b = a[~zero], b[~zero]
    idx = _dedupe(a, b)
    a, b = a[idx], b[idx]
    if _is_empty(a, b):
        return HPolyhedron.empty_set(keep)
    mask = _irredundant(a, b, stats)
    a, b = a[mask], b[mask]

    to_drop = [nm for nm in names if nm not in keep]
    while to_drop:
        best = None
        for nm in to_drop:
            j = names.index(nm)
            n_pos = int(np.sum(a[:, j] > ZERO_TOL))
            n_neg = int(np.sum(a[:, j] < -ZERO_TOL))
            score = n_pos * n_neg
            if best is None or score < best[0]:
                best = (score, nm, j)
        _, nm, j = best
        col = a[:, j]
        pos = np.flatnonzero(col > ZERO_TOL)
        neg = np.flatnonzero(col < -ZERO_TOL)
        zer = np.flatnonzero(np.abs(col) <= ZERO_TOL)
        n_candidates = len(zer) + len(pos) * len(neg)
        if n_candidates > max_rows:
            raise ProjectionError(
                f"eliminating {nm!r} would create {n_candidates} rows (cap {max_rows}); "
                "reorder the elimination or loosen pruning")
        new_a = [a[zer]]
        new_b = [b[zer]]
        weight = [np.ones(len(zer))]
        if len(pos) and len(neg):
            cp = col[pos][:, None]
            cn = -col[neg][None, :]
            comb_a = (cn[..., None] * a[pos][:, None, :] + cp[..., None] * a[neg][None, :, :])
            comb_b = cn * b[pos][:, None] + cp * b[neg][None, :]
            new_a.append(comb_a.reshape(-1, a.shape[1]))
            new_b.append(comb_b.reshape(-1))
            weight.append((cn + cp).reshape(-1))
        a = np.vstack(new_a)
        b = np.concatenate(new_b)
        weight = np.concatenate(weight)
        a[:, j] = 0.0
        a = np.delete(a, j, axis=1)
        names.pop(j)
        to_drop.remove(nm)

        # combinations whose normals cancel to round-off read 0 <= b
        cancel = np.linalg.norm(a, axis=1) <= CANCEL_TOL * weight
        if np.any(cancel & (b < -FEAS_TOL * weight)):
            return HPolyhedron.empty_set(keep)
        a, b = _normalize(a[~cancel], b[~cancel])
        zero = ~np.any(a != 0.0, axis=1)
        if np.any(zero & (b < -FEAS_TOL)):
            return HPolyhedron.empty_set(keep)
        a, b = a[~zero], b[~zero]
        idx = _dedupe(a, b)
        a, b = a[idx], b[idx]
        after_dedupe = a.shape[0]
        mask = _irredundant(a, b, stats)
        a, b = a[mask], b[mask]
        stats.eliminated.append(nm)
        stats.rows.append((n_candidates, after_dedupe, a.shape[0]))
        log.debug("eliminated %s: %d candidates, %d distinct, %d irredundant",
                  nm, n_candidates, after_dedupe, a.shape[0])

    out = HPolyhedron(tuple(names), a, b).reorder(keep)
    return canonicalize(out)


def project(poly: HPolyhedron, keep: Sequence[str], *, max_rows: int = DEFAULT_MAX_ROWS,
            stats: ProjectionStats | None = None) -> HPolyhedron:
    """Projection of a polyhedron with equalities onto ``keep``.

    Equalities are substituted away first (preferring to solve for variables
    that are projected out).  Kept variables that the equalities determine
    reappear as equality rows of the result.
    """
    keep = list(keep)
    red = eliminate_equalities(poly, keep)
    if red.reduced.empty:
        return HPolyhedron.empty_set(keep)
    free_keep = [nm for nm in keep if nm in red.reduced.var_names]
    inner = fm_project(red.reduced, free_keep, max_rows=max_rows, stats=stats)
    if inner.empty:
        return HPolyhedron.empty_set(keep)
    n = len(keep)
    col = {nm: keep.index(nm) for nm in free_keep}
    a = np.zeros((inner.n_ineq, n))
    for k, nm in enumerate(inner.var_names):
        a[:, col[nm]] = inner.a_ineq[:, k]
    eq_rows, eq_rhs = [], []
    reduced_names = red.recover.reduced_names
    for nm in keep:
        if nm not in red.dependent:
            continue
        p = red.recover.full_names.index(nm)
        row = np.zeros(n)
        row[keep.index(nm)] = 1.0
        for k, rn in enumerate(reduced_names):
            coef = red.recover.matrix[p, k]
            if rn in col:
                row[col[rn]] -= coef
            elif abs(coef) > 1e-9:
                raise ProjectionError(f"kept variable {nm!r} depends on eliminated {rn!r}")
        eq_rows.append(row)
        eq_rhs.append(red.recover.offset[p])
    return canonicalize(HPolyhedron(tuple(keep), a, inner.b_ineq,
                                    np.array(eq_rows).reshape(-1, n), eq_rhs))


def support(poly: HPolyhedron, direction) -> float:
    """``max direction.x`` over the polyhedron."""
    d = np.asarray(direction, dtype=float)
    if poly.empty:
        raise EmptyPolyhedronError("support of an empty polyhedron")
    res = lp_solve(d, poly.a_ineq, poly.b_ineq, poly.a_eq, poly.b_eq, maximize=True)
    if res.status == OPTIMAL:
        return res.value
    if res.status == UNBOUNDED:
        raise UnboundedError(f"support unbounded in direction {d.tolist()}", res.ray)
    raise EmptyPolyhedronError("support of an empty polyhedron")


def argsupport(poly: HPolyhedron, direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    res = lp_solve(d, poly.a_ineq, poly.b_ineq, poly.a_eq, poly.b_eq, maximize=True)
    if res.status == OPTIMAL:
        return res.x
    if res.status == UNBOUNDED:
        raise UnboundedError(f"support unbounded in direction {d.tolist()}", res.ray)
    raise EmptyPolyhedronError("support of an empty polyhedron")


def lifted_membership(poly: HPolyhedron, keep: Sequence[str], z) -> bool:
    """Decide ``z in proj_keep(poly)`` by LP feasibility of the lifted system."""
    z = np.asarray(z, dtype=float)
    k_idx = [poly.index(nm) for nm in keep]
    y_idx = [i for i in range(poly.dim) if i not in k_idx]
    rhs = poly.b_ineq - poly.a_ineq[:, k_idx] @ z
    rhs_eq = poly.b_eq - poly.a_eq[:, k_idx] @ z
    a_y = poly.a_ineq[:, y_idx]
    c_y = poly.a_eq[:, y_idx]
    if not y_idx:
        ok = np.all(rhs >= -MEMBERSHIP_TOL) and np.all(np.abs(rhs_eq) <= MEMBERSHIP_TOL)
        return bool(ok)
    res = lp_solve(np.zeros(len(y_idx)), a_y, rhs + MEMBERSHIP_TOL, c_y, rhs_eq)
    return res.status != INFEASIBLE

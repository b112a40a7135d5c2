"""Dense two-phase simplex for small linear programs over free variables.

The user problem ``min/max c.x  s.t.  A x <= b, C x = d`` (x free) is solved
through its dual, which is already in standard form

    min  b.lam + d.mu+ - d.mu-   s.t.  A^T lam + C^T (mu+ - mu-) = g,  lam, mu >= 0

with ``g = c`` for maximization (``-c`` for minimization).  The dual has as
many rows as the primal has variables, which keeps the tableau tiny for the
redundancy tests that dominate Fourier-Motzkin elimination.  The primal
optimizer is read off the simplex multipliers of the final dual basis and
then re-solved on the active rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tolerances import FEAS_TOL, OPTIMALITY_TOL, PIVOT_TOL

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

# reduced costs above -RAY_TOL on a column without pivots count as zero
RAY_TOL = 1e-7
HARRIS_TOL = 1e-9
# relative size below which a projected objective counts as zero during the crash
CRASH_TOL = 1e-6


class LpError(RuntimeError):
    """Raised on numerical breakdown of the simplex method."""


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    value: float = float("nan")
    # Recession direction for unbounded problems, Farkas multipliers
    # (over the stacked rows [A; C; -C]) for infeasible ones.
    ray: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    """Dense simplex tableau over ``[m | I] w = g`` that can be rebuilt from its basis."""

    REINVERT_EVERY = 40

    def __init__(self, m: np.ndarray, g: np.ndarray):
        n_rows, n_cols = m.shape
        self.n_rows, self.n_cols = n_rows, n_cols
        self.sign = np.where(g < 0, -1.0, 1.0)
        self.full = np.hstack([m * self.sign[:, None], np.eye(n_rows)])
        self.rhs = g * self.sign
        self.tab = np.zeros((n_rows + 1, n_cols + n_rows + 1))
        self.tab[:n_rows, :-1] = self.full
        self.tab[:n_rows, -1] = self.rhs
        self.basis = np.arange(n_cols, n_cols + n_rows)
        self.cost = np.zeros(n_cols + n_rows)

    def set_cost(self, cost: np.ndarray) -> None:
        self.cost = cost
        self.tab[-1, :-1] = cost
        self.tab[-1, -1] = 0.0
        self.tab[-1] -= cost[self.basis] @ self.tab[:self.n_rows]

    def reinvert(self) -> None:
        b = self.full[:, self.basis]
        try:
            body = np.linalg.solve(b, np.column_stack([self.full, self.rhs]))
        except np.linalg.LinAlgError:
            return
        # keep the basic columns exact unit vectors
        body[:, self.basis] = np.eye(self.n_rows)
        self.tab[:self.n_rows] = body
        self.set_cost(self.cost)

    def pivot(self, row: int, col: int) -> None:
        tab = self.tab
        tab[row] /= tab[row, col]
        factor = tab[:, col].copy()
        factor[row] = 0.0
        tab -= np.outer(factor, tab[row])
        self.basis[row] = col

    def _ratio_test(self, column: np.ndarray, eligible: np.ndarray, bland: bool) -> int:
        """Harris two-pass ratio test: among near-minimal ratios take the largest pivot."""
        rhs = np.maximum(self.tab[eligible, -1], 0.0)
        col = column[eligible]
        if bland:
            ratios = rhs / col
            best = ratios.min()
            ties = eligible[ratios <= best + 1e-12 * max(1.0, abs(best))]
            return int(ties[np.argmin(self.basis[ties])])
        bound = np.min((rhs + HARRIS_TOL) / col)
        cand = np.flatnonzero(rhs / col <= bound)
        return int(eligible[cand[np.argmax(col[cand])]])

    def run(self, n_price: int, max_iter: int, bland_after: int) -> str:
        """Iterate until optimal or unbounded; only the first ``n_price`` columns enter.

        Terminal verdicts are confirmed on a freshly reinverted tableau.  A
        column whose reduced cost is negative only at round-off level and that
        has no admissible pivot is frozen instead of being read as a ray.
        """
        n_rows = self.n_rows
        frozen = np.zeros(n_price, dtype=bool)
        since, fresh = 0, False
        seen: set[bytes] = set()
        for it in range(max_iter):
            tab = self.tab
            reduced = np.where(frozen, 0.0, tab[-1, :n_price])
            if it < bland_after:
                col = int(np.argmin(reduced))
                done = reduced[col] >= -OPTIMALITY_TOL
            else:
                candidates = np.flatnonzero(reduced < -OPTIMALITY_TOL)
                done = candidates.size == 0
                col = int(candidates[0]) if not done else -1
            if done:
                if fresh:
                    return OPTIMAL
                self.reinvert()
                since, fresh = 0, True
                frozen[:] = False
                # the same basis after a reinversion means round-off is cycling
                key = self.basis.tobytes()
                if key in seen:
                    if self.tab[-1, :n_price].min() >= -RAY_TOL:
                        return OPTIMAL
                    raise LpError("simplex stalls on a numerically singular basis")
                seen.add(key)
                continue
            column = tab[:n_rows, col]
            eligible = np.flatnonzero(column > PIVOT_TOL)
            if eligible.size == 0:
                if reduced[col] > -RAY_TOL:
                    frozen[col] = True
                    continue
                if fresh:
                    self.ray_col = col
                    return UNBOUNDED
                self.reinvert()
                since, fresh = 0, True
                frozen[:] = False
                continue
            row = self._ratio_test(column, eligible, it >= bland_after)
            self.pivot(row, col)
            frozen[:] = False
            since += 1
            fresh = False
            if since >= self.REINVERT_EVERY:
                self.reinvert()
                since = 0
        raise LpError(f"simplex did not terminate within {max_iter} iterations")


@dataclass
class _StandardResult:
    status: str
    w: np.ndarray | None
    duals: np.ndarray | None
    # Phase-1 Farkas multipliers when infeasible, primal ray when unbounded.
    certificate: np.ndarray | None
    basic: np.ndarray | None = None


def simplex_standard(f: np.ndarray, m: np.ndarray, g: np.ndarray) -> _StandardResult:
    """Minimize ``f.w`` subject to ``m w = g``, ``w >= 0``.

    Dantzig pricing, switching to Bland's rule after ``2 (rows + cols)``
    iterations to rule out cycling.
    """
    n_rows, n_cols = m.shape
    t = _Tableau(m, g)
    bland_after = 2 * (n_rows + n_cols)
    max_iter = 50 * (n_rows + n_cols) + 100

    # phase 1: minimize the sum of artificials
    phase1 = np.zeros(n_cols + n_rows)
    phase1[n_cols:] = 1.0
    t.set_cost(phase1)
    t.run(n_cols, max_iter, bland_after)
    tab = t.tab
    scale = max(1.0, float(np.abs(g).max()) if g.size else 1.0)
    if -tab[-1, -1] > FEAS_TOL * scale:
        y = (1.0 - tab[-1, n_cols:n_cols + n_rows]) * t.sign
        return _StandardResult(INFEASIBLE, None, None, y)

    # drive remaining artificials out of the basis; a row without a usable
    # pivot is a redundant equality and its artificial stays basic at zero
    for row in np.flatnonzero(t.basis >= n_cols):
        entries = np.abs(t.tab[row, :n_cols])
        col = int(np.argmax(entries)) if n_cols else 0
        if n_cols and entries[col] > PIVOT_TOL:
            t.pivot(int(row), col)

    # phase 2
    cost = np.zeros(n_cols + n_rows)
    cost[:n_cols] = f
    t.set_cost(cost)
    status = t.run(n_cols, max_iter, bland_after)
    tab, basis = t.tab, t.basis
    real = basis < n_cols
    if status == UNBOUNDED:
        col = t.ray_col
        ray = np.zeros(n_cols)
        ray[col] = 1.0
        ray[basis[real]] = -tab[:n_rows, col][real]
        return _StandardResult(UNBOUNDED, None, None, ray)
    w = np.zeros(n_cols)
    w[basis[real]] = tab[:n_rows, -1][real]
    duals = -tab[-1, n_cols:n_cols + n_rows] * t.sign
    return _StandardResult(OPTIMAL, w, duals, None, basis[real].copy())


def _as_matrix(a, n: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, n))
    a = np.asarray(a, dtype=float)
    if n == 0 and a.ndim == 2:
        return a
    return a.reshape(-1, n)


def _as_vector(b) -> np.ndarray:
    if b is None:
        return np.zeros(0)
    return np.asarray(b, dtype=float).reshape(-1)


def _polish(x: np.ndarray, rows: np.ndarray, rhs: np.ndarray, basic) -> np.ndarray:
    """Re-solve the active rows of the final basis to shed accumulated pivot error."""
    if basic is None or basic.size == 0:
        return x
    active = rows[basic]
    try:
        ref = x + np.linalg.lstsq(active, rhs[basic] - active @ x, rcond=None)[0]
    except np.linalg.LinAlgError:
        return x
    if np.max(rows @ ref - rhs) <= max(np.max(rows @ x - rhs), 0.0):
        return ref
    return x


def lp_solve(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, *,
             maximize: bool = False) -> LpSolution:
    """Solve ``min`` (or ``max``) ``c.x`` over ``{A x <= b, C x = d}``, x free."""
    c = np.asarray(c, dtype=float).reshape(-1)
    n = c.size
    a_ub = _as_matrix(a_ub, n)
    b_ub = _as_vector(b_ub)
    a_eq = _as_matrix(a_eq, n)
    b_eq = _as_vector(b_eq)
    if a_ub.shape[0] != b_ub.size or a_eq.shape[0] != b_eq.size:
        raise ValueError("constraint matrix and right-hand side sizes differ")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(a_ub))
            and np.all(np.isfinite(b_ub)) and np.all(np.isfinite(a_eq))
            and np.all(np.isfinite(b_eq))):
        raise ValueError("LP data must be finite")

    rows = np.vstack([a_ub, a_eq, -a_eq])
    rhs = np.concatenate([b_ub, b_eq, -b_eq])
    # unit row scaling; the dual sees it as a column scaling
    norms = np.abs(rows).max(axis=1) if rows.size else np.zeros(0)
    norms = np.where(norms > 0, norms, 1.0)
    rows = rows / norms[:, None]
    rhs = rhs / norms
    g = c if maximize else -c

    if n == 0:
        if np.all(rhs >= -FEAS_TOL):
            return LpSolution(OPTIMAL, np.zeros(0), 0.0)
        return LpSolution(INFEASIBLE, ray=(rhs < -FEAS_TOL).astype(float))

    res = simplex_standard(rhs, rows.T, g)
    if res.status == OPTIMAL:
        x = _polish(res.duals, rows, rhs, res.basic)
        return LpSolution(OPTIMAL, x, float(c @ x))
    if res.status == UNBOUNDED:
        # dual unbounded: the primal rows admit a Farkas certificate
        return LpSolution(INFEASIBLE, ray=res.certificate / norms)
    # dual infeasible: primal unbounded if it is feasible at all
    feas = simplex_standard(rhs, rows.T, np.zeros(n))
    if feas.status == UNBOUNDED:
        return LpSolution(INFEASIBLE, ray=feas.certificate / norms)
    x = feas.duals
    return LpSolution(UNBOUNDED, x, float("inf") if maximize else float("-inf"),
                      ray=res.certificate)


def is_feasible(a_ub, b_ub, a_eq=None, b_eq=None) -> bool:
    a_ub = np.asarray(a_ub, dtype=float)
    n = a_ub.shape[1] if a_ub.ndim == 2 else np.asarray(a_eq).shape[1]
    return lp_solve(np.zeros(n), a_ub, b_ub, a_eq, b_eq).status != INFEASIBLE



class _Batch:
    """Rows ``A x <= b`` shared by every problem plus one own row per problem."""

    def __init__(self, a, b, own_a, own_b, skip):
        self.a, self.b = a, b
        self.own_a, self.own_b = own_a, own_b
        self.m = a.shape[0]
        # shared row each problem ignores (-1 for none)
        self.skip = skip

    def rows(self, idx: np.ndarray, sel: np.ndarray) -> np.ndarray:
        """Row vectors ``idx`` (shape (k, r)) of the problems ``sel``."""
        out = self.a[np.minimum(idx, self.m - 1)] if self.m else np.zeros(idx.shape + (self.own_a.shape[1],))
        own = idx == self.m
        out[own] = np.broadcast_to(self.own_a[sel][:, None, :], out.shape)[own]
        return out

    def rhs(self, idx: np.ndarray, sel: np.ndarray) -> np.ndarray:
        out = self.b[np.minimum(idx, self.m - 1)] if self.m else np.zeros(idx.shape)
        own = idx == self.m
        out[own] = np.broadcast_to(self.own_b[sel][:, None], out.shape)[own]
        return out

    def ratio(self, x, d, sel, active):
        """Harris ratio test along ``d`` for the problems ``sel``; (-1, inf) when no row blocks."""
        speed = np.column_stack([d @ self.a.T, np.einsum("ij,ij->i", d, self.own_a[sel])])
        slack = np.column_stack([self.b[None, :] - x @ self.a.T,
                                 self.own_b[sel] - np.einsum("ij,ij->i", x, self.own_a[sel])])
        rows = np.arange(sel.size)[:, None]
        valid = active >= 0
        speed[np.broadcast_to(rows, active.shape)[valid], active[valid]] = 0.0
        skipped = self.skip[sel] >= 0
        speed[np.flatnonzero(skipped), self.skip[sel][skipped]] = 0.0
        scale = PIVOT_TOL * np.maximum(1.0, np.abs(d).max(axis=1))
        ahead = speed > scale[:, None]
        room = np.maximum(slack, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            loose = np.where(ahead, (room + HARRIS_TOL) / speed, np.inf)
            tight = np.where(ahead, room / speed, np.inf)
        bound = loose.min(axis=1)
        cand = ahead & (tight <= bound[:, None])
        j = np.argmax(np.where(cand, speed, -np.inf), axis=1)
        blocked = np.isfinite(bound)
        step = np.where(blocked, tight[np.arange(sel.size), j], np.inf)
        return np.where(blocked, j, -1), step


def _stack_solve(mats: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve stacked square systems; returns solutions and a mask of singular ones."""
    bad = np.zeros(mats.shape[0], dtype=bool)
    try:
        return np.linalg.solve(mats, rhs), bad
    except np.linalg.LinAlgError:
        pass
    sv = np.linalg.svd(mats, compute_uv=False)
    bad = sv[:, -1] <= 1e-13 * np.maximum(sv[:, 0], 1e-300)
    out = np.zeros(rhs.shape)
    for p in range(mats.shape[0]):
        if bad[p]:
            continue
        try:
            out[p] = np.linalg.solve(mats[p], rhs[p])
        except np.linalg.LinAlgError:
            bad[p] = True
    return out, bad


def _violation(x, a, b, own_a, own_b, skip) -> np.ndarray:
    shared = x @ a.T - b[None, :]
    skipped = skip >= 0
    shared[np.flatnonzero(skipped), skip[skipped]] = -np.inf
    return np.maximum(shared.max(axis=1, initial=-np.inf),
                      np.einsum("ij,ij->i", x, own_a) - own_b)


def batch_vertex_lp_max(c, a, b, own_a, own_b, x_start, skip=None):
    """Solve many ``max c_k.x`` over ``{a x <= b, own_a_k x <= own_b_k}`` at once.

    Primal active-set simplex on stacked problems that share the rows
    ``a x <= b`` (problem ``k`` ignores shared row ``skip[k]`` when it is
    nonnegative) and a feasible start ``x_start``.  Each start is pushed to a
    vertex along the projected objective, then vertices are exchanged until
    the multipliers are nonnegative.  Problems that hit numerical trouble are
    re-solved one at a time with ``lp_solve``.  Returns ``(values, x)``; an
    unbounded problem, or one no method could solve, gets value ``inf``.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    a = np.asarray(a, dtype=float).reshape(-1, c.shape[1])
    b = np.asarray(b, dtype=float).reshape(-1)
    own_a = np.atleast_2d(np.asarray(own_a, dtype=float))
    own_b = np.asarray(own_b, dtype=float).reshape(-1)
    n_prob, n = c.shape
    skip = np.full(n_prob, -1, dtype=int) if skip is None else np.asarray(skip, dtype=int)
    data = _Batch(a, b, own_a, own_b, skip)
    x = np.tile(np.asarray(x_start, dtype=float), (n_prob, 1))
    active = np.full((n_prob, n), -1, dtype=int)
    trouble = np.zeros(n_prob, dtype=bool)
    unbounded = np.zeros(n_prob, dtype=bool)
    everyone = np.arange(n_prob)

    # crash: walk to a vertex, keeping the objective non-decreasing
    cnorm = np.maximum(np.linalg.norm(c, axis=1), 1e-300)
    for k in range(n):
        if k == 0:
            d = c.copy()
        else:
            act = data.rows(active[:, :k], everyone)
            q = np.linalg.qr(act.transpose(0, 2, 1))[0]
            d = c - (q @ (q.transpose(0, 2, 1) @ c[:, :, None]))[:, :, 0]
        # a nearly cancelled projection is noise: take a null vector instead
        flat = np.linalg.norm(d, axis=1) <= CRASH_TOL * cnorm
        for p in np.flatnonzero(flat & ~trouble):
            act = data.rows(active[p:p + 1, :k], everyone[p:p + 1])[0]
            vt = np.linalg.svd(np.vstack([act, np.zeros((1, n))]))[2]
            d[p] = vt[-1] if vt[-1] @ c[p] >= 0 else -vt[-1]
        d /= np.maximum(np.linalg.norm(d, axis=1), 1e-300)[:, None]
        j, t = data.ratio(x, d, everyone, active)
        flip = j < 0
        if np.any(flip):
            j2, t2 = data.ratio(x[flip], -d[flip], everyone[flip], active[flip])
            d[flip] = -d[flip]
            j[flip], t[flip] = j2, t2
        trouble |= j < 0
        t = np.where(j < 0, 0.0, t)
        x = x + t[:, None] * d
        active[:, k] = np.where(j < 0, data.m, j)

    live = np.flatnonzero(~trouble)
    bland_after = 4 * (data.m + 1 + n)
    max_iter = 50 * (data.m + 1 + n) + 100
    cscale = OPTIMALITY_TOL * np.maximum(1.0, np.abs(c).max(axis=1))
    for it in range(max_iter):
        if live.size == 0:
            break
        basis = data.rows(active[live], live)
        lam, bad = _stack_solve(basis.transpose(0, 2, 1), c[live][:, :, None])
        if np.any(bad):
            trouble[live[bad]] = True
            live = live[~bad]
            continue
        lam = lam[:, :, 0]
        neg = lam < -cscale[live][:, None]
        done = ~neg.any(axis=1)
        live, lam, neg, basis = live[~done], lam[~done], neg[~done], basis[~done]
        if live.size == 0:
            break
        if it < bland_after:
            k = np.argmin(np.where(neg, lam, np.inf), axis=1)
        else:
            k = np.argmin(np.where(neg, active[live], np.iinfo(int).max), axis=1)
        e = np.zeros((live.size, n, 1))
        e[np.arange(live.size), k, 0] = 1.0
        d, bad = _stack_solve(basis, e)
        d = -d[:, :, 0]
        if np.any(bad):
            trouble[live[bad]] = True
        j, t = data.ratio(x[live], d, live, active[live])
        free = (j < 0) & ~bad
        unbounded[live[free]] = True
        move = (j >= 0) & ~bad
        lv = live[move]
        x[lv] = x[lv] + t[move][:, None] * d[move]
        active[lv, k[move]] = j[move]
        live = lv
    else:
        trouble[live] = True

    values = np.full(n_prob, np.inf)
    ok = np.flatnonzero(~trouble & ~unbounded)
    if ok.size:
        # the vertex of the final basis, unless drift made the basis ill-conditioned
        snap, bad = _stack_solve(data.rows(active[ok], ok), data.rhs(active[ok], ok)[:, :, None])
        snap = np.where(bad[:, None], x[ok], snap[:, :, 0])
        scale = FEAS_TOL * np.maximum(1.0, np.maximum(np.abs(b).max(initial=0.0),
                                                      np.abs(own_b[ok])))
        viol_snap = _violation(snap, a, b, own_a[ok], own_b[ok], skip[ok])
        viol_walk = _violation(x[ok], a, b, own_a[ok], own_b[ok], skip[ok])
        use = viol_snap <= np.maximum(viol_walk, scale)
        x[ok[use]] = snap[use]
        viol = np.where(use, viol_snap, viol_walk)
        trouble[ok[viol > scale]] = True
        good = ok[viol <= scale]
        values[good] = np.einsum("ij,ij->i", c[good], x[good])
    for p in np.flatnonzero(trouble):
        kept = np.arange(a.shape[0]) != skip[p]
        try:
            res = lp_solve(c[p], np.vstack([a[kept], own_a[p]]),
                           np.concatenate([b[kept], [own_b[p]]]), maximize=True)
        except LpError:
            # no verdict: report the start with an unbounded value
            x[p], values[p] = x_start, np.inf
            continue
        if res.status == OPTIMAL:
            x[p], values[p] = res.x, res.value
        elif res.status == UNBOUNDED:
            values[p] = np.inf
        else:
            values[p] = -np.inf
    return values, x

"""H-polyhedra ``{x : A x <= b, C x = d}`` over named variables."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..tolerances import DUPLICATE_TOL, FEAS_TOL, PIVOT_TOL, ZERO_TOL


class EmptyPolyhedronError(ValueError):
    pass


class UnboundedError(ValueError):
    """A linear functional is unbounded over a polyhedron."""

    def __init__(self, message: str, ray: np.ndarray | None = None):
        super().__init__(message)
        self.ray = ray


def _matrix(a, n: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, n))
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        # an (m, 0) matrix still carries m rows
        rows = a.shape[0] if a.ndim == 2 and n == 0 else 0
        return np.zeros((rows, n))
    return a.reshape(-1, n)


def _vector(b) -> np.ndarray:
    if b is None:
        return np.zeros(0)
    return np.asarray(b, dtype=float).reshape(-1)


@dataclass(frozen=True)
class HPolyhedron:
    var_names: tuple[str, ...]
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    a_eq: np.ndarray = field(default=None)
    b_eq: np.ndarray = field(default=None)
    empty: bool = False

    def __post_init__(self):
        n = len(self.var_names)
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "a_ineq", _matrix(self.a_ineq, n))
        object.__setattr__(self, "b_ineq", _vector(self.b_ineq))
        object.__setattr__(self, "a_eq", _matrix(self.a_eq, n))
        object.__setattr__(self, "b_eq", _vector(self.b_eq))
        if len(set(self.var_names)) != n:
            raise ValueError("variable names must be unique")
        if self.a_ineq.shape[0] != self.b_ineq.size:
            raise ValueError("inequality rows and right-hand side differ in length")
        if self.a_eq.shape[0] != self.b_eq.size:
            raise ValueError("equality rows and right-hand side differ in length")

    @classmethod
    def from_box(cls, names: Sequence[str], lower, upper) -> "HPolyhedron":
        n = len(names)
        eye = np.eye(n)
        return cls(tuple(names), np.vstack([eye, -eye]),
                   np.concatenate([np.asarray(upper, float), -np.asarray(lower, float)]))

    @classmethod
    def empty_set(cls, names: Sequence[str]) -> "HPolyhedron":
        n = len(names)
        return cls(tuple(names), np.zeros((1, n)), np.array([-1.0]), empty=True)

    @property
    def dim(self) -> int:
        return len(self.var_names)

    @property
    def n_ineq(self) -> int:
        return self.a_ineq.shape[0]

    @property
    def n_eq(self) -> int:
        return self.a_eq.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.var_names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}; known: {', '.join(self.var_names)}") from None

    def violation(self, x) -> tuple[float, int | None]:
        """Largest constraint violation at ``x`` and the offending inequality row.

        Equality residuals count toward the maximum; the row index refers to
        inequalities only (``None`` when an equality is the worst).
        """
        x = np.asarray(x, dtype=float)
        worst, row = -np.inf, None
        if self.n_ineq:
            slack = self.a_ineq @ x - self.b_ineq
            row = int(np.argmax(slack))
            worst = float(slack[row])
        if self.n_eq:
            eq = float(np.abs(self.a_eq @ x - self.b_eq).max())
            if eq > worst:
                worst, row = eq, None
        if worst == -np.inf:
            worst = 0.0
        return worst, row

    def contains(self, x, tol: float = FEAS_TOL) -> bool:
        if self.empty:
            return False
        return self.violation(x)[0] <= tol

    def with_inequalities(self, a, b) -> "HPolyhedron":
        a = _matrix(a, self.dim)
        return HPolyhedron(self.var_names, np.vstack([self.a_ineq, a]),
                           np.concatenate([self.b_ineq, _vector(b)]),
                           self.a_eq, self.b_eq, self.empty)

    def with_equalities(self, a, b) -> "HPolyhedron":
        a = _matrix(a, self.dim)
        return HPolyhedron(self.var_names, self.a_ineq, self.b_ineq,
                           np.vstack([self.a_eq, a]),
                           np.concatenate([self.b_eq, _vector(b)]), self.empty)

    def with_variables(self, names: Iterable[str]) -> "HPolyhedron":
        """Append new (unconstrained) variables as zero columns."""
        names = tuple(names)
        k = len(names)
        return HPolyhedron(self.var_names + names,
                           np.hstack([self.a_ineq, np.zeros((self.n_ineq, k))]), self.b_ineq,
                           np.hstack([self.a_eq, np.zeros((self.n_eq, k))]), self.b_eq,
                           self.empty)

    def reorder(self, names: Sequence[str]) -> "HPolyhedron":
        """Same set with columns permuted into ``names`` (must be a permutation)."""
        if sorted(names) != sorted(self.var_names):
            raise ValueError("reorder needs a permutation of the variable names")
        idx = [self.index(nm) for nm in names]
        return HPolyhedron(tuple(names), self.a_ineq[:, idx], self.b_ineq,
                           self.a_eq[:, idx], self.b_eq, self.empty)

    def inflate(self, widths) -> "HPolyhedron":
        """Outer bound of the Minkowski sum with the box ``[-w, w]``."""
        widths = np.asarray(widths, dtype=float)
        b = self.b_ineq + np.abs(self.a_ineq) @ widths
        # equalities become slabs of the same width
        slab = np.abs(self.a_eq) @ widths
        a = np.vstack([self.a_ineq, self.a_eq, -self.a_eq])
        return HPolyhedron(self.var_names, a,
                           np.concatenate([b, self.b_eq + slab, -self.b_eq + slab]),
                           empty=self.empty)

    # -- serialization -------------------------------------------------
    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        out = io.StringIO()
        for line in header_lines:
            out.write(f"# {line}\n")
        out.write(",".join([f"var:{nm}" for nm in self.var_names] + ["rhs"]) + "\n")
        for row, rhs in zip(self.a_ineq, self.b_ineq):
            out.write(",".join(_fmt(v) for v in (*row, rhs)) + "\n")
        for row, rhs in zip(self.a_eq, self.b_eq):
            out.write(",".join(["eq"] + [_fmt(v) for v in (*row, rhs)]) + "\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "HPolyhedron":
        lines = [ln.strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln and not ln.startswith("#")]
        if not lines:
            raise ValueError("empty polyhedron CSV")
        header = lines[0].split(",")
        if header[-1] != "rhs" or not all(h.startswith("var:") for h in header[:-1]):
            raise ValueError("polyhedron CSV header must be var:<name>,...,rhs")
        names = tuple(h[4:] for h in header[:-1])
        ineq, eq = [], []
        for ln in lines[1:]:
            cells = ln.split(",")
            target = ineq
            if cells[0] == "eq":
                target, cells = eq, cells[1:]
            if len(cells) != len(names) + 1:
                raise ValueError(f"row has {len(cells)} cells, expected {len(names) + 1}")
            target.append([float(c) for c in cells])
        ineq = np.array(ineq).reshape(-1, len(names) + 1)
        eq = np.array(eq).reshape(-1, len(names) + 1)
        empty = bool(np.any((np.abs(ineq[:, :-1]).sum(axis=1) == 0) & (ineq[:, -1] < 0)))
        return cls(names, ineq[:, :-1], ineq[:, -1], eq[:, :-1], eq[:, -1], empty=empty)


def _fmt(v: float) -> str:
    v = float(v) + 0.0  # drop negative zero
    return format(v, ".17g")


def _normalize_rows(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(a, axis=1)
    scale = np.where(np.abs(norms - 1.0) <= 4 * np.finfo(float).eps, 1.0, norms)
    scale = np.where(scale > 0, scale, 1.0)
    return a / scale[:, None], b / scale


def _lex_order(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 0:
        return np.zeros(0, dtype=int)
    # np.lexsort sorts by the last key first
    return np.lexsort(rows.T[::-1])


def canonicalize(poly: HPolyhedron) -> HPolyhedron:
    """Unit-norm rows, tiny coefficients zeroed, sorted, parallel duplicates merged."""
    if poly.empty:
        return HPolyhedron.empty_set(poly.var_names)
    a, b = _normalize_rows(poly.a_ineq, poly.b_ineq)
    a = np.where(np.abs(a) < ZERO_TOL, 0.0, a) + 0.0
    zero = ~np.any(a != 0.0, axis=1)
    if np.any(zero & (b < -FEAS_TOL)):
        return HPolyhedron.empty_set(poly.var_names)
    a, b = a[~zero], b[~zero]
    order = _lex_order(np.column_stack([a, b]))
    a, b = a[order], b[order]
    kept_a = np.empty_like(a)
    kept_b = np.empty_like(b)
    count = 0
    for row, rhs in zip(a, b):
        if count:
            close = np.flatnonzero(np.max(np.abs(kept_a[:count] - row), axis=1) <= DUPLICATE_TOL)
            if close.size:
                k = close[0]
                kept_b[k] = min(kept_b[k], rhs)
                continue
        kept_a[count], kept_b[count] = row, rhs
        count += 1
    a = kept_a[:count]
    b = kept_b[:count] + 0.0

    c, d = _normalize_rows(poly.a_eq, poly.b_eq)
    c = np.where(np.abs(c) < ZERO_TOL, 0.0, c)
    # sign convention: first nonzero coefficient positive
    for i in range(c.shape[0]):
        nz = np.flatnonzero(c[i])
        if nz.size and c[i, nz[0]] < 0:
            c[i], d[i] = -c[i], -d[i]
    c, d = c + 0.0, d + 0.0
    order = _lex_order(np.column_stack([c, d]))
    c, d = c[order], d[order]
    keep = []
    for i in range(c.shape[0]):
        if not np.any(c[i] != 0.0):
            if abs(d[i]) > FEAS_TOL:
                return HPolyhedron.empty_set(poly.var_names)
            continue
        if keep and np.max(np.abs(c[keep[-1]] - c[i])) <= DUPLICATE_TOL \
                and abs(d[keep[-1]] - d[i]) <= DUPLICATE_TOL:
            continue
        keep.append(i)
    return HPolyhedron(poly.var_names, a, b, c[keep], d[keep])


@dataclass(frozen=True)
class AffineMap:
    """``full = offset + matrix @ reduced``, mapping reduced to full coordinates."""

    reduced_names: tuple[str, ...]
    full_names: tuple[str, ...]
    offset: np.ndarray
    matrix: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.offset + self.matrix @ t if t.ndim == 1 else self.offset + t @ self.matrix.T


@dataclass(frozen=True)
class Reduction:
    reduced: HPolyhedron
    recover: AffineMap
    # full variable names solved for by the equalities (dependent variables)
    dependent: tuple[str, ...]


def eliminate_equalities(poly: HPolyhedron, keep: Iterable[str] = ()) -> Reduction:
    """Substitute the equality system away by Gauss-Jordan elimination.

    Pivots are taken on variables outside ``keep`` whenever possible, so kept
    variables stay explicit coordinates of the reduced system.  A kept
    variable is only solved for when the remaining equalities involve kept
    variables alone; it is then an affine function of other kept variables.
    Inconsistent equalities yield a reduction whose ``reduced.empty`` is set.
    """
    keep = set(keep)
    n = poly.dim
    c, d = _normalize_rows(poly.a_eq.copy(), poly.b_eq.copy())
    c = np.hstack([c, d[:, None]])
    n_rows = c.shape[0]
    preferred = np.array([nm not in keep for nm in poly.var_names])
    pivots: list[tuple[int, int]] = []
    remaining = list(range(n_rows))
    scale = 1.0
    while remaining:
        block = c[remaining, :n]
        best = None
        for mask in (preferred, ~preferred):
            sub = np.where(mask[None, :], np.abs(block), 0.0)
            if sub.size and sub.max() > PIVOT_TOL * scale:
                r, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
                best = (remaining[r], int(j))
                break
        if best is None:
            break
        r, j = best
        c[r] /= c[r, j]
        for i in range(n_rows):
            if i != r and c[i, j] != 0.0:
                c[i] -= c[i, j] * c[r]
        c[np.abs(c) < ZERO_TOL] = 0.0
        pivots.append((r, j))
        remaining.remove(r)

    consistent = all(abs(c[r, n]) <= 1e-8 for r in remaining)
    pivot_cols = [j for _, j in pivots]
    free_cols = [j for j in range(n) if j not in set(pivot_cols)]
    free_names = tuple(poly.var_names[j] for j in free_cols)

    offset = np.zeros(n)
    matrix = np.zeros((n, len(free_cols)))
    for k, j in enumerate(free_cols):
        matrix[j, k] = 1.0
    for r, j in pivots:
        offset[j] = c[r, n]
        matrix[j] = -c[r, free_cols]
    recover = AffineMap(free_names, poly.var_names, offset, matrix)
    dependent = tuple(poly.var_names[j] for j in pivot_cols)
    if not consistent or poly.empty:
        return Reduction(HPolyhedron.empty_set(free_names), recover, dependent)

    a = poly.a_ineq @ matrix
    b = poly.b_ineq - poly.a_ineq @ offset
    a[np.abs(a) < ZERO_TOL] = 0.0
    reduced = HPolyhedron(free_names, a, b)
    return Reduction(reduced, recover, dependent)

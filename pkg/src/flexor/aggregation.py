"""Linearized DSO constraint set and its feasible operational regions (FORs)."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .coupling import (CouplingEntry, CouplingSpec, angle_diff, branch_p, branch_q, bus_v,
                       exchange_2d, full_7d, parse_label)
from .grid_model import CaseError, GridCase, merge_boundary_buses
from .polytope import (HPolyhedron, ProjectionStats, UnboundedError, canonicalize, lp_solve,
                       project)
from .polytope.lp import OPTIMAL, UNBOUNDED
from .powerflow import OperatingPoint, linear_branch_flow_coeffs, linearize
from .slp import AcSample, Objective, slp_optimize
from .tolerances import AC_CONSTRAINT_TOL, MEMBERSHIP_TOL

log = logging.getLogger(__name__)

TABLE_VARIANTS = ("free", "fixed_angle", "fixed_all")
VARIANTS = TABLE_VARIANTS + ("merged_bus", "aggregated_sum")

__all__ = [
    "CouplingEntry", "CouplingSpec", "DsoFeasibleSet", "ForResult", "OperatingPointError",
    "TABLE_VARIANTS", "VARIANTS", "angle_diff", "apply_boundary_variant", "branch_p",
    "branch_q", "build_feasible_set", "bus_v", "compute_for", "compute_merged_for",
    "compute_operating_point", "compute_sum_for", "coupling_values", "angle_row_sums", "exchange_2d", "for_membership",
    "full_7d", "op_hash", "parse_label", "solve_operating_point",
]


class OperatingPointError(RuntimeError):
    def __init__(self, message: str, sample: AcSample):
        super().__init__(message)
        self.sample = sample


def solve_operating_point(case: GridCase, c1: float = 1.0, c2: float = 1.0
                          ) -> tuple[OperatingPoint, AcSample]:
    """Least-curtailment AC operating point with every boundary bus at v = 1, theta = 0.

    Minimizes ``sum(-c1 * pg**2 + c2 * qg**2)`` over the generators.
    """
    quad = {}
    for g in sorted(case.generators, key=lambda g: g.bus):
        quad[f"pg_{g.bus}"] = -float(c1)
        quad[f"qg_{g.bus}"] = float(c2)
    sample = slp_optimize(case, Objective({}, quad, "operating_point"))
    if not sample.converged:
        steps = "\n".join(f"  iter {t[0]}: merit {t[1]:.9g}, predicted {t[2]:.3g}, "
                          f"actual {t[3]:.3g}, radius {t[4]:.3g}" for t in sample.trace[-10:])
        raise OperatingPointError(f"operating point search failed: {sample.message}\n{steps}",
                                  sample)
    return linearize(case, sample.state), sample


def compute_operating_point(case: GridCase, c1: float = 1.0, c2: float = 1.0
                            ) -> OperatingPoint:
    return solve_operating_point(case, c1, c2)[0]


def op_hash(op: OperatingPoint) -> str:
    """Short digest of the expansion state, used to tag serialized results."""
    text = ",".join(format(float(x) + 0.0, ".12e")
                    for x in np.concatenate([op.state.v, op.state.theta]))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class DsoFeasibleSet:
    poly: HPolyhedron
    op: OperatingPoint
    case: GridCase
    variant: str = "free"
    warnings: tuple[str, ...] = ()

    def anchor(self) -> np.ndarray:
        """The operating point expressed in the variables of ``poly``."""
        return _anchor(self.case, self.op, self.poly.var_names)


def _bus_vars(case: GridCase) -> list[str]:
    gen = set(case.generator_buses)
    names = []
    for bus in case.buses:
        if bus.id in gen:
            names += [f"pg_{bus.id}", f"qg_{bus.id}"]
        names += [f"p_{bus.id}", f"q_{bus.id}", f"v_{bus.id}", f"theta_{bus.id}"]
    return names


def _anchor(case: GridCase, op: OperatingPoint, names: Sequence[str]) -> np.ndarray:
    vals: dict[str, float] = {}
    for i, bus in enumerate(case.buses):
        vals[f"p_{bus.id}"] = op.injection.p[i]
        vals[f"q_{bus.id}"] = op.injection.q[i]
        vals[f"v_{bus.id}"] = op.state.v[i]
        vals[f"theta_{bus.id}"] = op.state.theta[i]
    for g in case.generators:
        i = case.index(g.bus)
        vals[f"pg_{g.bus}"] = op.injection.p[i] + case.buses[i].p_demand
        vals[f"qg_{g.bus}"] = op.injection.q[i] + case.buses[i].q_demand
    for br in case.interconnections:
        form = linear_branch_flow_coeffs(case, op, br)
        vals[f"p_{br.from_bus}_{br.to_bus}"] = form.p0
        vals[f"q_{br.from_bus}_{br.to_bus}"] = form.q0
    bnd = case.boundary_ids
    if len(bnd) >= 2:
        vals["dtheta"] = vals[f"theta_{bnd[0]}"] - vals[f"theta_{bnd[1]}"]
    vals["p_sum"] = sum(vals[f"p_{br.from_bus}_{br.to_bus}"] for br in case.interconnections)
    vals["q_sum"] = sum(vals[f"q_{br.from_bus}_{br.to_bus}"] for br in case.interconnections)
    return np.array([vals[nm] for nm in names], dtype=float)


class _Rows:
    def __init__(self, names: Sequence[str]):
        self.pos = {nm: i for i, nm in enumerate(names)}
        self.n = len(names)
        self.a: list[np.ndarray] = []
        self.b: list[float] = []

    def add(self, coeffs: dict[str, float], rhs: float):
        r = np.zeros(self.n)
        for nm, c in coeffs.items():
            r[self.pos[nm]] += c
        self.a.append(r)
        self.b.append(float(rhs))

    def matrix(self):
        return np.array(self.a, dtype=float).reshape(len(self.a), self.n), np.array(self.b)


def build_feasible_set(case: GridCase, op: OperatingPoint) -> DsoFeasibleSet:
    """Linearized constraint set around ``op``.

    Equalities: first-order injection model, nodal balance at distribution
    buses, linearized interconnection flows and the angle reference at the
    lowest-id boundary bus.  Inequalities: generator limits and capability
    cone, voltage bounds and import-only interconnections.
    """
    n = case.n_bus
    if op.state.v.size != n:
        raise CaseError("operating point does not match the case size")
    names = _bus_vars(case)
    for br in case.interconnections:
        names += [f"p_{br.from_bus}_{br.to_bus}", f"q_{br.from_bus}_{br.to_bus}"]
    eq, ineq = _Rows(names), _Rows(names)

    th0, v0 = op.state.theta, op.state.v
    jac = op.jacobian
    ids = case.bus_ids
    for i, bid in enumerate(ids):
        for kind, base, row in (("p", op.injection.p[i], jac[i]),
                                ("q", op.injection.q[i], jac[n + i])):
            coeffs = {f"{kind}_{bid}": 1.0}
            for j, other in enumerate(ids):
                if row[j] != 0.0:
                    coeffs[f"theta_{other}"] = coeffs.get(f"theta_{other}", 0.0) - row[j]
                if row[n + j] != 0.0:
                    coeffs[f"v_{other}"] = coeffs.get(f"v_{other}", 0.0) - row[n + j]
            eq.add(coeffs, base - row[:n] @ th0 - row[n:] @ v0)

    gen = {g.bus: g for g in case.generators}
    for bus in case.buses:
        if bus.is_boundary:
            continue
        if bus.id in gen:
            eq.add({f"p_{bus.id}": 1.0, f"pg_{bus.id}": -1.0}, -bus.p_demand)
            eq.add({f"q_{bus.id}": 1.0, f"qg_{bus.id}": -1.0}, -bus.q_demand)
        else:
            eq.add({f"p_{bus.id}": 1.0}, -bus.p_demand)
            eq.add({f"q_{bus.id}": 1.0}, -bus.q_demand)

    for br in case.interconnections:
        form = linear_branch_flow_coeffs(case, op, br)
        k, l = br.from_bus, br.to_bus
        terminals = (f"theta_{k}", f"theta_{l}", f"v_{k}", f"v_{l}")
        for kind, base, coeffs in (("p", form.p0, form.p_coeffs), ("q", form.q0, form.q_coeffs)):
            row = {f"{kind}_{k}_{l}": 1.0}
            for nm, c in zip(terminals, coeffs):
                row[nm] = row.get(nm, 0.0) - c
            eq.add(row, base - coeffs @ form.anchor)

    boundary = case.boundary_ids
    if boundary:
        eq.add({f"theta_{boundary[0]}": 1.0}, 0.0)

    for g in sorted(case.generators, key=lambda g: g.bus):
        p, q = f"pg_{g.bus}", f"qg_{g.bus}"
        ineq.add({p: -1.0}, 0.0)
        ineq.add({p: 1.0}, g.f_max)
        ineq.add({p: 1.0}, g.s_max * np.cos(g.alpha))
        ineq.add({q: g.alpha, p: -1.0}, 0.0)
        ineq.add({q: -g.alpha, p: -1.0}, 0.0)
    for bus in case.buses:
        ineq.add({f"v_{bus.id}": 1.0}, bus.v_max)
        ineq.add({f"v_{bus.id}": -1.0}, -bus.v_min)
    for br in case.interconnections:
        ineq.add({f"p_{br.from_bus}_{br.to_bus}": -1.0}, 0.0)

    a_eq, b_eq = eq.matrix()
    a_in, b_in = ineq.matrix()
    poly = HPolyhedron(tuple(names), a_in, b_in, a_eq, b_eq)

    x0 = _anchor(case, op, names)
    resid = float(np.max(np.abs(a_eq @ x0 - b_eq))) if b_eq.size else 0.0
    if resid > 1e-8:
        raise ValueError(f"operating point misses the linear model by {resid:.3e}")
    warnings = []
    worst = float(np.max(a_in @ x0 - b_in)) if b_in.size else 0.0
    if worst > AC_CONSTRAINT_TOL:
        row = int(np.argmax(a_in @ x0 - b_in))
        warnings.append(f"operating point violates inequality row {row} by {worst:.3e}; "
                        "the feasible set may be empty")
        log.warning(warnings[-1])
    return DsoFeasibleSet(poly, op, case, "free", tuple(warnings))


def apply_boundary_variant(fs: DsoFeasibleSet, variant: str) -> DsoFeasibleSet:
    """Pin the boundary angles (``fixed_angle``) and voltages (``fixed_all``)."""
    if variant not in TABLE_VARIANTS:
        raise ValueError(f"variant must be one of {', '.join(TABLE_VARIANTS)}")
    if variant == "free":
        return replace(fs, variant="free")
    boundary = fs.case.boundary_ids
    rows = _Rows(fs.poly.var_names)
    for other in boundary[1:]:
        rows.add({f"theta_{boundary[0]}": 1.0, f"theta_{other}": -1.0}, 0.0)
    if variant == "fixed_all":
        for b in boundary:
            rows.add({f"v_{b}": 1.0}, 1.0)
    a, b = rows.matrix()
    return replace(fs, poly=fs.poly.with_equalities(a, b), variant=variant)


@dataclass(frozen=True)
class ForResult:
    poly: HPolyhedron
    coupling: CouplingSpec
    variant: str
    stats: dict = field(default_factory=dict)
    op_digest: str = ""
    base_variant: str = ""

    @property
    def labels(self) -> list[str]:
        return list(self.poly.var_names)

    @property
    def empty(self) -> bool:
        return self.poly.empty

    def header(self) -> list[str]:
        lines = [f"variant: {self.variant}"]
        if self.base_variant:
            lines.append(f"base_variant: {self.base_variant}")
        lines += [f"coupling: {' '.join(self.labels)}",
                  f"operating_point: {self.op_digest}"]
        return lines

    def to_csv(self) -> str:
        return self.poly.to_csv(self.header())

    def coordinate_ranges(self) -> np.ndarray:
        """``(lo, hi)`` per coordinate."""
        out = np.zeros((len(self.labels), 2))
        for j in range(len(self.labels)):
            e = np.zeros(len(self.labels))
            e[j] = 1.0
            out[j] = (-_support(self.poly, -e), _support(self.poly, e))
        return out

    def support(self, direction) -> float:
        return _support(self.poly, np.asarray(direction, dtype=float))


def _support(poly: HPolyhedron, d: np.ndarray) -> float:
    res = lp_solve(d, poly.a_ineq, poly.b_ineq, poly.a_eq, poly.b_eq, maximize=True)
    if res.status != OPTIMAL:
        raise ValueError(f"support LP status {res.status}")
    return float(res.value)


def _with_coupling_vars(fs: DsoFeasibleSet, coupling: CouplingSpec) -> HPolyhedron:
    poly = fs.poly
    extra = [e for e in coupling.entries
             if e.kind in ("dtheta", "p_sum", "q_sum") and e.label not in poly.var_names]
    if not extra:
        return poly
    poly = poly.with_variables([e.label for e in extra])
    rows = _Rows(poly.var_names)
    for e in extra:
        if e.kind == "dtheta":
            k, l = e.buses
            rows.add({"dtheta": 1.0, f"theta_{k}": -1.0, f"theta_{l}": 1.0}, 0.0)
        else:
            coeffs = {e.label: 1.0}
            for br in fs.case.interconnections:
                coeffs[f"{e.kind[0]}_{br.from_bus}_{br.to_bus}"] = -1.0
            rows.add(coeffs, 0.0)
    a, b = rows.matrix()
    return poly.with_equalities(a, b)


def compute_for(fs: DsoFeasibleSet, coupling: CouplingSpec, *, variant: str | None = None,
                base_variant: str = "") -> ForResult:
    """Project the feasible set onto the coupling coordinates."""
    coupling.validate(fs.case)
    labels = coupling.labels
    start = time.perf_counter()
    poly = _with_coupling_vars(fs, coupling)
    if coupling.fixed:
        rows = _Rows(poly.var_names)
        for nm, val in coupling.fixed.items():
            rows.add({nm: 1.0}, val)
        poly = poly.with_equalities(*rows.matrix())
    stats = ProjectionStats()
    out = project(poly, labels, stats=stats)
    info = {**stats.as_dict(), "warnings": list(fs.warnings),
            "wall_time_s": time.perf_counter() - start}
    variant = variant or fs.variant
    if out.empty:
        log.info("FOR %s is empty", variant)
    else:
        _check_bounded(out)
        out = canonicalize(out)
    info["rows"] = [list(r) for r in info["rows"]]
    info["n_ineq"], info["n_eq"] = out.n_ineq, out.n_eq
    return ForResult(out, coupling, variant, info, op_hash(fs.op), base_variant)


def _check_bounded(poly: HPolyhedron) -> None:
    for j, nm in enumerate(poly.var_names):
        for sign in (1.0, -1.0):
            d = np.zeros(poly.dim)
            d[j] = sign
            res = lp_solve(d, poly.a_ineq, poly.b_ineq, poly.a_eq, poly.b_eq, maximize=True)
            if res.status == UNBOUNDED:
                raise UnboundedError(f"FOR is unbounded in coordinate {nm} "
                                     f"({'+' if sign > 0 else '-'} direction)", res.ray)


def compute_sum_for(fs: DsoFeasibleSet, variant: str) -> ForResult:
    """Total exchange FOR over ``(p_sum, q_sum)`` under a boundary variant."""
    if len(fs.case.interconnections) != 2:
        raise CaseError("the aggregated FOR needs exactly two interconnection branches")
    pinned = apply_boundary_variant(fs, variant)
    coupling = CouplingSpec((CouplingEntry("p_sum"), CouplingEntry("q_sum")))
    return compute_for(pinned, coupling, variant="aggregated_sum", base_variant=variant)


def compute_merged_for(case: GridCase, c1: float = 1.0, c2: float = 1.0
                       ) -> tuple[ForResult, DsoFeasibleSet]:
    """FOR of the grid with all boundary buses fused, at v = 1 and theta = 0."""
    merged = merge_boundary_buses(case) if len(case.boundary_ids) > 1 else case
    op = compute_operating_point(merged, c1, c2)
    fs = apply_boundary_variant(build_feasible_set(merged, op), "fixed_all")
    coupling = CouplingSpec((CouplingEntry("p_sum"), CouplingEntry("q_sum")))
    return compute_for(fs, coupling, variant="merged_bus"), fs


def for_membership(fr: ForResult, z, tol: float = MEMBERSHIP_TOL
                   ) -> tuple[bool, float, int | None]:
    """Halfspace test; returns (member, worst violation, index of the worst row).

    Row indices count inequalities first, then equalities.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (fr.poly.dim,):
        raise ValueError(f"point has {z.size} coordinates, FOR has {fr.poly.dim}")
    if fr.poly.empty:
        return False, float("inf"), None
    worst, row = fr.poly.violation(z)
    return worst <= tol, worst, row


def coupling_values(case: GridCase, op: OperatingPoint, labels: Sequence[str]) -> np.ndarray:
    """Coupling coordinates of the operating point."""
    return _anchor(case, op, labels)


def angle_row_sums(op: OperatingPoint) -> np.ndarray:
    """Row sums of the angle blocks of the injection Jacobian (zero by offset invariance)."""
    n = op.state.v.size
    return np.concatenate([op.jacobian[:n, :n].sum(axis=1), op.jacobian[n:, :n].sum(axis=1)])

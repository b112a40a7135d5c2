"""Successive linear programming over the AC-feasible set of a distribution grid.

The decision vector holds the generator set points (and the voltage of any
boundary bus that is not pinned).  For every candidate the AC state is
restored by a Newton solve, so accepted iterates are always power-flow
feasible; the LP works on first-order sensitivities of the outputs with an
l1 elastic penalty on the nonlinear constraints and an infinity-norm trust
region.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .coupling import CouplingSpec, branch_p
from .grid_model import GridCase, build_admittance
from .polytope.lp import lp_solve
from .powerflow import (BusSpec, NewtonError, StateVector, jacobian, mismatch_norm,
                        newton_solve)
from .tolerances import AC_CONSTRAINT_TOL, AC_MISMATCH_TOL

log = logging.getLogger(__name__)

INITIAL_RADIUS = 0.1
MAX_RADIUS = 1.0
SHRINK = 0.5
EXPAND = 1.5
STEP_TOL = 1e-7
RADIUS_TOL = 1e-9
PENALTY = 1e3
MAX_CUTS = 80
MAX_KELLEY = 60
CUT_TOL = 1e-10


@dataclass(frozen=True)
class Objective:
    """``sum(linear[label] * z[label]) + sum(quadratic[name] * u[name]**2)``.

    ``linear`` keys are coupling labels, ``quadratic`` keys decision names
    such as ``pg_6`` or ``qg_6``.
    """

    linear: Mapping[str, float] = field(default_factory=dict)
    quadratic: Mapping[str, float] = field(default_factory=dict)
    label: str = ""

    @classmethod
    def along(cls, coupling: CouplingSpec, direction, label: str = "") -> "Objective":
        d = np.asarray(direction, dtype=float)
        if d.shape != (coupling.dim,):
            raise ValueError(f"direction needs {coupling.dim} entries")
        lin = {nm: float(c) for nm, c in zip(coupling.labels, d) if c != 0.0}
        return cls(lin, {}, label or direction_label(coupling.labels, d))


def direction_label(labels, direction) -> str:
    parts = []
    for nm, c in zip(labels, direction):
        if c == 0:
            continue
        sign = "+" if c > 0 else "-"
        mag = "" if abs(c) == 1 else f"{abs(c):g}*"
        parts.append(f"{sign}{mag}{nm}")
    return "".join(parts) or "zero"


@dataclass
class AcSample:
    direction: str
    z: np.ndarray
    state: StateVector
    converged: bool
    objective: float
    decisions: dict[str, float]
    mismatch: float
    max_violation: float
    iterations: int
    message: str = ""
    trace: list = field(default_factory=list, repr=False)


class _Problem:
    """Decision layout, constraints and sensitivities for one AC problem."""

    def __init__(self, case: GridCase, coupling: CouplingSpec,
                 pins: Mapping[int, tuple[float, float]], fixed: Mapping[str, float]):
        self.case = case
        self.y = build_admittance(case)
        self.coupling = coupling
        self.pins = dict(pins)
        boundary = case.boundary_ids
        for b in self.pins:
            if b not in boundary:
                raise ValueError(f"bus {b} is not a boundary bus and cannot be pinned")
        self.free_boundary = [b for b in boundary if b not in self.pins]
        self.ref = boundary[0] if boundary else None
        gens = sorted(case.generators, key=lambda g: g.bus)
        self.gens = gens
        self.names = ([f"pg_{g.bus}" for g in gens] + [f"qg_{g.bus}" for g in gens]
                      + [f"v_{b}" for b in self.free_boundary]
                      + [f"theta_{b}" for b in self.free_boundary if b != self.ref])
        self.pos = {nm: i for i, nm in enumerate(self.names)}
        self.fixed = {coupling.labels.index(k): float(v) for k, v in fixed.items()}
        n = case.n_bus
        self.slack = np.array([case.index(b) for b in boundary], dtype=int)
        self.other = np.array([i for i in range(n) if i not in set(self.slack)], dtype=int)
        self.flows = CouplingSpec(tuple(branch_p(br.from_bus, br.to_bus)
                                        for br in case.interconnections))
        self._linear_constraints()

    @property
    def n(self) -> int:
        return len(self.names)

    def _linear_constraints(self):
        rows, rhs = [], []

        def add(coeffs: dict, b: float):
            r = np.zeros(self.n)
            for nm, c in coeffs.items():
                r[self.pos[nm]] = c
            rows.append(r)
            rhs.append(b)

        for g in self.gens:
            p, q = f"pg_{g.bus}", f"qg_{g.bus}"
            add({p: -1.0}, 0.0)
            add({p: 1.0}, g.f_max)
            add({p: 1.0}, g.s_max * np.cos(g.alpha))
            add({q: g.alpha, p: -1.0}, 0.0)
            add({q: -g.alpha, p: -1.0}, 0.0)
        for b in self.free_boundary:
            bus = self.case.bus(b)
            add({f"v_{b}": 1.0}, bus.v_max)
            add({f"v_{b}": -1.0}, -bus.v_min)
        self.lin_a = np.array(rows, dtype=float).reshape(len(rows), self.n)
        self.lin_b = np.array(rhs, dtype=float)

    def default_start(self) -> np.ndarray:
        u = np.zeros(self.n)
        for g in self.gens:
            u[self.pos[f"pg_{g.bus}"]] = 0.5 * min(g.f_max, g.s_max * np.cos(g.alpha))
        for b in self.free_boundary:
            u[self.pos[f"v_{b}"]] = 1.0
        return u

    def bus_spec(self, u: np.ndarray) -> dict[int, BusSpec]:
        pg = {g.bus: u[self.pos[f"pg_{g.bus}"]] for g in self.gens}
        qg = {g.bus: u[self.pos[f"qg_{g.bus}"]] for g in self.gens}
        spec = {}
        for bus in self.case.buses:
            if bus.id in self.pins:
                v, th = self.pins[bus.id]
                spec[bus.id] = BusSpec("slack", v=v, theta=th)
            elif bus.is_boundary:
                th = 0.0 if bus.id == self.ref else float(u[self.pos[f"theta_{bus.id}"]])
                spec[bus.id] = BusSpec("slack", v=float(u[self.pos[f"v_{bus.id}"]]), theta=th)
            else:
                spec[bus.id] = BusSpec("pq", p=pg.get(bus.id, 0.0) - bus.p_demand,
                                       q=qg.get(bus.id, 0.0) - bus.q_demand)
        return spec

    def restore(self, u: np.ndarray, start: StateVector | None) -> StateVector:
        return newton_solve(self.case, self.bus_spec(u), start=start, y=self.y).state

    def sensitivity(self, state: StateVector) -> np.ndarray:
        """d(theta, v)/du for the restored state as a (2N, n_u) matrix."""
        n = self.case.n_bus
        jac = jacobian(state, self.y)
        rows = np.concatenate([self.other, n + self.other])
        dfdu = np.zeros((rows.size, self.n))
        col_of = {i: r for r, i in enumerate(self.other)}
        for g in self.gens:
            i = col_of[self.case.index(g.bus)]
            dfdu[i, self.pos[f"pg_{g.bus}"]] = -1.0
            dfdu[self.other.size + i, self.pos[f"qg_{g.bus}"]] = -1.0
        for b in self.free_boundary:
            ib = self.case.index(b)
            dfdu[:, self.pos[f"v_{b}"]] = jac[rows, n + ib]
            if b != self.ref:
                dfdu[:, self.pos[f"theta_{b}"]] = jac[rows, ib]
        dxdu = -np.linalg.solve(jac[np.ix_(rows, rows)], dfdu)
        d = np.zeros((2 * n, self.n))
        d[rows] = dxdu
        for b in self.free_boundary:
            ib = self.case.index(b)
            d[n + ib, self.pos[f"v_{b}"]] = 1.0
            if b != self.ref:
                d[ib, self.pos[f"theta_{b}"]] = 1.0
        return d

    def outputs(self, state: StateVector, with_grad: bool = True):
        """Coupling values, nonlinear inequality values ``g <= 0`` and pin residuals."""
        case, n = self.case, self.case.n_bus
        z = self.coupling.evaluate(case, state)
        g_val, g_grad = [], []
        for i in self.other:
            bus = case.buses[i]
            g_val += [state.v[i] - bus.v_max, bus.v_min - state.v[i]]
            if with_grad:
                e = np.zeros(2 * n)
                e[n + i] = 1.0
                g_grad += [e, -e]
        flows = self.flows
        g_val += list(-flows.evaluate(case, state))
        h_val = np.array([z[j] - v for j, v in self.fixed.items()])
        if not with_grad:
            return z, np.array(g_val), h_val, None
        zg = self.coupling.gradient(case, state)
        g_grad += list(-flows.gradient(case, state))
        h_grad = np.array([zg[j] for j in self.fixed]).reshape(-1, 2 * n)
        return z, np.array(g_val), h_val, (zg, np.array(g_grad).reshape(-1, 2 * n), h_grad)


@dataclass
class _Point:
    u: np.ndarray
    state: StateVector
    z: np.ndarray
    g: np.ndarray
    h: np.ndarray
    f: float
    phi: float


def _violation(g: np.ndarray, h: np.ndarray) -> float:
    return float(np.sum(np.maximum(g, 0.0)) + np.sum(np.abs(h)))


class _Solver:
    def __init__(self, prob: _Problem, objective: Objective, penalty: float):
        self.prob = prob
        self.penalty = penalty
        labels = prob.coupling.labels
        for nm in objective.linear:
            if nm not in labels:
                raise ValueError(f"objective term {nm!r} is not a coupling label "
                                 f"(valid: {', '.join(labels)})")
        for nm in objective.quadratic:
            if nm not in prob.pos:
                raise ValueError(f"objective term {nm!r} is not a decision variable "
                                 f"(valid: {', '.join(prob.names)})")
        self.c = np.array([objective.linear.get(nm, 0.0) for nm in labels])
        self.w = np.array([objective.quadratic.get(nm, 0.0) for nm in prob.names])
        self.convex = np.flatnonzero(self.w > 0)
        self.cuts = {int(i): [] for i in self.convex}

    def point(self, u: np.ndarray, start: StateVector | None) -> _Point:
        state = self.prob.restore(u, start)
        z, g, h, _ = self.prob.outputs(state, with_grad=False)
        f = float(self.c @ z + self.w @ (u * u))
        return _Point(u, state, z, g, h, f, f + self.penalty * _violation(g, h))

    def add_cuts(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        """Record tangent points at ``u``; True when any new point was added."""
        added = False
        for i in self.convex:
            pts = self.cuts[int(i)]
            if not any(abs(x - u[i]) <= tol for x in pts):
                pts.append(float(u[i]))
                del pts[:-MAX_CUTS]
                added = True
        return added

    def polish(self, pt: _Point, rounds: int = 8) -> _Point:
        """Diagonal Newton steps on convex-cost decisions that sit off their limits.

        LP tolerances resolve a quadratic minimum only to about the square root
        of round-off; this settles such coordinates at their stationary value.
        """
        prob = self.prob
        for _ in range(rounds):
            slack = prob.lin_b - prob.lin_a @ pt.u
            active = np.abs(prob.lin_a[slack <= 1e-9]).sum(axis=0) > 0 if slack.size else \
                np.zeros(prob.n, dtype=bool)
            free = [i for i in self.convex if not active[i]]
            if not free or _violation(pt.g, pt.h) > 0 or np.max(pt.g, initial=-1.0) > -1e-9:
                return pt
            d = prob.sensitivity(pt.state)
            zg = prob.coupling.gradient(prob.case, pt.state)
            grad = self.c @ zg @ d + 2 * self.w * pt.u
            step = np.zeros(prob.n)
            for i in free:
                step[i] = -grad[i] / (2 * self.w[i])
            if np.max(np.abs(step)) <= 1e-15:
                return pt
            rate = prob.lin_a @ step
            room = np.where(rate > 0, slack / np.where(rate > 0, rate, 1.0), np.inf)
            t = min(1.0, float(np.min(room, initial=np.inf)))
            try:
                trial = self.point(pt.u + t * step, pt.state)
            except NewtonError:
                return pt
            if trial.f > pt.f or _violation(trial.g, trial.h) > 0:
                return pt
            pt = trial
        return pt

    def step(self, pt: _Point, radius: float):
        """Solve the trust-region LP; returns (du, model value)."""
        prob, nu = self.prob, self.prob.n
        d = prob.sensitivity(pt.state)
        _, _, _, (zg, gg, hg) = prob.outputs(pt.state)
        gdu, hdu = gg @ d, hg @ d
        nc, ni, ne = self.convex.size, pt.g.size, pt.h.size
        nv = nu + nc + ni + ne
        ct = np.zeros(nv)
        conc = np.where(self.w < 0, self.w, 0.0)
        ct[:nu] = self.c @ zg @ d + 2 * conc * pt.u
        ct[nu:nu + nc] = 1.0
        ct[nu + nc:] = self.penalty
        const = float(self.c @ pt.z + conc @ (pt.u * pt.u))

        blocks, rhs = [], []

        def rows(a_du, b, extra=None):
            m = np.zeros((a_du.shape[0], nv))
            m[:, :nu] = a_du
            if extra is not None:
                for col, vals in extra:
                    m[:, col] = vals
            blocks.append(m)
            rhs.append(np.asarray(b, dtype=float))

        if prob.lin_a.size:
            rows(prob.lin_a, prob.lin_b - prob.lin_a @ pt.u)
        eye = np.eye(nu)
        rows(eye, np.full(nu, radius))
        rows(-eye, np.full(nu, radius))
        for j in range(ni):
            s = nu + nc + j
            rows(gdu[j:j + 1], [-pt.g[j]], [(s, [-1.0])])
            rows(np.zeros((1, nu)), [0.0], [(s, [-1.0])])
        for j in range(ne):
            s = nu + nc + ni + j
            rows(hdu[j:j + 1], [-pt.h[j]], [(s, [-1.0])])
            rows(-hdu[j:j + 1], [pt.h[j]], [(s, [-1.0])])
        base_a = np.vstack(blocks)
        base_b = np.concatenate(rhs)
        # Kelley loop: add tangents until the LP point sits on an existing cut
        for _ in range(MAX_KELLEY):
            cut_a, cut_b = [], []
            for k, i in enumerate(self.convex):
                wi, ui = self.w[i], pt.u[i]
                for x in self.cuts[int(i)]:
                    row = np.zeros(nv)
                    row[i] = 2 * wi * x
                    row[nu + k] = -1.0
                    cut_a.append(row)
                    cut_b.append(wi * x * x - 2 * wi * x * ui)
            a_ub = np.vstack([base_a] + ([np.array(cut_a)] if cut_a else []))
            b_ub = np.concatenate([base_b, np.array(cut_b)])
            res = lp_solve(ct, a_ub, b_ub)
            if not res.optimal:
                raise RuntimeError(f"trust-region LP returned status {res.status}")
            du = res.x[:nu]
            if not self.add_cuts(pt.u + du, tol=CUT_TOL):
                break
        return du, const + float(res.value)


def slp_optimize(case: GridCase, objective: Objective, *,
                 coupling: CouplingSpec | None = None,
                 pins: Mapping[int, tuple[float, float]] | None = None,
                 fixed: Mapping[str, float] | None = None,
                 start: Mapping[str, float] | None = None,
                 radius: float = INITIAL_RADIUS, max_iter: int = 300,
                 penalty: float = PENALTY) -> AcSample:
    """Locally minimize ``objective`` over the AC-feasible set.

    ``pins`` maps boundary buses to a fixed (v, theta); by default every
    boundary bus is held at v = 1, theta = 0.  ``fixed`` pins coupling
    coordinates to values (equality constraints).  The returned sample is
    independently re-verified; ``converged`` is False when the iteration
    stalled, restoration failed or the final point violates a constraint.
    """
    coupling = coupling if coupling is not None else CouplingSpec(())
    coupling.validate(case)
    if pins is None:
        pins = {b: (1.0, 0.0) for b in case.boundary_ids}
    fixed = {**coupling.fixed, **(fixed or {})}
    prob = _Problem(case, coupling, pins, fixed)
    solver = _Solver(prob, objective, penalty)
    label = objective.label or direction_label(coupling.labels, solver.c)

    u0 = prob.default_start()
    for nm, val in (start or {}).items():
        if nm not in prob.pos:
            raise ValueError(f"unknown decision variable {nm!r}")
        u0[prob.pos[nm]] = float(val)

    trace: list[tuple] = []
    try:
        pt = solver.point(u0, None)
    except NewtonError as exc:
        state = StateVector.flat(case.n_bus)
        return AcSample(label, np.full(coupling.dim, np.nan), state, False, float("nan"),
                        dict(zip(prob.names, u0.tolist())), exc.mismatch, float("inf"), 0,
                        f"restoration failed at the start point: {exc}", trace)

    solver.add_cuts(pt.u)
    message, stopped = "iteration limit reached", False
    it = 0
    if prob.n == 0:
        message, stopped = "no decision variables", True
    for it in range(1, (max_iter if prob.n else 0) + 1):
        du, model = solver.step(pt, radius)
        pred = pt.phi - model
        size = float(np.max(np.abs(du))) if du.size else 0.0
        if pred <= 1e-12 * max(1.0, abs(pt.phi)):
            message, stopped = "no predicted decrease", True
            break
        if size <= STEP_TOL:
            message, stopped = "step below tolerance", True
            break
        trial_u = pt.u + du
        solver.add_cuts(trial_u)
        try:
            trial = solver.point(trial_u, pt.state)
            actual = pt.phi - trial.phi
        except NewtonError:
            trial, actual = None, -np.inf
        accepted = actual >= 0.1 * pred
        trace.append((it, pt.phi, pred, actual, radius, size, accepted))
        if accepted:
            pt = trial
            radius = min(radius * EXPAND, MAX_RADIUS)
        else:
            radius *= SHRINK
            if radius <= RADIUS_TOL:
                message, stopped = "trust radius below tolerance", True
                break
    if stopped and solver.convex.size:
        pt = solver.polish(pt)
    return _certify(prob, solver, pt, label, stopped, message, it, trace)


def _certify(prob: _Problem, solver: _Solver, pt: _Point, label: str, stopped: bool,
             message: str, iterations: int, trace) -> AcSample:
    spec = prob.bus_spec(pt.u)
    mismatch = mismatch_norm(prob.case, pt.state, spec, prob.y)
    z, g, h, _ = prob.outputs(pt.state, with_grad=False)
    lin = prob.lin_a @ pt.u - prob.lin_b if prob.lin_b.size else np.zeros(0)
    parts = [g, np.abs(h), lin]
    worst = max([0.0] + [float(np.max(p)) for p in parts if p.size])
    ok = stopped and mismatch <= AC_MISMATCH_TOL and worst <= AC_CONSTRAINT_TOL
    if stopped and not ok:
        message = (f"{message}; certification failed (mismatch {mismatch:.2e}, "
                   f"violation {worst:.2e})")
    log.debug("slp %s: %s after %d iterations, objective %.9g", label, message,
              iterations, pt.f)
    return AcSample(label, z, pt.state, ok, pt.f, dict(zip(prob.names, pt.u.tolist())),
                    mismatch, worst, iterations, message, trace)

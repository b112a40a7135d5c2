"""AC power flow in polar coordinates: flows, injections, Newton, linearization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .grid_model import AdmittanceMatrix, Branch, GridCase, build_admittance
from .tolerances import NEWTON_MAX_ITER, NEWTON_TOL

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    def __init__(self, message: str, mismatch: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


@dataclass(frozen=True)
class StateVector:
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).copy()
        theta = np.asarray(self.theta, dtype=float).copy()
        if v.shape != theta.shape or v.ndim != 1:
            raise ValueError("v and theta must be vectors of equal length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(theta))):
            raise ValueError("state entries must be finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def flat(cls, n: int) -> "StateVector":
        return cls(np.ones(n), np.zeros(n))

    @property
    def phasor(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)

    def shifted(self, offset: float) -> "StateVector":
        return StateVector(self.v, self.theta + offset)


@dataclass(frozen=True)
class Injection:
    p: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class OperatingPoint:
    state: StateVector
    injection: Injection
    jacobian: np.ndarray

    def predict(self, state: StateVector) -> Injection:
        """Injections of the first-order Taylor model at ``state``."""
        delta = np.concatenate([state.theta - self.state.theta, state.v - self.state.v])
        n = self.state.v.size
        out = np.concatenate([self.injection.p, self.injection.q]) + self.jacobian @ delta
        return Injection(out[:n], out[n:])


def series_flow(vk, vl, theta_kl, g, b):
    """Flow at the ``k`` end of a series branch with admittance ``g + jb``."""
    c, s = np.cos(theta_kl), np.sin(theta_kl)
    p = vk ** 2 * g - vk * vl * (g * c + b * s)
    q = -vk ** 2 * b - vk * vl * (g * s - b * c)
    return p, q


def ac_branch_flow(case: GridCase, state: StateVector, branch: Branch,
                   at: int | None = None) -> tuple[float, float]:
    """Active and reactive flow on ``branch``, measured at its from-bus.

    ``at`` selects the measuring end (defaults to ``branch.from_bus``).
    """
    k, l = branch.from_bus, branch.to_bus
    if at is not None and at == l:
        k, l = l, k
    elif at is not None and at != k:
        raise ValueError(f"bus {at} is not an end of branch {branch.label}")
    ik, il = case.index(k), case.index(l)
    p, q = series_flow(state.v[ik], state.v[il], state.theta[ik] - state.theta[il],
                       branch.g, branch.b)
    return float(p), float(q)


def ac_injections(state: StateVector, y: AdmittanceMatrix) -> Injection:
    v, th = state.v, state.theta
    dth = th[:, None] - th[None, :]
    c, s = np.cos(dth), np.sin(dth)
    p = v * ((y.g * c + y.b * s) @ v)
    q = v * ((y.g * s - y.b * c) @ v)
    return Injection(p, q)


def jacobian(state: StateVector, y: AdmittanceMatrix) -> np.ndarray:
    """``[[dP/dtheta, dP/dV], [dQ/dtheta, dQ/dV]]`` evaluated at ``state``."""
    vc = state.phasor
    ybus = y.complex
    current = ybus @ vc
    diag_v = np.diag(vc)
    unit = np.diag(vc / np.abs(vc))
    ds_dth = 1j * diag_v @ np.conj(np.diag(current) - ybus @ diag_v)
    ds_dv = diag_v @ np.conj(ybus @ unit) + np.conj(np.diag(current)) @ unit
    return np.block([[ds_dth.real, ds_dv.real], [ds_dth.imag, ds_dv.imag]])


def linearize(case: GridCase, state: StateVector, y: AdmittanceMatrix | None = None
              ) -> OperatingPoint:
    y = build_admittance(case) if y is None else y
    return OperatingPoint(state, ac_injections(state, y), jacobian(state, y))


@dataclass(frozen=True)
class BranchFlowForm:
    """Affine model of one branch flow in the terminal voltages at a state.

    ``coeffs`` order: (theta_k, theta_l, v_k, v_l).
    """

    from_bus: int
    to_bus: int
    p0: float
    q0: float
    p_coeffs: np.ndarray
    q_coeffs: np.ndarray
    anchor: np.ndarray  # (theta_k, theta_l, v_k, v_l) at the expansion point

    def evaluate(self, case: GridCase, state: StateVector) -> tuple[float, float]:
        ik, il = case.index(self.from_bus), case.index(self.to_bus)
        x = np.array([state.theta[ik], state.theta[il], state.v[ik], state.v[il]])
        d = x - self.anchor
        return float(self.p0 + self.p_coeffs @ d), float(self.q0 + self.q_coeffs @ d)


def linear_branch_flow_coeffs(case: GridCase, op: OperatingPoint | StateVector,
                              branch: Branch) -> BranchFlowForm:
    state = op.state if isinstance(op, OperatingPoint) else op
    k, l = branch.from_bus, branch.to_bus
    ik, il = case.index(k), case.index(l)
    vk, vl = state.v[ik], state.v[il]
    th = state.theta[ik] - state.theta[il]
    g, b = branch.g, branch.b
    c, s = np.cos(th), np.sin(th)
    p0, q0 = series_flow(vk, vl, th, g, b)
    dp_th = vk * vl * (g * s - b * c)
    dq_th = -vk * vl * (g * c + b * s)
    p_coeffs = np.array([dp_th, -dp_th, 2 * vk * g - vl * (g * c + b * s),
                         -vk * (g * c + b * s)])
    q_coeffs = np.array([dq_th, -dq_th, -2 * vk * b - vl * (g * s - b * c),
                         -vk * (g * s - b * c)])
    anchor = np.array([state.theta[ik], state.theta[il], vk, vl])
    return BranchFlowForm(k, l, float(p0), float(q0), p_coeffs, q_coeffs, anchor)


@dataclass(frozen=True)
class BusSpec:
    """Newton bus type: ``slack`` fixes (v, theta), ``pv`` fixes (p, v), ``pq`` fixes (p, q)."""

    kind: str
    p: float = 0.0
    q: float = 0.0
    v: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("slack", "pv", "pq"):
            raise ValueError(f"unknown bus kind {self.kind!r}")
        if not all(np.isfinite([self.p, self.q, self.v, self.theta])):
            raise ValueError("bus setpoints must be finite")


def injection_specs(case: GridCase, pg=None, qg=None,
                    pins: Mapping[int, tuple[float, float]] | None = None
                    ) -> dict[int, BusSpec]:
    """Bus specs with generator setpoints at load buses and slack pins at boundaries.

    ``pg``/``qg`` map generator bus id to setpoint; ``pins`` maps a boundary
    bus id to (v, theta) and defaults to v = 1, theta = 0 everywhere.
    """
    pg = pg or {}
    qg = qg or {}
    if pins is None:
        pins = {bid: (1.0, 0.0) for bid in case.boundary_ids}
    spec = {}
    for bus in case.buses:
        if bus.id in pins:
            v, th = pins[bus.id]
            spec[bus.id] = BusSpec("slack", v=v, theta=th)
        else:
            spec[bus.id] = BusSpec("pq", p=pg.get(bus.id, 0.0) - bus.p_demand,
                                   q=qg.get(bus.id, 0.0) - bus.q_demand)
    return spec


@dataclass(frozen=True)
class NewtonResult:
    state: StateVector
    mismatch: float
    iterations: int


def newton_solve(case: GridCase, spec: Mapping[int, BusSpec], *,
                 start: StateVector | None = None, y: AdmittanceMatrix | None = None,
                 tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> NewtonResult:
    """Full-step Newton-Raphson from a flat start (or ``start``)."""
    y = build_admittance(case) if y is None else y
    n = case.n_bus
    kinds = [spec[b.id].kind for b in case.buses]
    slack = [i for i, k in enumerate(kinds) if k == "slack"]
    if not slack:
        raise NewtonError("newton_solve needs at least one slack bus")
    ang = np.array([i for i, k in enumerate(kinds) if k != "slack"], dtype=int)
    mag = np.array([i for i, k in enumerate(kinds) if k == "pq"], dtype=int)
    p_set = np.array([spec[b.id].p for b in case.buses])
    q_set = np.array([spec[b.id].q for b in case.buses])

    if start is None:
        v, th = np.ones(n), np.zeros(n)
    else:
        v, th = start.v.copy(), start.theta.copy()
    for i, b in enumerate(case.buses):
        s = spec[b.id]
        if s.kind == "slack":
            v[i], th[i] = s.v, s.theta
        elif s.kind == "pv":
            v[i] = s.v

    def mismatch(v, th):
        inj = ac_injections(StateVector(v, th), y)
        return np.concatenate([inj.p[ang] - p_set[ang], inj.q[mag] - q_set[mag]])

    f = mismatch(v, th)
    norm = float(np.abs(f).max()) if f.size else 0.0
    for it in range(max_iter + 1):
        if norm <= tol:
            return NewtonResult(StateVector(v, th), norm, it)
        if it == max_iter:
            break
        jac = jacobian(StateVector(v, th), y)
        rows = np.concatenate([ang, n + mag])
        cols = np.concatenate([ang, n + mag])
        try:
            step = np.linalg.solve(jac[np.ix_(rows, cols)], -f)
        except np.linalg.LinAlgError as exc:
            raise NewtonError("singular power-flow Jacobian", norm, it) from exc
        th = th.copy()
        v = v.copy()
        th[ang] += step[:ang.size]
        v[mag] += step[ang.size:]
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(th))) or np.any(v <= 0):
            raise NewtonError("Newton iterates left the physical domain", norm, it + 1)
        f = mismatch(v, th)
        norm = float(np.abs(f).max())
    raise NewtonError(f"Newton did not converge in {max_iter} iterations "
                      f"(last mismatch {norm:.3e})", norm, max_iter)


def mismatch_norm(case: GridCase, state: StateVector, spec: Mapping[int, BusSpec],
                  y: AdmittanceMatrix | None = None) -> float:
    """Independent re-evaluation of the Newton residual at ``state``."""
    y = build_admittance(case) if y is None else y
    inj = ac_injections(state, y)
    worst = 0.0
    for i, b in enumerate(case.buses):
        s = spec[b.id]
        if s.kind == "slack":
            worst = max(worst, abs(state.v[i] - s.v), abs(state.theta[i] - s.theta))
            continue
        worst = max(worst, abs(inj.p[i] - s.p))
        if s.kind == "pq":
            worst = max(worst, abs(inj.q[i] - s.q))
        else:
            worst = max(worst, abs(state.v[i] - s.v))
    return worst

"""Coupling variables between a distribution grid and the transmission side.

Labels are canonical: ``p_<k>_<l>`` and ``q_<k>_<l>`` for interconnection
flows measured at the boundary end, ``v_<k>`` for boundary voltages,
``dtheta`` for the angle difference of two boundary buses and
``p_sum``/``q_sum`` for the total exchange over all interconnections.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .grid_model import CaseError, GridCase
from .powerflow import StateVector, linear_branch_flow_coeffs, series_flow

KINDS = ("p", "q", "v", "dtheta", "p_sum", "q_sum")

_BRANCH = re.compile(r"^([pq])_(\d+)_(\d+)$")
_BUS = re.compile(r"^v_(\d+)$")


@dataclass(frozen=True)
class CouplingEntry:
    kind: str
    buses: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        want = {"p": 2, "q": 2, "dtheta": 2, "v": 1, "p_sum": 0, "q_sum": 0}[self.kind]
        if len(self.buses) != want:
            raise ValueError(f"{self.kind} coupling takes {want} bus ids, got {self.buses}")

    @property
    def label(self) -> str:
        if self.kind in ("p", "q"):
            return f"{self.kind}_{self.buses[0]}_{self.buses[1]}"
        if self.kind == "v":
            return f"v_{self.buses[0]}"
        return self.kind


def branch_p(k: int, l: int) -> CouplingEntry:
    return CouplingEntry("p", (k, l))


def branch_q(k: int, l: int) -> CouplingEntry:
    return CouplingEntry("q", (k, l))


def bus_v(k: int) -> CouplingEntry:
    return CouplingEntry("v", (k,))


def angle_diff(k: int, l: int) -> CouplingEntry:
    return CouplingEntry("dtheta", (k, l))


def parse_label(label: str, case: GridCase | None = None) -> CouplingEntry:
    """Entry for a canonical label; ``dtheta`` needs ``case`` to name its buses."""
    m = _BRANCH.match(label)
    if m:
        return CouplingEntry(m.group(1), (int(m.group(2)), int(m.group(3))))
    m = _BUS.match(label)
    if m:
        return bus_v(int(m.group(1)))
    if label in ("p_sum", "q_sum"):
        return CouplingEntry(label)
    if label == "dtheta":
        if case is None or len(case.boundary_ids) != 2:
            raise ValueError("dtheta needs a case with exactly two boundary buses")
        k, l = case.boundary_ids
        return angle_diff(k, l)
    raise ValueError(f"unrecognized coupling label {label!r}")


@dataclass(frozen=True)
class CouplingSpec:
    entries: tuple[CouplingEntry, ...]
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        entries = tuple(self.entries)
        labels = [e.label for e in entries]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate coupling entries in {labels}")
        if sum(e.kind == "dtheta" for e in entries) > 1:
            raise ValueError("at most one angle difference may be used")
        fixed = {str(k): float(v) for k, v in dict(self.fixed).items()}
        unknown = set(fixed) - set(labels)
        if unknown:
            raise ValueError(f"fixed entries {sorted(unknown)} are not coupling entries")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "fixed", fixed)

    @classmethod
    def from_labels(cls, labels: Iterable[str], case: GridCase | None = None,
                    fixed: Mapping[str, float] | None = None) -> "CouplingSpec":
        return cls(tuple(parse_label(s, case) for s in labels), fixed or {})

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    @property
    def dim(self) -> int:
        return len(self.entries)

    def validate(self, case: GridCase) -> None:
        inter = {(br.from_bus, br.to_bus) for br in case.interconnections}
        boundary = set(case.boundary_ids)
        for e in self.entries:
            if e.kind in ("p", "q") and e.buses not in inter:
                raise CaseError(f"{e.label}: ({e.buses[0]},{e.buses[1]}) is not an "
                                f"interconnection branch of {case.name}")
            if e.kind == "v" and e.buses[0] not in boundary:
                raise CaseError(f"{e.label}: bus {e.buses[0]} is not a boundary bus")
            if e.kind == "dtheta":
                k, l = e.buses
                if k == l or k not in boundary or l not in boundary:
                    raise CaseError("dtheta must reference two distinct boundary buses")
            if e.kind in ("p_sum", "q_sum") and not inter:
                raise CaseError(f"{case.name} has no interconnection branches")

    def evaluate(self, case: GridCase, state: StateVector) -> np.ndarray:
        """Coupling coordinates of an AC state."""
        return np.array([_value(case, state, e) for e in self.entries])

    def gradient(self, case: GridCase, state: StateVector) -> np.ndarray:
        """Derivative of each coordinate w.r.t. the stacked state (theta, v)."""
        n = case.n_bus
        out = np.zeros((self.dim, 2 * n))
        for r, e in enumerate(self.entries):
            out[r] = _grad(case, state, e)
        return out


def _flow_branches(case: GridCase, e: CouplingEntry):
    if e.kind in ("p_sum", "q_sum"):
        return case.interconnections
    return [br for br in case.interconnections if (br.from_bus, br.to_bus) == e.buses]


def _value(case: GridCase, state: StateVector, e: CouplingEntry) -> float:
    if e.kind == "v":
        return float(state.v[case.index(e.buses[0])])
    if e.kind == "dtheta":
        k, l = e.buses
        return float(state.theta[case.index(k)] - state.theta[case.index(l)])
    total = 0.0
    for br in _flow_branches(case, e):
        ik, il = case.index(br.from_bus), case.index(br.to_bus)
        p, q = series_flow(state.v[ik], state.v[il], state.theta[ik] - state.theta[il],
                           br.g, br.b)
        total += p if e.kind.startswith("p") else q
    return float(total)


def _grad(case: GridCase, state: StateVector, e: CouplingEntry) -> np.ndarray:
    n = case.n_bus
    g = np.zeros(2 * n)
    if e.kind == "v":
        g[n + case.index(e.buses[0])] = 1.0
        return g
    if e.kind == "dtheta":
        g[case.index(e.buses[0])] = 1.0
        g[case.index(e.buses[1])] = -1.0
        return g
    for br in _flow_branches(case, e):
        form = linear_branch_flow_coeffs(case, state, br)
        coeffs = form.p_coeffs if e.kind.startswith("p") else form.q_coeffs
        ik, il = case.index(br.from_bus), case.index(br.to_bus)
        g[[ik, il, n + ik, n + il]] += coeffs
    return g


def full_7d(case: GridCase) -> CouplingSpec:
    """Flows and voltages at both interconnections plus their angle difference."""
    inter = case.interconnections
    if len(inter) != 2:
        raise CaseError("the 7D coupling needs exactly two interconnection branches")
    entries = []
    for br in inter:
        entries += [branch_p(br.from_bus, br.to_bus), branch_q(br.from_bus, br.to_bus),
                    bus_v(br.from_bus)]
    entries.append(angle_diff(inter[0].from_bus, inter[1].from_bus))
    return CouplingSpec(tuple(entries))


def exchange_2d(case: GridCase) -> CouplingSpec:
    """Total active/reactive exchange; the branch flow itself for one interconnection."""
    inter = case.interconnections
    if len(inter) == 1:
        br = inter[0]
        return CouplingSpec((branch_p(br.from_bus, br.to_bus), branch_q(br.from_bus, br.to_bus)))
    return CouplingSpec((CouplingEntry("p_sum"), CouplingEntry("q_sum")))

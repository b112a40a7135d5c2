"""Grid case files: parsing, validation, admittance matrix, boundary-bus fusion.

All quantities are per-unit on the case's single system base.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

DEFAULT_V_MIN = 0.95
DEFAULT_V_MAX = 1.05
DEFAULT_ALPHA = 0.95

BUNDLED_CASE = Path(__file__).parent / "data" / "cigre_mv_eu.json"


class CaseError(ValueError):
    """Schema or invariant violation in a grid case."""


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float = DEFAULT_V_MIN
    v_max: float = DEFAULT_V_MAX
    p_demand: float = 0.0
    q_demand: float = 0.0
    is_boundary: bool = False


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    is_interconnection: bool = False

    @property
    def g(self) -> float:
        return self.r / (self.r ** 2 + self.x ** 2)

    @property
    def b(self) -> float:
        return -self.x / (self.r ** 2 + self.x ** 2)

    @property
    def label(self) -> str:
        return f"{self.from_bus}_{self.to_bus}"


@dataclass(frozen=True)
class Generator:
    bus: int
    f_max: float
    s_max: float
    alpha: float = DEFAULT_ALPHA


@dataclass(frozen=True)
class GridCase:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        _validate(self)
        object.__setattr__(self, "_index", {b.id: i for i, b in enumerate(self.buses)})

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def index(self, bus_id: int) -> int:
        return self._index[bus_id]

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def boundary_ids(self) -> list[int]:
        return sorted(b.id for b in self.buses if b.is_boundary)

    @property
    def generator_buses(self) -> list[int]:
        return sorted(g.bus for g in self.generators)

    @property
    def interconnections(self) -> list[Branch]:
        return [br for br in self.branches if br.is_interconnection]

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self._index[bus_id]]

    def summary(self) -> str:
        bnd = ",".join(map(str, self.boundary_ids))
        gens = ",".join(map(str, self.generator_buses))
        return (f"{self.n_bus} buses, {len(self.branches)} branches, boundary {{{bnd}}}, "
                f"generators {{{gens}}}")


def _validate(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    seen = set()
    for i in ids:
        if i in seen:
            raise CaseError(f"duplicate bus id {i}")
        seen.add(i)
    if case.base_mva <= 0:
        raise CaseError("base_mva must be positive")
    for b in case.buses:
        if not (0 < b.v_min <= b.v_max):
            raise CaseError(f"bus {b.id}: voltage bounds must satisfy 0 < v_min <= v_max")
        if b.is_boundary and (b.p_demand != 0 or b.q_demand != 0):
            raise CaseError(f"boundary bus {b.id} must not carry load")
    boundary = {b.id for b in case.buses if b.is_boundary}
    if not boundary:
        raise CaseError("case needs at least one boundary bus")
    for k, br in enumerate(case.branches):
        tag = f"branch {k} ({br.from_bus}-{br.to_bus})"
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise CaseError(f"{tag}: unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"{tag}: from and to bus coincide")
        if br.r < 0:
            raise CaseError(f"{tag}: negative resistance")
        if br.r == 0 and br.x == 0:
            raise CaseError(f"{tag}: zero series impedance")
        touches = {br.from_bus, br.to_bus} & boundary
        if br.is_interconnection:
            if br.from_bus not in boundary:
                raise CaseError(f"{tag}: interconnection must start at a boundary bus")
            if br.to_bus in boundary:
                raise CaseError(f"{tag}: interconnection must end inside the distribution grid")
        elif touches:
            raise CaseError(f"{tag}: only interconnection branches may touch boundary buses")
    linked = {br.from_bus for br in case.branches if br.is_interconnection}
    for bid in sorted(boundary - linked):
        raise CaseError(f"boundary bus {bid} has no interconnection branch")
    gen_buses = set()
    for g in case.generators:
        if g.bus not in seen:
            raise CaseError(f"generator at unknown bus {g.bus}")
        if g.bus in boundary:
            raise CaseError(f"generator at bus {g.bus} sits on a boundary bus")
        if g.bus in gen_buses:
            raise CaseError(f"more than one generator at bus {g.bus}")
        gen_buses.add(g.bus)
        if g.f_max < 0:
            raise CaseError(f"generator at bus {g.bus}: f_max must be >= 0")
        if g.s_max < g.f_max:
            raise CaseError(f"generator at bus {g.bus}: s_max must be >= f_max")
        if not (0 < g.alpha <= 1):
            raise CaseError(f"generator at bus {g.bus}: alpha must lie in (0, 1]")
    _check_connected(ids, case.branches)


def _check_connected(ids: list[int], branches) -> None:
    adj: dict[int, set[int]] = {i: set() for i in ids}
    for br in branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    start = ids[0]
    reached = {start}
    queue = deque([start])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in reached:
                reached.add(nxt)
                queue.append(nxt)
    island = sorted(set(ids) - reached)
    if island:
        raise CaseError(f"grid is disconnected: island {{{', '.join(map(str, island))}}} "
                        f"is unreachable from bus {start}")


_TOP_KEYS = {"name": True, "base_mva": True, "buses": True, "branches": True,
             "generators": False}
_BUS_KEYS = {"id": True, "v_min": False, "v_max": False, "p_demand": False,
             "q_demand": False, "is_boundary": False}
_BRANCH_KEYS = {"from": True, "to": True, "r": True, "x": True, "is_interconnection": False}
_GEN_KEYS = {"bus": True, "f_max": True, "s_max": True, "alpha": False}


def _check_keys(obj: Any, schema: dict, where: str) -> None:
    if not isinstance(obj, dict):
        raise CaseError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(schema))
    if unknown:
        raise CaseError(f"{where}: unknown field(s) {', '.join(unknown)}")
    for key, required in schema.items():
        if required and key not in obj:
            raise CaseError(f"{where}: missing field {key!r}")


def _num(obj: dict, key: str, where: str, default: float | None = None) -> float:
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseError(f"{where}: field {key!r} must be a number")
    if not np.isfinite(v):
        raise CaseError(f"{where}: field {key!r} must be finite")
    return float(v)


def _int(obj: dict, key: str, where: str) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise CaseError(f"{where}: field {key!r} must be an integer")
    return v


def _bool(obj: dict, key: str, where: str) -> bool:
    v = obj.get(key, False)
    if not isinstance(v, bool):
        raise CaseError(f"{where}: field {key!r} must be true or false")
    return v


def case_from_dict(doc: Any) -> GridCase:
    _check_keys(doc, _TOP_KEYS, "case")
    if not isinstance(doc["name"], str):
        raise CaseError("case: field 'name' must be a string")
    for key in ("buses", "branches", "generators"):
        if not isinstance(doc.get(key, []), list):
            raise CaseError(f"case: field {key!r} must be a list")
    buses = []
    for k, b in enumerate(doc["buses"]):
        where = f"buses[{k}]"
        _check_keys(b, _BUS_KEYS, where)
        buses.append(Bus(id=_int(b, "id", where),
                         v_min=_num(b, "v_min", where, DEFAULT_V_MIN),
                         v_max=_num(b, "v_max", where, DEFAULT_V_MAX),
                         p_demand=_num(b, "p_demand", where, 0.0),
                         q_demand=_num(b, "q_demand", where, 0.0),
                         is_boundary=_bool(b, "is_boundary", where)))
    branches = []
    for k, br in enumerate(doc["branches"]):
        where = f"branches[{k}]"
        _check_keys(br, _BRANCH_KEYS, where)
        branches.append(Branch(from_bus=_int(br, "from", where), to_bus=_int(br, "to", where),
                               r=_num(br, "r", where), x=_num(br, "x", where),
                               is_interconnection=_bool(br, "is_interconnection", where)))
    gens = []
    for k, g in enumerate(doc.get("generators", [])):
        where = f"generators[{k}]"
        _check_keys(g, _GEN_KEYS, where)
        gens.append(Generator(bus=_int(g, "bus", where), f_max=_num(g, "f_max", where),
                              s_max=_num(g, "s_max", where),
                              alpha=_num(g, "alpha", where, DEFAULT_ALPHA)))
    return GridCase(name=doc["name"], base_mva=_num(doc, "base_mva", "case"),
                    buses=tuple(buses), branches=tuple(branches), generators=tuple(gens))


def parse_case(text: str) -> GridCase:
    """Parse and validate a case document (JSON text)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"malformed case file: {exc}") from exc
    return case_from_dict(doc)


def load_case(path: str | Path | None = None) -> GridCase:
    path = BUNDLED_CASE if path is None else Path(path)
    return parse_case(Path(path).read_text(encoding="utf-8"))


def case_to_dict(case: GridCase) -> dict:
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [{"id": b.id, "v_min": b.v_min, "v_max": b.v_max, "p_demand": b.p_demand,
                   "q_demand": b.q_demand, "is_boundary": b.is_boundary} for b in case.buses],
        "branches": [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
                      "is_interconnection": br.is_interconnection} for br in case.branches],
        "generators": [{"bus": g.bus, "f_max": g.f_max, "s_max": g.s_max, "alpha": g.alpha}
                       for g in case.generators],
    }


def serialize_case(case: GridCase) -> str:
    return json.dumps(case_to_dict(case), indent=2) + "\n"


@dataclass(frozen=True)
class AdmittanceMatrix:
    g: np.ndarray
    b: np.ndarray

    @property
    def complex(self) -> np.ndarray:
        return self.g + 1j * self.b


def build_admittance(case: GridCase) -> AdmittanceMatrix:
    """Bus admittance ``Y = G + jB`` of series branches (no shunts)."""
    n = case.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        z = complex(br.r, br.x)
        if z == 0:
            raise CaseError(f"branch {br.label} has zero impedance")
        ybr = 1.0 / z
        k, l = case.index(br.from_bus), case.index(br.to_bus)
        y[k, k] += ybr
        y[l, l] += ybr
        y[k, l] -= ybr
        y[l, k] -= ybr
    return AdmittanceMatrix(y.real.copy(), y.imag.copy())


def merge_boundary_buses(case: GridCase) -> GridCase:
    """Fuse every boundary bus into the lowest-id one.

    Interconnection branches are re-targeted to the fused bus, so the result
    models all interconnections landing on a single transmission bus.
    """
    boundary = case.boundary_ids
    if len(boundary) < 2:
        raise CaseError("merging needs at least two boundary buses")
    fused = boundary[0]
    drop = set(boundary[1:])
    buses = tuple(b for b in case.buses if b.id not in drop)
    branches = tuple(replace(br, from_bus=fused) if br.from_bus in drop else br
                     for br in case.branches)
    return GridCase(name=f"{case.name}_merged", base_mva=case.base_mva, buses=buses,
                    branches=branches, generators=case.generators)


def with_generators(case: GridCase, **changes) -> GridCase:
    """Copy of ``case`` with every generator field overridden (e.g. ``alpha=0.9``)."""
    gens = tuple(replace(g, **changes) for g in case.generators)
    return replace(case, generators=gens)

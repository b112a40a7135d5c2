"""Command-line entry point: ``flexor <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import svg
from .aggregation import (TABLE_VARIANTS, DsoFeasibleSet, ForResult, OperatingPointError,
                          apply_boundary_variant, build_feasible_set, compute_for,
                          compute_merged_for, compute_operating_point, compute_sum_for,
                          for_membership)
from .coupling import CouplingSpec, exchange_2d, full_7d
from .grid_model import CaseError, GridCase, load_case, with_generators
from .polytope import (EmptyPolyhedronError, LpError, ProjectionError, UnboundedError,
                       hull_2d, polygon_vertices, shadow_2d)
from .powerflow import NewtonError, OperatingPoint
from .sampler import (DegenerateRegionError, SampledFor, compare_for, sample_boundary,
                      sample_extremes_7d, samples_csv)
from .tolerances import MEMBERSHIP_TOL

log = logging.getLogger("flexor")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("validate", "compute-for", "shadow", "sample-ac", "compare")
SUM_VARIANTS = tuple(f"sum_{v}" for v in TABLE_VARIANTS)
VARIANT_CHOICES = TABLE_VARIANTS + ("merged_bus",) + SUM_VARIANTS
NESTING_DIRECTIONS = 100
NESTING_TOL = 1e-6
EXTREME_DIMS = ("p_1_2", "p_16_15")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flexor", description="Feasible operational regions of a distribution grid.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--case", default=None, help="case JSON (default: bundled CIGRE MV case)")
    p.add_argument("--variant", default=None,
                   help=f"one of {', '.join(VARIANT_CHOICES)}; shadow accepts a comma list")
    p.add_argument("--coupling", default=None,
                   help="full7d, exchange2d or comma-separated coupling labels")
    p.add_argument("--dims", default=None, help="two coupling labels, e.g. p_1_2,q_1_2")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--n-grid", type=int, default=15, help="interior refinement points")
    p.add_argument("--alpha", type=float, default=None, help="override every generator alpha")
    p.add_argument("--c1", type=float, default=1.0, help="active-power weight")
    p.add_argument("--c2", type=float, default=1.0, help="reactive-power weight")
    p.add_argument("--delta", type=float, default=0.05,
                   help="inflation (fraction of coordinate range) for 7D extremes")
    p.add_argument("--seed", type=int, default=0, help="seed for random test directions")
    p.add_argument("--check-nesting", action="store_true",
                   help="compare: check support nesting of the boundary variants")
    return p


@dataclass
class RunConfig:
    command: str
    case_path: str | None
    variants: list[str]
    coupling: str | None
    dims: tuple[str, str] | None
    out: Path
    n_grid: int
    alpha: float | None
    c1: float
    c2: float
    delta: float
    seed: int
    check_nesting: bool

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        variants = [v.strip() for v in (ns.variant or "").split(",") if v.strip()]
        for v in variants:
            if v not in VARIANT_CHOICES:
                raise UsageError(f"unknown variant {v!r}; choose from {', '.join(VARIANT_CHOICES)}")
        if len(variants) > 1 and ns.command != "shadow":
            raise UsageError("only shadow accepts several variants")
        dims = None
        if ns.dims is not None:
            parts = [d.strip() for d in ns.dims.split(",")]
            if len(parts) != 2 or not all(parts):
                raise UsageError("--dims needs exactly two labels, e.g. p_1_2,q_1_2")
            dims = (parts[0], parts[1])
        if ns.n_grid < 0:
            raise UsageError("--n-grid must be non-negative")
        if ns.alpha is not None and not 0 < ns.alpha <= 1:
            raise UsageError("--alpha must lie in (0, 1]")
        if not ns.delta > 0:
            raise UsageError("--delta must be positive")
        for name in ("c1", "c2"):
            if not np.isfinite(getattr(ns, name)):
                raise UsageError(f"--{name} must be finite")
        return cls(ns.command, ns.case, variants, ns.coupling, dims, Path(ns.out), ns.n_grid,
                   ns.alpha, ns.c1, ns.c2, ns.delta, ns.seed, ns.check_nesting)


@dataclass
class _Context:
    cfg: RunConfig
    case: GridCase
    _op: OperatingPoint | None = None
    _fs: DsoFeasibleSet | None = None
    _fors: dict = field(default_factory=dict)
    _merged_fs: DsoFeasibleSet | None = None

    @property
    def op(self) -> OperatingPoint:
        if self._op is None:
            self._op = compute_operating_point(self.case, self.cfg.c1, self.cfg.c2)
        return self._op

    @property
    def fs(self) -> DsoFeasibleSet:
        if self._fs is None:
            self._fs = build_feasible_set(self.case, self.op)
        return self._fs

    def coupling(self, variant: str) -> CouplingSpec:
        if variant == "merged_bus" or variant in SUM_VARIANTS:
            if self.cfg.coupling not in (None, "exchange2d", "p_sum,q_sum"):
                raise UsageError(f"variant {variant} has the fixed coupling p_sum,q_sum")
            return exchange_2d(self.merged_case if variant == "merged_bus" else self.case)
        c = self.cfg.coupling or "full7d"
        if c == "full7d":
            return full_7d(self.case)
        if c == "exchange2d":
            return exchange_2d(self.case)
        return CouplingSpec.from_labels([s.strip() for s in c.split(",")], self.case)

    @property
    def merged_case(self) -> GridCase:
        return self.merged()[1].case

    def merged(self) -> tuple[ForResult, DsoFeasibleSet]:
        if "merged_bus" not in self._fors:
            fr, fs = compute_merged_for(self.case, self.cfg.c1, self.cfg.c2)
            self._fors["merged_bus"], self._merged_fs = fr, fs
        return self._fors["merged_bus"], self._merged_fs

    def region(self, variant: str) -> ForResult:
        if variant == "merged_bus":
            return self.merged()[0]
        if variant not in self._fors:
            if variant in SUM_VARIANTS:
                fr = compute_sum_for(self.fs, variant[len("sum_"):])
            else:
                fs = apply_boundary_variant(self.fs, variant)
                fr = compute_for(fs, self.coupling(variant), variant=variant)
            if fr.empty:
                log.warning("FOR for variant %s is empty", variant)
            self._fors[variant] = fr
        return self._fors[variant]


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")
    log.info("wrote %s", path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _fmt(v: float) -> str:
    return format(float(v) + 0.0, ".12g")


def _op_csv(case: GridCase, op: OperatingPoint) -> str:
    gen = set(case.generator_buses)
    lines = ["bus,v,theta,p,q,pg,qg"]
    for i, bus in enumerate(case.buses):
        p, q = op.injection.p[i], op.injection.q[i]
        pg = _fmt(p + bus.p_demand) if bus.id in gen else ""
        qg = _fmt(q + bus.q_demand) if bus.id in gen else ""
        lines.append(",".join([str(bus.id), _fmt(op.state.v[i]), _fmt(op.state.theta[i]),
                               _fmt(p), _fmt(q), pg, qg]))
    return "\n".join(lines) + "\n"


def _stats(fr: ForResult) -> dict:
    info = {k: v for k, v in fr.stats.items() if k != "wall_time_s"}
    info.update(variant=fr.variant, base_variant=fr.base_variant, coupling=fr.labels,
                operating_point=fr.op_digest, empty=fr.empty)
    return info


def _variant(cfg: RunConfig, default: str) -> str:
    return cfg.variants[0] if cfg.variants else default


def cmd_validate(ctx: _Context) -> int:
    print(ctx.case.summary())
    return EXIT_OK


def cmd_compute_for(ctx: _Context) -> int:
    variant = _variant(ctx.cfg, "free")
    fr = ctx.region(variant)
    op_case, op = ((ctx.merged_case, ctx.merged()[1].op) if variant == "merged_bus"
                   else (ctx.case, ctx.op))
    out = ctx.cfg.out
    _write(out / f"for_{variant}.csv", fr.to_csv())
    _write(out / "op.csv", _op_csv(op_case, op))
    _write(out / "stats.json", _dump_json(_stats(fr)))
    print(f"{variant}: {fr.poly.n_ineq} inequalities, {fr.poly.n_eq} equalities over "
          f"{', '.join(fr.labels)}")
    return EXIT_OK


def cmd_shadow(ctx: _Context) -> int:
    cfg = ctx.cfg
    if cfg.dims is None:
        raise UsageError("shadow needs --dims a,b")
    variants = cfg.variants or ["free"]
    a, b = cfg.dims
    layers, rows = [], [f"variant,{a},{b}"]
    for variant in variants:
        fr = ctx.region(variant)
        missing = [d for d in cfg.dims if d not in fr.labels]
        if missing:
            raise UsageError(f"unknown dimension {', '.join(missing)} for variant {variant}; "
                             f"valid labels: {', '.join(fr.labels)}")
        sh = shadow_2d(fr.poly, cfg.dims)
        for x, y in sh.vertices:
            rows.append(f"{variant},{_fmt(x)},{_fmt(y)}")
        layers.append(svg.Layer(variant, sh.vertices))
        print(f"{variant}: {sh.kind} with {len(sh.vertices)} vertices, area {sh.area:.6g}")
    stem = f"shadow_{a}_{b}"
    _write(cfg.out / f"{stem}.csv", "\n".join(rows) + "\n")
    _write(cfg.out / f"{stem}.svg", svg.render(layers, cfg.dims, f"{a} vs {b}"))
    return EXIT_OK


def _is_extremes_mode(ctx: _Context, variant: str) -> bool:
    return ctx.coupling(variant).dim > 2


def _sample_2d(ctx: _Context, variant: str) -> tuple[ForResult, SampledFor]:
    fr = ctx.region(variant)
    if fr.poly.dim != 2:
        raise UsageError(f"variant {variant} with this coupling is not two-dimensional")
    case = ctx.merged_case if variant == "merged_bus" else ctx.case
    coupling = ctx.coupling(variant)
    return fr, sample_boundary(case, coupling, n_grid=ctx.cfg.n_grid)


def _extremes(ctx: _Context, variant: str):
    fr = ctx.region(variant)
    samples = sample_extremes_7d(ctx.case, ctx.coupling(variant))
    return fr, samples


def _extreme_dims(fr: ForResult) -> tuple[str, str]:
    if all(d in fr.labels for d in EXTREME_DIMS):
        return EXTREME_DIMS
    flows = [lb for lb in fr.labels if lb.startswith("p_")]
    return tuple((flows + fr.labels)[:2])


def cmd_sample_ac(ctx: _Context) -> int:
    cfg = ctx.cfg
    variant = _variant(cfg, "merged_bus" if cfg.coupling is None else "free")
    if _is_extremes_mode(ctx, variant):
        fr, samples = _extremes(ctx, variant)
        dims = _extreme_dims(fr)
        idx = [fr.labels.index(d) for d in dims]
        pts = np.array([s.z[idx] for s in samples if s.converged]).reshape(-1, 2)
        hull = hull_2d(pts) if pts.shape[0] else np.zeros((0, 2))
        sh = shadow_2d(fr.poly, dims)
        _write(cfg.out / "samples.csv", samples_csv(samples, fr.labels))
        _write(cfg.out / "hull.csv", _points_csv(dims, hull))
        layers = [svg.Layer(f"linearized FOR ({variant})", sh.vertices),
                  svg.Layer("AC extremes", hull, pts, filled=False)]
        _write(cfg.out / "sample_ac.svg", svg.render(layers, dims, "AC extremes vs FOR"))
        print(f"{sum(s.converged for s in samples)} of {len(samples)} extremes converged")
        return EXIT_OK
    fr, sampled = _sample_2d(ctx, variant)
    _write(cfg.out / "samples.csv", samples_csv(sampled.samples, sampled.labels))
    _write(cfg.out / "hull.csv", sampled.hull_csv())
    verts, _ = polygon_vertices(fr.poly)
    layers = [svg.Layer(f"linearized FOR ({variant})", verts),
              svg.Layer("AC sampling", sampled.hull, sampled.points, filled=False)]
    _write(cfg.out / "sample_ac.svg", svg.render(layers, sampled.labels, "AC sampling vs FOR"))
    for note in sampled.notes:
        log.warning(note)
    print(f"{len(sampled.converged)} of {len(sampled.samples)} samples converged, "
          f"hull with {len(sampled.hull)} vertices")
    return EXIT_OK


def _points_csv(labels: Sequence[str], pts: np.ndarray) -> str:
    lines = [",".join(labels)]
    lines += [",".join(_fmt(x) for x in p) for p in pts]
    return "\n".join(lines) + "\n"


def extremes_report(fr: ForResult, samples, delta: float) -> dict:
    """Inflated and exact containment of AC extreme samples in a FOR."""
    ranges = fr.coordinate_ranges()
    grown = fr.poly.inflate(delta * (ranges[:, 1] - ranges[:, 0]))
    rows = []
    for s in samples:
        if not s.converged:
            rows.append({"direction": s.direction, "converged": False})
            continue
        _, viol, _ = for_membership(fr, s.z)
        worst, _ = grown.violation(s.z)
        rows.append({"direction": s.direction, "converged": True,
                     "violation": max(viol, 0.0), "inflated_violation": max(worst, 0.0),
                     "inside_inflated": bool(worst <= MEMBERSHIP_TOL)})
    done = [r for r in rows if r["converged"]]
    return {
        "labels": fr.labels, "variant": fr.variant, "delta": delta,
        "pins": "boundary buses at v = 1, theta = 0",
        "samples": len(rows), "converged": len(done),
        "outside_exact": sum(r["violation"] > MEMBERSHIP_TOL for r in done),
        "outside_inflated": sum(not r["inside_inflated"] for r in done),
        "per_sample": rows,
    }


def nesting_report(ctx: _Context, seed: int, n: int = NESTING_DIRECTIONS) -> dict:
    """Support-function ordering fixed_all <= fixed_angle <= free in random directions."""
    regions = [ctx.region(v) for v in TABLE_VARIANTS]
    dim = regions[0].poly.dim
    dirs = np.random.default_rng(seed).normal(size=(n, dim))
    worst = [-np.inf, -np.inf]
    violations = 0
    for d in dirs:
        h = [r.support(d) for r in regions]
        gaps = (h[1] - h[0], h[2] - h[1])
        worst = [max(w, g) for w, g in zip(worst, gaps)]
        violations += sum(g > NESTING_TOL for g in gaps)
    return {"variants": list(TABLE_VARIANTS), "directions": n, "seed": seed,
            "tolerance": NESTING_TOL, "violations": int(violations),
            "max_gap_fixed_angle_over_free": float(worst[0]),
            "max_gap_fixed_all_over_fixed_angle": float(worst[1]),
            "pass": violations == 0}


def cmd_compare(ctx: _Context) -> int:
    cfg = ctx.cfg
    variant = _variant(cfg, "merged_bus" if cfg.coupling is None else "free")
    if _is_extremes_mode(ctx, variant):
        fr, samples = _extremes(ctx, variant)
        report = {"mode": "extremes", **extremes_report(fr, samples, cfg.delta)}
        print(f"{report['outside_inflated']} of {report['converged']} extremes outside the "
              f"FOR inflated by {cfg.delta:g}")
    else:
        fr, sampled = _sample_2d(ctx, variant)
        report = {"mode": "boundary", **compare_for(fr, sampled)}
        print(f"containment {report['containment_fraction']:.4f}, area ratio "
              f"{report['area_ratio']:.4f}")
    if cfg.check_nesting:
        nest = nesting_report(ctx, cfg.seed)
        report["nesting"] = nest
        print(f"nesting: {'PASS' if nest['pass'] else 'FAIL'} "
              f"({nest['violations']} violations in {nest['directions']} directions)")
    _write(cfg.out / "compare.json", _dump_json(report))
    return EXIT_OK


HANDLERS = {"validate": cmd_validate, "compute-for": cmd_compute_for, "shadow": cmd_shadow,
            "sample-ac": cmd_sample_ac, "compare": cmd_compare}


def _setup_logging() -> None:
    level = os.environ.get("FLEXOR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        cfg = RunConfig.from_args(build_parser().parse_args(argv))
        if cfg.command != "validate":
            cfg.out.mkdir(parents=True, exist_ok=True)
            if not os.access(cfg.out, os.W_OK):
                raise UsageError(f"output directory {cfg.out} is not writable")
        case = load_case(cfg.case_path)
        if cfg.alpha is not None:
            case = with_generators(case, alpha=cfg.alpha)
        return HANDLERS[cfg.command](_Context(cfg, case))
    except UsageError as exc:
        print(f"flexor: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OperatingPointError, NewtonError, ProjectionError, LpError, UnboundedError,
            EmptyPolyhedronError, DegenerateRegionError, np.linalg.LinAlgError,
            RuntimeError) as exc:
        print(f"flexor: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CaseError, OSError, ValueError, KeyError) as exc:
        print(f"flexor: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import ConvexHull

from flexor.polytope import (EmptyPolyhedronError, HPolyhedron, ProjectionError,
                             ProjectionStats, UnboundedError, canonicalize,
                             eliminate_equalities, fm_project, hull_2d, lifted_membership,
                             polygon_area, polygon_vertices, project, redundancy_filter,
                             shadow_2d, support)

from oracles import hull_bruteforce, lifted_slack, random_polytope, vertices


def box(names, lo=0.0, hi=1.0):
    n = len(names)
    return HPolyhedron.from_box(names, np.full(n, lo), np.full(n, hi))


def simplex(names):
    n = len(names)
    a = np.vstack([np.ones(n), -np.eye(n)])
    return HPolyhedron(tuple(names), a, np.r_[1.0, np.zeros(n)])


def interval(p):
    """(lo, hi) of a one-variable polyhedron."""
    return -support(p, [-1.0]), support(p, [1.0])


# -- HPolyhedron and canonicalize ------------------------------------------------

def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    p = HPolyhedron(("a", "b", "c"), rng.normal(size=(5, 3)), rng.normal(size=5),
                    rng.normal(size=(2, 3)), rng.normal(size=2))
    path = tmp_path / "poly.csv"
    path.write_text(p.to_csv(["note: test"]))
    q = HPolyhedron.from_csv(path.read_text())
    assert q.var_names == p.var_names
    assert np.array_equal(q.a_ineq, p.a_ineq) and np.array_equal(q.b_ineq, p.b_ineq)
    assert np.array_equal(q.a_eq, p.a_eq) and np.array_equal(q.b_eq, p.b_eq)
    assert q.to_csv(["note: test"]) == p.to_csv(["note: test"])


def test_csv_header_format():
    text = box(["x", "y"]).to_csv()
    assert text.splitlines()[0] == "var:x,var:y,rhs"
    with pytest.raises(ValueError):
        HPolyhedron.from_csv("x,y,rhs\n1,0,1\n")


def test_canonicalize_scales_rows():
    p = canonicalize(HPolyhedron(("x",), [[2.0]], [4.0]))
    assert p.a_ineq.tolist() == [[1.0]] and p.b_ineq.tolist() == [2.0]


def test_canonicalize_merges_scaled_duplicates():
    p = canonicalize(HPolyhedron(("x", "y"), [[1.0, 1.0], [3.0, 3.0]], [1.0, 2.0]))
    assert p.n_ineq == 1
    assert p.b_ineq[0] == pytest.approx(2.0 / (3.0 * np.sqrt(2)))


def test_canonicalize_detects_trivially_empty():
    p = canonicalize(HPolyhedron(("x",), [[0.0]], [-1.0]))
    assert p.empty


@pytest.mark.parametrize("seed", range(100))
def test_canonicalize_idempotent(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 12)), int(rng.integers(1, 5))
    a = rng.normal(size=(m, n)) * rng.choice([1e-13, 1.0, 5.0], size=(m, n))
    p = HPolyhedron(tuple(f"x{i}" for i in range(n)), a, rng.normal(size=m),
                    rng.normal(size=(1, n)), rng.normal(size=1))
    once = canonicalize(p)
    assert canonicalize(once).to_csv() == once.to_csv()
    norms = np.linalg.norm(once.a_ineq, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_inflate_widens_by_box():
    p = box(["x", "y"]).inflate([0.1, 0.2])
    assert support(p, [1, 0]) == pytest.approx(1.1) and support(p, [0, -1]) == pytest.approx(0.2)


# -- equality elimination -------------------------------------------------------

def test_eliminate_equalities_segment():
    p = HPolyhedron(("x", "y"), [[-1, 0], [0, -1]], [0, 0], [[1, 1]], [1.0])
    red = eliminate_equalities(p)
    assert red.reduced.dim == 1 and red.reduced.n_eq == 0
    (lo, hi) = interval(red.reduced)
    ends = sorted(tuple(red.recover(np.array([t]))) for t in (lo, hi))
    np.testing.assert_allclose(ends, [(0.0, 1.0), (1.0, 0.0)], atol=1e-12)


def test_eliminate_equalities_full_rank_point():
    p = HPolyhedron(("x", "y"), [[1, 0]], [5.0], [[1, 0], [0, 1]], [1.0, 2.0])
    red = eliminate_equalities(p)
    assert red.reduced.dim == 0 and not red.reduced.empty
    np.testing.assert_allclose(red.recover(np.zeros(0)), [1.0, 2.0])


def test_eliminate_equalities_inconsistent():
    p = HPolyhedron(("x", "y"), np.zeros((0, 2)), [], [[1, 1], [2, 2]], [1.0, 3.0])
    assert eliminate_equalities(p).reduced.empty


def test_eliminate_equalities_sampling_oracle():
    rng = np.random.default_rng(2)
    n, p_eq = 6, 2
    base = random_polytope(rng, n, 16)
    c = rng.normal(size=(p_eq, n))
    x0 = np.linalg.lstsq(c, np.zeros(p_eq), rcond=None)[0]
    poly = HPolyhedron(base.var_names, base.a_ineq, base.b_ineq, c, c @ x0)
    red = eliminate_equalities(poly)
    assert red.reduced.dim == n - p_eq
    lo = np.array([-support(red.reduced, -e) for e in np.eye(red.reduced.dim)])
    hi = np.array([support(red.reduced, e) for e in np.eye(red.reduced.dim)])
    pts = rng.uniform(lo, hi, size=(20000, red.reduced.dim))
    pts = pts[np.all(pts @ red.reduced.a_ineq.T <= red.reduced.b_ineq, axis=1)][:1000]
    assert len(pts) >= 100
    full = red.recover(pts)
    assert np.max(full @ poly.a_ineq.T - poly.b_ineq) <= 1e-9
    assert np.max(np.abs(full @ c.T - c @ x0)) <= 1e-9


# -- Fourier-Motzkin -------------------------------------------------------------

def test_fm_box_onto_first_coordinate():
    p = fm_project(box(["x", "y"]), ["x"])
    assert interval(p) == pytest.approx((0.0, 1.0))
    assert p.n_ineq == 2


def test_fm_simplex_onto_x():
    p = fm_project(simplex(["x", "y"]), ["x"])
    assert interval(p) == pytest.approx((0.0, 1.0))


def test_fm_rejects_equalities():
    with pytest.raises(ValueError):
        fm_project(HPolyhedron(("x",), [[1.0]], [1.0], [[1.0]], [0.5]), ["x"])


def test_fm_unknown_keep():
    with pytest.raises(KeyError):
        fm_project(box(["x"]), ["z"])


def test_fm_empty_input():
    p = HPolyhedron(("x", "y"), [[1, 0], [-1, 0], [0, 1]], [0.0, -1.0, 1.0])
    assert fm_project(p, ["y"]).empty


def test_fm_row_cap():
    rng = np.random.default_rng(4)
    poly = random_polytope(rng, 6, 20)
    with pytest.raises(ProjectionError, match="cap"):
        fm_project(poly, ["x0"], max_rows=5)


def test_fm_records_stats():
    stats = ProjectionStats()
    fm_project(random_polytope(np.random.default_rng(1), 4, 12), ["x0", "x1"], stats=stats)
    assert len(stats.eliminated) == 2 and len(stats.rows) == 2
    assert all(c >= d >= k for c, d, k in stats.rows)


@pytest.mark.parametrize("seed", range(25))
def test_fm_matches_vertex_hull_and_lift(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(3, 7))
    m = int(rng.integers(n + 2, 21))
    k = int(rng.integers(2, 4))
    poly = random_polytope(rng, n, m)
    keep = list(poly.var_names[:k])
    out = fm_project(poly, keep)
    # support functions equal the max over projected vertices
    vtx = vertices(poly.a_ineq, poly.b_ineq)[:, :k]
    for d in rng.normal(size=(30, k)):
        assert support(out, d) == pytest.approx(np.max(vtx @ d), abs=1e-7)
    # membership agrees with the lifted LP on probes around the shadow
    lo, hi = vtx.min(axis=0), vtx.max(axis=0)
    probes = rng.uniform(lo - 0.2 * (hi - lo), hi + 0.2 * (hi - lo), size=(300, k))
    t = lifted_slack(poly, list(range(k)), probes)
    viol = np.max(probes @ out.a_ineq.T - out.b_ineq, axis=1)
    assert not np.any((viol < -1e-7) & (t > 1e-7))
    assert not np.any((viol > 1e-7) & (t < -1e-7))


@pytest.mark.parametrize("seed", range(10))
def test_projection_commutes(seed):
    rng = np.random.default_rng(2000 + seed)
    poly = random_polytope(rng, 5, 16)
    names = poly.var_names
    one = fm_project(poly, names[:2])
    two = fm_project(fm_project(poly, names[:4]), names[:2])
    for d in rng.normal(size=(50, 2)):
        assert support(one, d) == pytest.approx(support(two, d), abs=1e-6)


def test_project_with_equalities_keeps_determined_variable():
    # z = x + y with x, y in [0, 1]; project onto (x, z)
    base = box(["x", "y"])
    p = HPolyhedron(("x", "y", "z"), np.hstack([base.a_ineq, np.zeros((4, 1))]), base.b_ineq,
                    [[1.0, 1.0, -1.0]], [0.0])
    out = project(p, ["x", "z"])
    assert support(out, [0, 1]) == pytest.approx(2.0)
    assert support(out, [1, -1]) == pytest.approx(0.0, abs=1e-12)
    out_z = project(p, ["z", "x", "y"])
    assert out_z.n_eq == 1


# -- redundancy -------------------------------------------------------------------

def test_redundancy_filter_simple():
    p = redundancy_filter(HPolyhedron(("x",), [[1.0], [1.0], [-1.0]], [1.0, 2.0, 0.0]))
    assert p.n_ineq == 2 and support(p, [1.0]) == pytest.approx(1.0)


def test_redundancy_filter_duplicates():
    p = redundancy_filter(HPolyhedron(("x", "y"), [[1, 0], [1, 0], [-1, 0], [0, 1], [0, -1]],
                                      [1, 1, 0, 1, 0]))
    assert p.n_ineq == 4


@pytest.mark.parametrize("seed", range(20))
def test_redundancy_filter_probe_oracle(seed):
    rng = np.random.default_rng(3000 + seed)
    n = int(rng.integers(2, 5))
    core = random_polytope(rng, n, int(rng.integers(n + 2, 12)))
    # append implied rows: nonnegative combinations of existing rows, loosened
    w = rng.uniform(0, 1, size=(8, core.n_ineq)) * (rng.uniform(size=(8, core.n_ineq)) < 0.4)
    extra_a = w @ core.a_ineq
    extra_b = w @ core.b_ineq + rng.uniform(0, 0.2, 8)
    full = HPolyhedron(core.var_names, np.vstack([core.a_ineq, extra_a]),
                       np.concatenate([core.b_ineq, extra_b]))
    out = redundancy_filter(full)
    vtx = vertices(core.a_ineq, core.b_ineq)
    lo, hi = vtx.min(axis=0), vtx.max(axis=0)
    probes = rng.uniform(lo - 0.3, hi + 0.3, size=(1000, n))
    inside_full = np.max(probes @ full.a_ineq.T - full.b_ineq, axis=1) <= 0
    inside_out = np.max(probes @ out.a_ineq.T - out.b_ineq, axis=1) <= 0
    assert np.array_equal(inside_full, inside_out)
    # every kept row is a facet: removing it changes the support
    for i in range(out.n_ineq):
        rest = HPolyhedron(out.var_names, np.delete(out.a_ineq, i, 0), np.delete(out.b_ineq, i))
        try:
            assert support(rest, out.a_ineq[i]) > out.b_ineq[i] + 1e-9
        except UnboundedError:
            pass


# -- support and shadows ----------------------------------------------------------

def test_support_examples():
    b = box(["x", "y"])
    assert support(b, [1, 1]) == pytest.approx(2.0)
    assert support(b, [0, 0]) == pytest.approx(0.0)


def test_support_unbounded_and_empty():
    half = HPolyhedron(("x",), [[-1.0]], [0.0])
    with pytest.raises(UnboundedError) as info:
        support(half, [1.0])
    assert info.value.ray[0] > 0
    with pytest.raises(EmptyPolyhedronError):
        support(HPolyhedron.empty_set(("x",)), [1.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_support_sublinear(vals):
    p = random_polytope(np.random.default_rng(7), 3, 10)
    d1, d2 = np.array(vals[:3]), np.array(vals[3:])
    assert support(p, d1 + d2) <= support(p, d1) + support(p, d2) + 1e-9


def test_support_vs_vertices():
    rng = np.random.default_rng(8)
    for _ in range(10):
        p = random_polytope(rng, 4, 12)
        vtx = vertices(p.a_ineq, p.b_ineq)
        for d in rng.normal(size=(10, 4)):
            assert support(p, d) == pytest.approx(np.max(vtx @ d), abs=1e-7)


def test_shadow_of_cube():
    sh = shadow_2d(box(["x", "y", "z"]), ["x", "y"])
    assert sh.kind == "polygon"
    np.testing.assert_allclose(sh.vertices, [[0, 0], [1, 0], [1, 1], [0, 1]], atol=1e-12)


def test_shadow_of_simplex():
    sh = shadow_2d(simplex(["x", "y", "z"]), ["x", "y"])
    np.testing.assert_allclose(sh.vertices, [[0, 0], [1, 0], [0, 1]], atol=1e-12)


def test_shadow_degenerate_segment_and_point():
    seg = HPolyhedron(("x", "y"), [[-1, 0], [1, 0]], [0, 1], [[0, 1]], [0.5])
    verts, kind = polygon_vertices(seg)
    assert kind == "segment"
    np.testing.assert_allclose(verts, [[0, 0.5], [1, 0.5]], atol=1e-12)
    pt = HPolyhedron(("x", "y"), np.zeros((0, 2)), [], [[1, 0], [0, 1]], [0.2, 0.3])
    verts, kind = polygon_vertices(pt)
    assert kind == "point"
    np.testing.assert_allclose(verts, [[0.2, 0.3]])
    assert polygon_vertices(HPolyhedron.empty_set(("x", "y")))[1] == "empty"


def test_shadow_unbounded_reported():
    with pytest.raises(UnboundedError):
        shadow_2d(HPolyhedron(("x", "y"), [[-1, 0], [0, -1]], [0, 0]), ["x", "y"])


def test_shadow_unknown_dim():
    with pytest.raises(KeyError):
        shadow_2d(box(["x", "y"]), ["x", "w"])


@pytest.mark.parametrize("seed", range(10))
def test_random_5d_shadow(seed):
    rng = np.random.default_rng(4000 + seed)
    poly = random_polytope(rng, 5, 14)
    sh = shadow_2d(poly, ["x0", "x1"])
    # vertex oracle: hull of projected vertices
    ref = hull_2d(vertices(poly.a_ineq, poly.b_ineq)[:, :2])
    assert len(ref) == len(sh.vertices)
    for v in ref:
        assert np.min(np.linalg.norm(sh.vertices - v, axis=1)) <= 1e-7
    # vertices satisfy every halfplane of the shadow
    assert np.max(sh.vertices @ sh.poly.a_ineq.T - sh.poly.b_ineq) <= 1e-8
    # counter-clockwise order
    e = np.roll(sh.vertices, -1, axis=0) - sh.vertices
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    assert np.all(cross > 0)
    # sampling oracle: projected interior samples lie inside, hull close to the shadow
    lo = np.array([-support(poly, -d) for d in np.eye(5)])
    hi = np.array([support(poly, d) for d in np.eye(5)])
    pts = rng.uniform(lo, hi, size=(200000, 5))
    pts = pts[np.all(pts @ poly.a_ineq.T <= poly.b_ineq, axis=1)][:10000, :2]
    assert np.max(pts @ sh.poly.a_ineq.T - sh.poly.b_ineq) <= 1e-9
    assert polygon_area(hull_2d(pts)) <= sh.area + 1e-12


def test_lifted_membership_cube():
    b = box(["x", "y", "z"])
    assert lifted_membership(b, ["x", "y"], [0.5, 0.5])
    assert not lifted_membership(b, ["x", "y"], [1.5, 0.5])


# -- hulls ------------------------------------------------------------------------

def test_hull_square_with_centre():
    pts = [(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)]
    np.testing.assert_allclose(hull_2d(pts), [[0, 0], [1, 0], [1, 1], [0, 1]])


def test_hull_collinear():
    np.testing.assert_allclose(hull_2d([(0, 0), (1, 1), (2, 2), (0.5, 0.5)]), [[0, 0], [2, 2]])


def test_hull_single_point():
    np.testing.assert_allclose(hull_2d([(3.0, 4.0)] * 3), [[3.0, 4.0]])


def test_hull_matches_qhull_on_1000_points():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(1000, 2))
    hull = hull_2d(pts)
    ref = ConvexHull(pts)
    # qhull lists vertices counter-clockwise in 2D
    assert {tuple(v) for v in hull} == {tuple(pts[i]) for i in ref.vertices}
    assert polygon_area(hull) == pytest.approx(ref.volume, rel=1e-12)


def test_hull_vs_bruteforce():
    rng = np.random.default_rng(10)
    pts = rng.normal(size=(40, 2))
    assert {tuple(v) for v in hull_2d(pts)} == hull_bruteforce(pts)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=40))
def test_hull_convex_and_contains_inputs(raw):
    pts = np.array(raw, dtype=float)
    hull = hull_2d(pts)
    assert {tuple(v) for v in hull} == hull_bruteforce(pts)
    if len(hull) >= 3:
        e = np.roll(hull, -1, axis=0) - hull
        for v, d in zip(hull, e):
            assert np.all(d[0] * (pts[:, 1] - v[1]) - d[1] * (pts[:, 0] - v[0]) >= 0)

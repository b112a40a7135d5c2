import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from flexor.polytope.lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, batch_vertex_lp_max,
                                is_feasible, lp_solve)

TIGHT = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def brute_force_max(c, a, b, tol=1e-9):
    """Best objective over all feasible basic points (bounded problems)."""
    m, n = a.shape
    combos = np.array(list(itertools.combinations(range(m), n)))
    mats = a[combos]
    ok = np.abs(np.linalg.det(mats)) > 1e-10
    pts = np.linalg.solve(mats[ok], b[combos[ok]][..., None])[..., 0]
    feas = np.all(pts @ a.T <= b + tol * (1 + np.abs(b)), axis=1)
    return float(np.max(pts[feas] @ c)) if feas.any() else None


def random_bounded_lp(rng, n, m):
    while True:
        a = rng.normal(size=(m, n))
        b = rng.uniform(0.1, 2.0, m) + a @ rng.normal(scale=0.3, size=n)
        c = rng.normal(size=n)
        ref = linprog(-c, A_ub=a, b_ub=b, bounds=[(None, None)] * n, method="highs",
                      options=TIGHT)
        if ref.status == 0:
            return c, a, b


def test_min_x_at_least_two():
    res = lp_solve([1.0], [[-1.0]], [-2.0])
    assert res.status == OPTIMAL and res.x[0] == pytest.approx(2.0) and res.value == pytest.approx(2.0)


def test_max_over_simplex():
    res = lp_solve([1.0, 1.0], [[1, 1], [-1, 0], [0, -1]], [1, 0, 0], maximize=True)
    assert res.status == OPTIMAL and res.value == pytest.approx(1.0)


def test_infeasible_with_certificate():
    a = np.array([[1.0], [-1.0]])
    b = np.array([0.0, -1.0])  # x <= 0 and x >= 1
    res = lp_solve([0.0], a, b)
    assert res.status == INFEASIBLE
    y = res.ray
    assert np.all(y >= -1e-12) and np.abs(y[:2] @ a).max() < 1e-9 and y[:2] @ b < 0
    assert not is_feasible(a, b)


def test_unbounded_with_ray():
    res = lp_solve([1.0, 0.0], [[-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [0.0, 1.0, 1.0],
                   maximize=True)
    assert res.status == UNBOUNDED and res.value == np.inf
    assert res.ray[0] > 0


def test_equality_constraints():
    res = lp_solve([1.0, 2.0], [[-1, 0], [0, -1]], [0, 0], [[1, 1]], [1.0])
    assert res.status == OPTIMAL and res.value == pytest.approx(1.0)
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-9)


def test_non_finite_data_rejected():
    with pytest.raises(ValueError):
        lp_solve([1.0], [[np.nan]], [1.0])


@pytest.mark.parametrize("seed", range(40))
def test_random_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    m_max = 30
    while m_max > n + 1 and math.comb(m_max, n) > 20000:
        m_max -= 1
    m = int(rng.integers(n + 1, m_max + 1))
    c, a, b = random_bounded_lp(rng, n, m)
    res = lp_solve(c, a, b, maximize=True)
    assert res.status == OPTIMAL
    assert np.max(a @ res.x - b) <= 1e-9 * max(1.0, np.abs(b).max())
    assert res.value == pytest.approx(c @ res.x, abs=1e-9)
    best = brute_force_max(c, a, b)
    assert res.value == pytest.approx(best, abs=1e-7 * max(1.0, abs(best)))


@pytest.mark.parametrize("seed", range(40))
def test_random_lp_with_equalities_matches_highs(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 9))
    m = int(rng.integers(n, 31))
    p = int(rng.integers(0, n))
    a = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    b = a @ x0 + rng.uniform(0.0, 1.0, m)
    c_eq = rng.normal(size=(p, n))
    d_eq = c_eq @ x0
    box = np.vstack([np.eye(n), -np.eye(n)])
    a = np.vstack([a, box])
    b = np.concatenate([b, np.full(2 * n, 5.0) + box @ x0])
    c = rng.normal(size=n)
    ref = linprog(c, A_ub=a, b_ub=b, A_eq=c_eq if p else None, b_eq=d_eq if p else None,
                  bounds=[(None, None)] * n, method="highs", options=TIGHT)
    res = lp_solve(c, a, b, c_eq, d_eq)
    assert ref.status == 0 and res.status == OPTIMAL
    assert res.value == pytest.approx(ref.fun, abs=1e-7 * max(1.0, abs(ref.fun)))
    if p:
        assert np.abs(c_eq @ res.x - d_eq).max() <= 1e-9


def test_degenerate_lp_terminates():
    # many constraints through the optimal vertex
    angles = np.linspace(0, np.pi / 2, 25)
    a = np.column_stack([np.cos(angles), np.sin(angles)])
    a = np.vstack([a, a * 2, [[-1, 0], [0, -1]]])
    b = np.concatenate([np.zeros(25), np.zeros(25), [1.0, 1.0]])
    res = lp_solve([1.0, 1.0], a, b, maximize=True)
    assert res.status == OPTIMAL and res.value == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_batch_vertex_lp_matches_lp_solve(seed):
    rng = np.random.default_rng(500 + seed)
    n = int(rng.integers(2, 7))
    m = int(rng.integers(2 * n, 40))
    a = rng.normal(size=(m, n))
    a /= np.linalg.norm(a, axis=1)[:, None]
    b = rng.uniform(0.2, 1.0, m)
    k = 25
    c = rng.normal(size=(k, n))
    own_a = rng.normal(size=(k, n))
    own_b = rng.uniform(0.1, 1.0, k)
    skip = rng.integers(-1, m, k)
    vals, xs = batch_vertex_lp_max(c, a, b, own_a, own_b, np.zeros(n), skip)
    for p in range(k):
        keep = np.arange(m) != skip[p]
        res = lp_solve(c[p], np.vstack([a[keep], own_a[p]]),
                       np.concatenate([b[keep], [own_b[p]]]), maximize=True)
        if res.status == UNBOUNDED:
            assert vals[p] == np.inf
            continue
        assert res.status == OPTIMAL
        assert vals[p] == pytest.approx(res.value, abs=1e-8 * max(1.0, abs(res.value)))
        assert np.max(a[keep] @ xs[p] - b[keep]) <= 1e-8

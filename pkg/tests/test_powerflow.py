import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexor.grid_model import build_admittance
from flexor.powerflow import (BusSpec, NewtonError, StateVector, ac_branch_flow,
                               ac_injections, injection_specs, jacobian, linear_branch_flow_coeffs,
                               linearize, mismatch_norm, newton_solve)

from conftest import two_bus_case


def random_state(case, rng):
    n = case.n_bus
    return StateVector(rng.uniform(0.9, 1.1, n), rng.uniform(-0.3, 0.3, n))


def fd_jacobian(state, y, h=1e-6):
    n = state.v.size
    out = np.zeros((2 * n, 2 * n))
    for j in range(2 * n):
        cols = []
        for sign in (1, -1):
            th, v = state.theta.copy(), state.v.copy()
            if j < n:
                th[j] += sign * h
            else:
                v[j - n] += sign * h
            inj = ac_injections(StateVector(v, th), y)
            cols.append(np.concatenate([inj.p, inj.q]))
        out[:, j] = (cols[0] - cols[1]) / (2 * h)
    return out


def test_flat_profile_has_no_flow(cigre):
    state = StateVector.flat(cigre.n_bus)
    for br in cigre.branches:
        assert ac_branch_flow(cigre, state, br) == (0.0, 0.0)
    y = build_admittance(cigre)
    inj = ac_injections(state, y)
    scale = np.abs(y.complex).max()
    assert np.abs(inj.p).max() <= 1e-12 * scale and np.abs(inj.q).max() <= 1e-12 * scale


def test_lossless_branch_closed_form():
    case = two_bus_case(r=0.0, x=0.1)
    state = StateVector([1.0, 1.0], [0.1, 0.0])
    p, q = ac_branch_flow(case, state, case.branches[0])
    assert p == pytest.approx(10 * np.sin(0.1), rel=1e-13)
    assert q == pytest.approx(10 - 10 * np.cos(0.1), rel=1e-12)
    inj = ac_injections(state, build_admittance(case))
    np.testing.assert_allclose(inj.p, [10 * np.sin(0.1), -10 * np.sin(0.1)], rtol=1e-13)
    np.testing.assert_allclose(inj.q, [10 - 10 * np.cos(0.1)] * 2, rtol=1e-12)


def test_loss_identity_matches_phasors():
    case = two_bus_case(r=0.05, x=0.1)
    br = case.branches[0]
    state = StateVector([1.02, 0.97], [0.0, 0.0])
    pk, qk = ac_branch_flow(case, state, br)
    pl, ql = ac_branch_flow(case, state, br, at=2)
    vk, vl = state.phasor
    current = (vk - vl) / complex(br.r, br.x)
    loss = abs(current) ** 2 * complex(br.r, br.x)
    assert pk + pl == pytest.approx(loss.real, rel=1e-12)
    assert qk + ql == pytest.approx(loss.imag, rel=1e-12)
    assert pk + pl >= 0
    s_k = vk * np.conj(current)
    assert pk == pytest.approx(s_k.real, rel=1e-12) and qk == pytest.approx(s_k.imag, rel=1e-12)


def test_flow_sums_equal_injections(cigre):
    rng = np.random.default_rng(3)
    y = build_admittance(cigre)
    for _ in range(20):
        state = random_state(cigre, rng)
        inj = ac_injections(state, y)
        p, q = np.zeros(cigre.n_bus), np.zeros(cigre.n_bus)
        for br in cigre.branches:
            for end in (br.from_bus, br.to_bus):
                fp, fq = ac_branch_flow(cigre, state, br, at=end)
                p[cigre.index(end)] += fp
                q[cigre.index(end)] += fq
        np.testing.assert_allclose(p, inj.p, atol=1e-12 * max(1.0, np.abs(y.b).max() / 100))
        np.testing.assert_allclose(q, inj.q, atol=1e-12 * max(1.0, np.abs(y.b).max() / 100))


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_angle_offset_invariance(offset):
    case = two_bus_case(r=0.02, x=0.1)
    y = build_admittance(case)
    state = StateVector([1.03, 0.98], [0.05, -0.12])
    a, b = ac_injections(state, y), ac_injections(state.shifted(offset), y)
    np.testing.assert_allclose(a.p, b.p, atol=1e-12)
    np.testing.assert_allclose(a.q, b.q, atol=1e-12)


def test_jacobian_matches_finite_differences(cigre):
    rng = np.random.default_rng(7)
    y = build_admittance(cigre)
    n = cigre.n_bus
    for _ in range(5):
        state = random_state(cigre, rng)
        jac, fd = jacobian(state, y), fd_jacobian(state, y)
        for rs in (slice(0, n), slice(n, 2 * n)):
            for cs in (slice(0, n), slice(n, 2 * n)):
                scale = np.abs(jac[rs, cs]).max()
                assert np.abs(jac[rs, cs] - fd[rs, cs]).max() <= 1e-6 * scale


def test_angle_row_sums_vanish(cigre):
    rng = np.random.default_rng(11)
    y = build_admittance(cigre)
    n = cigre.n_bus
    state = random_state(cigre, rng)
    jac = jacobian(state, y)
    scale = np.abs(jac).max()
    np.testing.assert_allclose(jac[:n, :n].sum(axis=1), 0.0, atol=1e-10 * scale)
    np.testing.assert_allclose(jac[n:, :n].sum(axis=1), 0.0, atol=1e-10 * scale)


def test_taylor_anchor_is_exact(cigre):
    state = random_state(cigre, np.random.default_rng(5))
    op = linearize(cigre, state)
    pred = op.predict(state)
    assert np.array_equal(pred.p, op.injection.p) and np.array_equal(pred.q, op.injection.q)


def test_newton_zero_load_is_flat():
    case = two_bus_case(p_demand=0.0)
    res = newton_solve(case, injection_specs(case))
    np.testing.assert_allclose(res.state.v, 1.0, atol=1e-12)
    np.testing.assert_allclose(res.state.theta, 0.0, atol=1e-12)


def test_newton_two_bus_closed_form():
    # lossless line, q2 = 0 forces v2 = cos(theta2) and 10 v2 sin(-theta2) = 0.5
    case = two_bus_case(p_demand=0.5)
    res = newton_solve(case, injection_specs(case))
    theta2 = -0.5 * np.arcsin(0.1)
    assert res.state.theta[1] == pytest.approx(theta2, abs=1e-10)
    assert res.state.v[1] == pytest.approx(np.cos(theta2), abs=1e-10)
    assert res.mismatch <= 1e-10
    assert mismatch_norm(case, res.state, injection_specs(case)) <= 1e-10


def test_newton_beyond_loadability_fails():
    case = two_bus_case(p_demand=20.0)
    with pytest.raises(NewtonError):
        newton_solve(case, injection_specs(case))


def test_newton_needs_slack():
    case = two_bus_case()
    spec = {1: BusSpec("pq"), 2: BusSpec("pq", p=-0.5)}
    with pytest.raises(NewtonError):
        newton_solve(case, spec)


def test_newton_cigre_certificate(cigre):
    spec = injection_specs(cigre)
    res = newton_solve(cigre, spec)
    assert mismatch_norm(cigre, res.state, spec) <= 1e-10


def test_branch_flow_coeffs_anchor_and_derivatives(cigre):
    rng = np.random.default_rng(13)
    state = random_state(cigre, rng)
    h = 1e-6
    for br in cigre.branches:
        form = linear_branch_flow_coeffs(cigre, state, br)
        p, q = ac_branch_flow(cigre, state, br)
        assert (form.p0, form.q0) == pytest.approx((p, q), abs=1e-15)
        idx = [cigre.index(br.from_bus), cigre.index(br.to_bus)]
        fd_p, fd_q = np.zeros(4), np.zeros(4)
        for j in range(4):
            pts = []
            for sign in (1, -1):
                th, v = state.theta.copy(), state.v.copy()
                if j < 2:
                    th[idx[j]] += sign * h
                else:
                    v[idx[j - 2]] += sign * h
                pts.append(ac_branch_flow(cigre, StateVector(v, th), br))
            fd_p[j] = (pts[0][0] - pts[1][0]) / (2 * h)
            fd_q[j] = (pts[0][1] - pts[1][1]) / (2 * h)
        scale = max(np.abs(form.p_coeffs).max(), np.abs(form.q_coeffs).max())
        assert np.abs(form.p_coeffs - fd_p).max() <= 1e-6 * scale
        assert np.abs(form.q_coeffs - fd_q).max() <= 1e-6 * scale


def test_branch_forms_sum_to_linearized_injection(cigre):
    state = random_state(cigre, np.random.default_rng(17))
    jac = jacobian(state, build_admittance(cigre))
    n = cigre.n_bus
    for bus in (4, 9):
        k = cigre.index(bus)
        row_p, row_q = np.zeros(2 * n), np.zeros(2 * n)
        for br in cigre.branches:
            if bus not in (br.from_bus, br.to_bus):
                continue
            # measure every incident flow at this bus
            if br.from_bus != bus:
                br = type(br)(br.to_bus, br.from_bus, br.r, br.x)
            form = linear_branch_flow_coeffs(cigre, state, br)
            ik, il = cigre.index(br.from_bus), cigre.index(br.to_bus)
            row_p[[ik, il, n + ik, n + il]] += form.p_coeffs
            row_q[[ik, il, n + ik, n + il]] += form.q_coeffs
        np.testing.assert_allclose(row_p, jac[k], atol=1e-9 * np.abs(jac[k]).max())
        np.testing.assert_allclose(row_q, jac[n + k], atol=1e-9 * np.abs(jac[n + k]).max())

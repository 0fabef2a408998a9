import numpy as np
import pytest
from hypothesis import given, strategies as st

from romforge import (ContractError, NewmarkConfig, State, SweepPlan, make_duffing,
                      make_two_dof_1to2, newmark_step, simulate, steady_state, sweep)
from romforge.newmark import consistent_acceleration

from conftest import random_model

EXACT = NewmarkConfig(tol_rel=0.0, tol_abs=0.0)
TWO_PI = 2 * np.pi


def linear_newmark_step(M, C, K, F1, D0, V0, A0, dt):
    """Closed-form average-acceleration step for a linear system."""
    Dp = D0 + dt * V0 + 0.25 * dt ** 2 * A0
    Vp = V0 + 0.5 * dt * A0
    A1 = np.linalg.solve(M + 0.5 * dt * C + 0.25 * dt ** 2 * K, F1 - C @ Vp - K @ Dp)
    return Dp + 0.25 * dt ** 2 * A1, Vp + 0.5 * dt * A1, A1


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
def test_linear_step_matches_recurrence(seed, n):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n, g_nnz=0, h_nnz=0, beta=0.3, omega=1.7)
    D0, V0 = rng.standard_normal((2, n))
    A0 = consistent_acceleration(m, D0, V0)
    dt = 0.05
    out = newmark_step(m, State(D0, V0, A0), 0.0, dt)
    ref = linear_newmark_step(m.M.toarray(), m.C.toarray(), m.K.toarray(),
                              0.3 * m.forcing.F0 * np.cos(1.7 * dt), D0, V0, A0, dt)
    for got, exp in zip((out.D, out.V, out.A), ref):
        np.testing.assert_allclose(got, exp, rtol=1e-12, atol=1e-12 * np.abs(exp).max())


def test_step_residual_vanishes(rng):
    m = random_model(rng, 5, beta=0.5, omega=1.1)
    st0 = State(*(np.zeros(5) for _ in range(2)), consistent_acceleration(m, np.zeros(5), np.zeros(5)))
    s1 = newmark_step(m, st0, 0.0, 0.1)
    r = m.M @ s1.A + m.C @ s1.V + m.evaluator.internal_force(s1.D) - 0.5 * m.forcing.F0 * np.cos(0.11)
    assert np.linalg.norm(r) < 1e-8 * np.linalg.norm(m.forcing.F0)


def test_zero_forcing_rest_stays_zero():
    m = make_duffing(1.0, 0.1, 50.0)
    tr = simulate(m, 20.0, 0.1, beta=0.0)
    assert not np.any(tr.D) and not np.any(tr.V)


def duffing_energy(tr, gamma):
    D, V = tr.D[0], tr.V[0]
    return 0.5 * V ** 2 + 0.5 * D ** 2 + 0.25 * gamma * D ** 4


def test_duffing_energy_conserved():
    gamma, a = 0.1, 0.1
    m = make_duffing(1.0, gamma, 1e300, beta=0.0)
    init = State(np.array([a]), np.array([0.0]), np.array([-a - gamma * a ** 3]))
    tr = simulate(m, 100 * TWO_PI, TWO_PI / 200, initial=init, beta=0.0, record_initial=True,
                  config=EXACT)
    E = duffing_energy(tr, gamma)
    assert np.abs(E - E[0]).max() / E[0] < 1e-6


def two_dof_energy_run(spp, periods=100, det=0.1, gc=0.3):
    m = make_two_dof_1to2(1.0, det, gc, 1e300, beta=0.0)
    D0 = np.array([0.5, 0.2])
    init = State(D0, np.zeros(2), consistent_acceleration(m, D0, np.zeros(2), beta=0.0))
    tr = simulate(m, periods * TWO_PI, TWO_PI / spp, initial=init, beta=0.0, record_initial=True,
                  config=EXACT)
    q1, q2 = tr.D
    w2 = 2 * (1 + det)
    E = 0.5 * (tr.V ** 2).sum(0) + 0.5 * (q1 ** 2 + w2 ** 2 * q2 ** 2) + gc * q1 ** 2 * q2
    return E


def test_two_dof_energy_no_secular_drift():
    E = two_dof_energy_run(200)
    k = 10 * 200
    assert abs(E[-k:].mean() - E[:k].mean()) / E[0] < 1e-6


def test_two_dof_energy_error_is_second_order():
    e = [np.abs(E - E[0]).max() / E[0] for E in (two_dof_energy_run(200, 20), two_dof_energy_run(400, 20))]
    assert e[0] / e[1] == pytest.approx(4.0, rel=0.1)


def test_stride_subsamples_exactly():
    m = make_duffing(1.0, 0.1, 50.0, beta=0.05)
    a = simulate(m, 30.0, 0.05)
    b = simulate(m, 30.0, 0.05, stride=5)
    np.testing.assert_array_equal(b.D, a.D[:, 4::5])
    np.testing.assert_array_equal(b.V, a.V[:, 4::5])
    np.testing.assert_array_equal(b.times, a.times[4::5])


def test_deterministic_bitwise(rng):
    m = random_model(rng, 80, beta=0.2, omega=1.0)  # sparse path
    a = simulate(m, 5.0, 0.05)
    b = simulate(m, 5.0, 0.05)
    np.testing.assert_array_equal(a.D, b.D)
    s = make_duffing(1.0, 0.1, 50.0, beta=0.05)
    np.testing.assert_array_equal(simulate(s, 10.0, 0.1).D, simulate(s, 10.0, 0.1).D)


def test_dense_and_sparse_paths_agree(rng):
    from romforge import newmark

    m = random_model(rng, 10, beta=0.2, omega=1.0)
    a = simulate(m, 3.0, 0.05, config=EXACT)
    old = newmark.DENSE_MAX
    newmark.DENSE_MAX = 0
    try:
        b = simulate(m, 3.0, 0.05, config=EXACT)
    finally:
        newmark.DENSE_MAX = old
    np.testing.assert_allclose(b.D, a.D, rtol=1e-9, atol=1e-12 * np.abs(a.D).max())


def test_sparse_path_default_tolerance_on_stiff_beam():
    from romforge import BeamSpec, make_vk_beam

    m = make_vk_beam(BeamSpec(n_elements=101), beta=0.1)
    w = m.meta["omega_ref"]
    tr = simulate(m, 4 * TWO_PI / w, TWO_PI / w / 64, omega=w)
    assert m.n == 300 and tr.n_t == 256
    assert np.isfinite(tr.D).all() and np.abs(tr.observe(m)).max() > 0


def test_second_order_convergence():
    m = make_duffing(1.0, 0.0, 50.0, beta=1.0, omega=0.8)
    T = 10.0
    ref = simulate(m, T, 0.1 / 8, config=EXACT).final.D
    e1 = np.abs(simulate(m, T, 0.1, config=EXACT).final.D - ref)[0]
    e2 = np.abs(simulate(m, T, 0.05, config=EXACT).final.D - ref)[0]
    assert e1 / e2 == pytest.approx(4.0, rel=0.15)


def test_linear_steady_state_matches_frf():
    Q, w0 = 50.0, 1.0
    m = make_duffing(w0, 0.0, Q, beta=0.01)
    for w in (0.97, 1.0, 1.02):
        ss = steady_state(m, w, steps_per_period=600, detect=False)
        exact = 0.01 / np.hypot(w0 ** 2 - w ** 2, w0 * w / Q)
        assert ss.amplitudes["x"] == pytest.approx(exact, rel=0.005)
        assert ss.periods == 6 * Q


def test_transient_envelope_time_constant():
    Q, w0 = 50.0, 1.0
    m = make_duffing(w0, 0.1, Q, beta=1e-3)
    spp = 100
    tr = simulate(m, 60 * TWO_PI, TWO_PI / spp, config=EXACT)
    x = tr.D[0].reshape(-1, spp)
    env = x.max(axis=1)
    a_ss = steady_state(m, w0, steps_per_period=spp, detect=False).amplitudes["x"]
    t = TWO_PI * (np.arange(env.size) + 0.5)
    sel = slice(5, 40)
    slope = np.polyfit(t[sel], np.log(a_ss - env[sel]), 1)[0]
    assert -1 / slope == pytest.approx(2 * Q / w0, rel=0.10)


def test_sweep_counts_and_single_segment():
    m = make_duffing(1.0, 0.1, 50.0, beta=0.01)
    plan = SweepPlan(omegas=(1.0, 0.99, 0.98, 0.97), cycles=100, steps_per_cycle=50)
    tr = sweep(m, plan)
    assert tr.D.shape == (1, 20000) and tr.times.size == 20000
    assert [s["stop"] - s["start"] for s in tr.segments] == [5000] * 4
    one = sweep(m, SweepPlan(omegas=(0.99,), cycles=10, steps_per_cycle=50, carry=False))
    ref = simulate(m, 10 * TWO_PI / 0.99, TWO_PI / 0.99 / 50, omega=0.99)
    np.testing.assert_array_equal(one.D, ref.D)


def test_carried_sweep_finds_upper_branch():
    # hardening: sweeping upward while carrying the state stays on the large branch
    m = make_duffing(1.0, 0.1, 50.0, beta=0.03)
    omegas = tuple(np.arange(1.0, 1.121, 0.02))
    kw = dict(omegas=omegas, cycles=300, steps_per_cycle=50, direction="up")
    carried = sweep(m, SweepPlan(carry=True, **kw))
    fresh = sweep(m, SweepPlan(carry=False, **kw))

    def last_amp(tr, k):
        s = tr.segments[k]
        return np.abs(tr.D[0, s["stop"] - 50:s["stop"]]).max()

    up = [last_amp(carried, k) for k in range(len(omegas))]
    cold = [last_amp(fresh, k) for k in range(len(omegas))]
    assert max(up) > 1.3 * max(cold)
    assert up[3] > 2 * cold[3]


def test_contract_errors():
    m = make_duffing(1.0, 0.1, 50.0)
    with pytest.raises(ContractError):
        simulate(m, 1.0, -0.1)
    with pytest.raises(ContractError):
        simulate(m, 1.0, 0.1, stride=0)
    with pytest.raises(ContractError):
        simulate(m, 1.0, 0.1, initial=(np.zeros(2), np.zeros(2)))
    with pytest.raises(ContractError):
        SweepPlan(omegas=(), cycles=1)

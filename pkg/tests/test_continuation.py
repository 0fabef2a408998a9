import numpy as np
import pytest

from romforge import (ContinuationConfig, ContractError, FourierSolution, HbConfig, classify_bifurcations,
                      floquet_multipliers, hb_residual, hb_solve, make_duffing, make_model, refine_peak,
                      steady_state, trace_frf)
from romforge.hb import HbSystem

from conftest import duffing_cusp_forcing, hysteresis_gap


def zero_solution(n, omega, H=3):
    return FourierSolution(omega, np.zeros(n), np.zeros((n, H)), np.zeros((n, H)), 0.0)


@pytest.fixture(scope="module")
def duffing_fold_branch():
    fc, _ = duffing_cusp_forcing(1.0, 0.1, 50.0)
    m = make_duffing(1.0, 0.1, 50.0)
    return m, trace_frf(m, (0.9, 1.2), 1.5 * fc, hb_config=HbConfig(H=5))


def test_linear_branch_matches_analytic_frf():
    Q = 50.0
    m = make_duffing(1.0, 0.0, Q)
    br = trace_frf(m, (0.8, 1.2), 0.01, hb_config=HbConfig(H=3))
    assert br.complete and not br.bifurcations()
    w = br.omegas
    assert np.all(np.diff(w) > 0)
    exact = 0.01 / np.hypot(1 - w ** 2, w / Q)
    np.testing.assert_allclose(br.amplitudes("x"), exact, rtol=1e-8)
    assert all(br.stable)
    assert w[0] == pytest.approx(0.8) and w[-1] == pytest.approx(1.2)


def test_duffing_fold_branch_structure(duffing_fold_branch):
    m, br = duffing_fold_branch
    assert br.complete
    sn = br.bifurcations("SN")
    assert len(sn) == 2 and not br.bifurcations("NS")
    i, j = sorted(br.points.index(p) for p in sn)
    st = br.stable
    assert not np.any(st[i + 1:j]) and j > i + 1
    assert np.all(st[:i]) and np.all(st[j + 1:])
    for p in sn:
        mu = floquet_multipliers(m, p.sol)
        k = int(np.argmin(np.abs(mu - 1)))
        assert abs(mu[k] - 1) < 1e-3 and abs(mu[k].imag) < 1e-3


def test_branch_points_satisfy_residual(duffing_fold_branch):
    m, br = duffing_fold_branch
    hs = HbSystem(m, HbConfig(H=5))
    for p in br.points:
        z = p.sol.Z.ravel()
        assert np.linalg.norm(hb_residual(m, p.sol, br.beta)) <= 1e-9 * hs.scale(z, br.beta)


def test_sn_points_at_turning_points(duffing_fold_branch):
    _, br = duffing_fold_branch
    w = br.omegas
    turns = [k for k in range(1, len(w) - 1) if (w[k] - w[k - 1]) * (w[k + 1] - w[k]) < 0]
    sn = [br.points.index(p) for p in br.bifurcations("SN")]
    assert len(turns) == 2
    for k in sn:
        assert min(abs(k - t) for t in turns) <= 1


def test_stability_changes_only_at_labels(duffing_fold_branch):
    _, br = duffing_fold_branch
    st = br.stable
    for k in range(len(st) - 1):
        if st[k] != st[k + 1]:
            assert br.points[k].bif != "NONE" or br.points[k + 1].bif != "NONE"


def test_below_cusp_no_folds():
    fc, _ = duffing_cusp_forcing(1.0, 0.1, 50.0)
    m = make_duffing(1.0, 0.1, 50.0)
    br = trace_frf(m, (0.9, 1.2), 0.7 * fc, hb_config=HbConfig(H=5))
    assert br.complete and not br.bifurcations()
    assert np.all(np.diff(br.omegas) > 0) and all(br.stable)


def test_brute_force_hysteresis_brackets_cusp():
    fc, wc = duffing_cusp_forcing(1.0, 0.1, 50.0)
    assert fc == pytest.approx(0.013152, rel=1e-4)
    m = make_duffing(1.0, 0.1, 50.0)
    grid = np.linspace(0.95, 1.15, 401)
    assert hysteresis_gap(m, grid, 0.8 * fc) < 1e-6
    assert hysteresis_gap(m, grid, 1.2 * fc) > 0.1


def test_stable_branch_matches_time_marching():
    m = make_duffing(1.0, 0.1, 50.0)
    beta = 0.006
    br = trace_frf(m, (0.95, 1.06), beta, hb_config=HbConfig(H=5))
    for w in (0.97, 0.99, 1.0, 1.01, 1.03):
        k = int(np.argmin(np.abs(br.omegas - w)))
        sol = hb_solve(m, w, beta, guess=br.points[k].sol, config=HbConfig(H=5))
        ss = steady_state(m, w, beta, steps_per_period=200)
        assert ss.amplitudes["x"] == pytest.approx(sol.observable_amplitudes(m)["x"], rel=0.01)


def test_floquet_damped_linear_closed_form():
    w0, Q, w = 1.3, 20.0, 0.9
    m = make_duffing(w0, 0.0, Q)
    mu = floquet_multipliers(m, zero_solution(1, w))
    T = 2 * np.pi / w
    zeta = 1 / (2 * Q)
    wd = w0 * np.sqrt(1 - zeta ** 2)
    exact = np.exp((-zeta * w0 + 1j * wd) * T)
    got = mu[np.argsort(mu.imag)]
    np.testing.assert_allclose(got, [np.conj(exact), exact], atol=1e-6)


def test_floquet_undamped_on_unit_circle():
    m = make_model(np.eye(2), np.zeros((2, 2)), np.diag([1.0, 5.0]))
    mu = floquet_multipliers(m, zero_solution(2, 0.7))
    np.testing.assert_allclose(np.abs(mu), 1.0, atol=1e-6)


def test_floquet_rejects_unconverged():
    m = make_duffing(1.0, 0.1, 50.0)
    bad = FourierSolution(1.0, [0.0], [[1.0]], [[0.0]], 0.01)
    with pytest.raises(ContractError):
        floquet_multipliers(m, bad)


def test_refine_peak_improves_on_samples():
    m = make_duffing(1.0, 0.0, 50.0)
    br = trace_frf(m, (0.9, 1.1), 0.01, hb_config=HbConfig(H=1), stability=False)
    w, a, sol = refine_peak(br)
    assert a >= br.peak()[1]
    wp = np.sqrt(1 - 1 / (2 * 50.0 ** 2))
    assert w == pytest.approx(wp, abs=1e-6)
    assert a == pytest.approx(0.01 / ((1 / 50.0) * np.sqrt(1 - 1 / (4 * 50.0 ** 2))), rel=1e-9)


def test_classify_requires_tracer():
    from romforge.continuation import FrfBranch

    with pytest.raises(ContractError):
        classify_bifurcations(FrfBranch([], 0.1, (0.9, 1.1)))


def test_downward_trace_matches_upward():
    m = make_duffing(1.0, 0.1, 50.0)
    up = trace_frf(m, (0.95, 1.1), 0.005, hb_config=HbConfig(H=3), stability=False)
    dn = trace_frf(m, (0.95, 1.1), 0.005, hb_config=HbConfig(H=3), stability=False, direction="down")
    assert up.peak()[1] == pytest.approx(dn.peak()[1], rel=1e-3)
    with pytest.raises(ContractError):
        trace_frf(m, (1.1, 0.95), 0.005)


def test_config_defaults():
    c = ContinuationConfig()
    assert c.tol == 1e-10 and c.ds_min < c.ds0 < c.ds_max

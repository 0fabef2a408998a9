import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from romforge import (ContractError, ElectroRangeError, PlateOracle, eval_ef, fit_cubic, make_duffing,
                      sample_manifold)
from romforge.electro import (EPS0, ElectroLoad, ElectroManifold, coupled_frf, electro_linear_frequency,
                              manifold_from_coefficients, static_equilibrium, uniform_grid)

REFERENCE_CH1 = (6.8638, 0.0469, 2e-4, 1e-6)


def plate_1d(gap=2.0, area=50.0):
    return PlateOracle(1, [0], [area], gap)


def test_plate_samples_match_formula():
    gap, area = 2.0, 50.0
    grid = np.linspace(-0.3, 0.5, 23)
    man = sample_manifold(plate_1d(gap, area), np.eye(1), grid)
    exact = EPS0 * area / (2 * (gap - grid) ** 2)
    np.testing.assert_allclose(man.samples[0], exact, rtol=1e-12)
    assert man.samples[0, np.argmin(np.abs(grid))] > 0  # static pull at rest
    assert np.all(np.diff(man.samples[0]) > 0)  # grows toward the electrode


def test_oracle_gap_closure_names_grid_point():
    grid = np.linspace(0.0, 1.95, 10)
    with pytest.raises(ElectroRangeError, match="grid point 9"):
        sample_manifold(plate_1d(), np.eye(1), grid)
    with pytest.raises(ContractError):
        PlateOracle(2, [3], [1.0], 1.0)


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_exact_cubic_recovered(coefs):
    alpha = np.array([coefs])
    grid = np.linspace(-1.3, 0.7, 23)
    samples = EPS0 * np.polynomial.polynomial.polyval(grid, alpha.T)
    fit = fit_cubic(ElectroManifold(grid, samples))
    np.testing.assert_allclose(fit.alpha, alpha, atol=1e-10 * max(1.0, np.abs(alpha).max()))


def test_reference_channel_coefficients_reproduced():
    man = manifold_from_coefficients([REFERENCE_CH1], (-30.0, 30.0))
    refit = fit_cubic(man)
    np.testing.assert_allclose(refit.alpha[0], REFERENCE_CH1, rtol=1e-10, atol=1e-16)
    np.testing.assert_allclose(EPS0 * refit.poly(man.grid)[0], man.samples[0], rtol=1e-12)
    # fit idempotence
    again = fit_cubic(ElectroManifold(refit.grid, EPS0 * refit.poly(refit.grid)))
    np.testing.assert_allclose(again.alpha, refit.alpha, rtol=1e-12, atol=1e-18)


def test_eval_ef_reductions():
    man = manifold_from_coefficients([REFERENCE_CH1, (1.0, -2.0, 0.0, 0.5)], (-2.0, 2.0))
    assert not np.any(eval_ef(man, 0.3, 0.0, 0.0, 1.0, 0.7))
    w = 2.0
    t = np.pi / (2 * w)  # cos(wt) = 0
    np.testing.assert_allclose(eval_ef(man, 0.0, 3.0, 0.5, w, t), 9.0 * EPS0 * np.array([6.8638, 1.0]),
                               rtol=1e-12)
    ch1 = eval_ef(man, 1.0, 1.0, 0.0, w, t)[0]
    assert ch1 == pytest.approx(EPS0 * (6.8638 + 0.0469 + 2e-4 + 1e-6), rel=1e-12)
    # AC part: 2 V_DC V_AC eps0 cos(wt) alpha(Q)
    full = eval_ef(man, 0.5, 2.0, 0.1, w, 0.0)
    np.testing.assert_allclose(full, EPS0 * (4.0 + 0.4) * man.poly(0.5), rtol=1e-12)


def test_eval_ef_derivative_second_order():
    man = fit_cubic(sample_manifold(plate_1d(), np.eye(1), np.linspace(-0.22, 0.22, 23)))
    q, V = 0.05, 10.0
    exact = EPS0 * V ** 2 * man.dpoly(q)[0]
    errs = []
    for h in (1e-2, 5e-3):
        fd = (eval_ef(man, q + h, V, 0, 1, 0)[0] - eval_ef(man, q - h, V, 0, 1, 0)[0]) / (2 * h)
        errs.append(abs(fd - exact))
    # cubic: central difference error is exactly alpha_3 h^2 times eps0 V^2
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=1e-4)
    assert errs[0] == pytest.approx(EPS0 * V ** 2 * abs(man.alpha[0, 3]) * 1e-4, rel=1e-4)


def test_plate_fit_residual_over_22_percent_of_gap():
    gap = 5.0
    grid = np.linspace(-0.11 * gap, 0.11 * gap, 23)
    man = fit_cubic(sample_manifold(plate_1d(gap), np.eye(1), grid))
    fit = EPS0 * man.poly(grid)[0]
    assert np.abs(fit - man.samples[0]).max() < 0.01 * np.ptp(man.samples[0])
    # negative electrostatic stiffness: pull grows toward the electrode
    assert man.dpoly(0.0)[0] > 0 and man.alpha[0, 1] > 0


def test_fit_errors_and_channel_dropping():
    with pytest.raises(ContractError):
        fit_cubic(ElectroManifold(np.zeros(10), np.zeros((1, 10))))
    with pytest.raises(ContractError):
        fit_cubic(ElectroManifold(np.linspace(0, 1, 5), np.zeros((1, 5))))
    grid = np.linspace(-1, 1, 23)
    noisy = np.vstack([EPS0 * (1 + grid), EPS0 * np.sign(grid)])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        fit = fit_cubic(ElectroManifold(grid, noisy))
    assert fit.dropped == [1] and not np.any(fit.alpha[1]) and rec


def test_range_guard():
    man = manifold_from_coefficients([REFERENCE_CH1], (-1.0, 1.0))
    with pytest.warns(RuntimeWarning):
        eval_ef(man, 1.3, 1.0, 0.0, 1.0, 0.0)
    with pytest.raises(ElectroRangeError):
        eval_ef(man, 1.6, 1.0, 0.0, 1.0, 0.0)
    with pytest.raises(ContractError):
        ElectroManifold(np.linspace(0, 1, 9), np.zeros((1, 9))).poly(0.0)


def test_uniform_grid_extent():
    U = np.array([[0.0], [0.5], [-2.0]])
    g = uniform_grid(U, 0, [1, 2], 1.1)
    assert g.size == 23
    assert np.ptp(np.abs(U[2, 0]) * g) == pytest.approx(1.1)
    with pytest.raises(ContractError):
        uniform_grid(U, 0, [0], 1.0)


def test_dc_softening_on_single_dof():
    m = make_duffing(1.0, 0.0, 100.0)
    man = fit_cubic(sample_manifold(plate_1d(2.0, 500.0), np.eye(1), np.linspace(-0.22, 0.22, 23)))
    w = [electro_linear_frequency(m, man, V) for V in (0.0, 5.0, 10.0, 15.0)]
    assert w[0] == pytest.approx(1.0, rel=1e-12)
    assert all(b < a for a, b in zip(w, w[1:]))
    Q, Kt = static_equilibrium(m, man, 10.0)
    assert Q[0] > 0
    load = ElectroLoad(man, 10.0, 0.0)
    assert Q[0] == pytest.approx(load.force(Q[:, None], np.zeros(1), 1.0)[0, 0], rel=1e-10)


def test_zero_dc_gives_no_load_and_no_shift():
    m = make_duffing(1.0, 0.1, 100.0)
    man = fit_cubic(sample_manifold(plate_1d(2.0, 500.0), np.eye(1), np.linspace(-0.22, 0.22, 23)))
    assert not np.any(eval_ef(man, 0.1, 0.0, 1.0, 1.0, np.linspace(0, 6, 7)))
    assert electro_linear_frequency(m, man, 0.0) == pytest.approx(1.0, rel=1e-12)
    br = coupled_frf(m, man, 0.0, 1.0, (0.9, 1.1), stability=False)
    assert max(br.amplitudes("x")) == 0.0


def test_coupled_frf_resonates_near_shifted_frequency():
    m = make_duffing(1.0, 0.0, 100.0)
    man = fit_cubic(sample_manifold(plate_1d(2.0, 500.0), np.eye(1), np.linspace(-0.22, 0.22, 23)))
    V = 10.0
    wl = electro_linear_frequency(m, man, V)
    br = coupled_frf(m, man, V, 0.02, (0.9, 1.05), stability=False)
    w_peak = br.peak()[0]
    assert abs(w_peak - wl) < 2e-3
    assert br.meta["V_dc"] == V

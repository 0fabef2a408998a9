import numpy as np
import pytest
from hypothesis import settings

from romforge import CubicTensor, QuarticTensor, make_model

settings.register_profile("romforge", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("romforge")


def random_spd(rng, n, shift=1.0):
    A = rng.standard_normal((n, n))
    return A @ A.T + shift * n * np.eye(n)


def random_model(rng, n, g_nnz=None, h_nnz=None, damping=True, beta=1.0, omega=1.0):
    """Small polynomial model with SPD M, K and random sparse tensors."""
    M = random_spd(rng, n)
    K = random_spd(rng, n, shift=4.0)
    C = 0.01 * K + 0.02 * M if damping else np.zeros((n, n))
    g_nnz = 2 * n if g_nnz is None else g_nnz
    h_nnz = 3 * n if h_nnz is None else h_nnz
    G = CubicTensor(n, rng.integers(0, n, (g_nnz, 3)), rng.standard_normal(g_nnz))
    H = QuarticTensor(n, rng.integers(0, n, (h_nnz, 4)), rng.standard_normal(h_nnz))
    return make_model(M, C, K, G, H, F0=rng.standard_normal(n), beta=beta, omega=omega,
                      observables=[("y0", np.eye(n)[0]), ("ysum", np.ones(n))])


def dense_force(model, D):
    """Brute-force loop over every tensor entry (independent of the evaluator)."""
    n = model.n
    out = model.K.toarray() @ D
    g, h = model.G.to_dense(), model.H.to_dense()
    for i in range(n):
        for j in range(n):
            for k in range(n):
                out[i] += g[i, j, k] * D[j] * D[k]
                for l in range(n):
                    out[i] += h[i, j, k, l] * D[j] * D[k] * D[l]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def duffing_cusp_forcing(omega0, gamma, Q):
    """Forcing at which the single-harmonic Duffing response first turns multivalued.

    With y = a^2 and s = omega0^2 - w^2 the amplitude equation is
    F^2 = y ((s + 3 gamma y / 4)^2 + (c w)^2); dF^2/dy gets a double root
    (the cusp) at s = -sqrt(3) c w, y = -2 s / (3 * 3 gamma / 4).
    """
    c = omega0 / Q
    w = (np.sqrt(3) * c + np.sqrt(3 * c ** 2 + 4 * omega0 ** 2)) / 2
    u = 0.75 * gamma
    y = 2 * np.sqrt(3) * c * w / (3 * u)
    return float(np.sqrt(4.0 / 3.0 * y * (c * w) ** 2)), float(w)


def hysteresis_gap(model, omegas, beta, H=5):
    """Largest relative amplitude gap between upward and downward natural HB sweeps."""
    from romforge import HbConfig, natural_sweep

    name = model.observable_names[0]
    up = natural_sweep(model, omegas, beta, HbConfig(H=H))
    down = natural_sweep(model, omegas[::-1], beta, HbConfig(H=H))[::-1]
    a_up = np.array([s.observable_amplitudes(model)[name] if s is not None else np.nan for s in up])
    a_dn = np.array([s.observable_amplitudes(model)[name] if s is not None else np.nan for s in down])
    return float(np.nanmax(np.abs(a_up - a_dn)) / np.nanmax(a_up))


# criterion number -> (passed, title, detail, seconds), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, title, detail, secs = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} "
                                    f"({secs:.1f} s)")

import numpy as np
import pytest
from hypothesis import given, strategies as st

from romforge import (BeamSpec, ContractError, FourierSolution, HbConfig, PodBasis, assemble_snapshots,
                      compute_pod, energy_spectrum, eval_internal_force, hb_solve, lift, make_duffing,
                      make_vk_beam, project, simulate, solve_eigs)
from romforge.hb import sample_period
from romforge.pod import eigenmode_coordinates, project_state

from conftest import random_model


def random_orthonormal(rng, n, p):
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return Q


# ---------------------------------------------------------------- snapshots

def test_snapshot_counts():
    m = make_duffing(1.0, 0.1, 50.0, beta=0.01)
    sol = hb_solve(m, 1.0, config=HbConfig(H=3))
    assert assemble_snapshots([(sol, 500)]).m == 500
    t1 = simulate(m, 1000 * 0.1, 0.1)
    t2 = simulate(m, 242 * 0.1, 0.1)
    X = assemble_snapshots([t1, (t2, "TM-TR")])
    assert X.m == 1242 and X.n == 1
    assert [p["source"] for p in X.provenance] == ["TM", "TM-TR"]
    assert X.provenance[1]["start"] == 1000 and X.provenance[1]["stop"] == 1242


def test_snapshot_errors(rng):
    with pytest.raises(ContractError):
        assemble_snapshots([])
    a = simulate(make_duffing(1.0, 0.1, 50.0, beta=0.01), 1.0, 0.1)
    b = simulate(random_model(rng, 2, beta=0.1), 1.0, 0.1)
    with pytest.raises(ContractError):
        assemble_snapshots([a, b])
    with pytest.raises(ContractError):
        assemble_snapshots([(a, "XX")])


def test_hb_snapshots_are_period_samples():
    sol = FourierSolution(2.0, [0.0, 1.0], [[1.0], [0.5]], [[0.0], [0.2]], 0.1)
    X = assemble_snapshots([(sol, 16)])
    np.testing.assert_array_equal(X.X, sample_period(sol, 16))


# ---------------------------------------------------------------- SVD / POD

def test_repeated_column_rank_one():
    col = np.array([3.0, 0.0, -4.0])
    X = np.tile(col[:, None], (1, 9))
    b = compute_pod(X, 1)
    assert b.sigma[0] == pytest.approx(5.0 * 3.0, rel=1e-14)
    np.testing.assert_allclose(np.abs(b.U[:, 0]), np.abs(col) / 5.0, atol=1e-14)
    with pytest.raises(ContractError, match="rank of the snapshots \\(1\\)"):
        compute_pod(X, 2)


@given(st.integers(0, 2 ** 31 - 1))
def test_eckart_young_and_frobenius(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 60)), int(rng.integers(1, 40))
    X = rng.standard_normal((n, m)) * rng.uniform(0.1, 10)
    b = compute_pod(X, min(n, m))
    s2 = b.sigma ** 2
    assert abs(np.sum(X ** 2) - s2.sum()) <= 1e-8 * s2.sum()
    for p in range(1, min(n, m) + 1):
        U = b.U[:, :p]
        err = np.sum((X - U @ (U.T @ X)) ** 2)
        assert abs(err - s2[p:].sum()) <= 1e-10 * s2.sum()


def test_pod_basis_orthonormal_and_deterministic(rng):
    X = rng.standard_normal((30, 12))
    a, b = compute_pod(X, 5), compute_pod(X, 5)
    np.testing.assert_array_equal(a.U, b.U)
    assert np.abs(a.U.T @ a.U - np.eye(5)).max() < 1e-12
    assert a.truncate(2).p == 2


def test_energy_spectrum():
    np.testing.assert_allclose(energy_spectrum(np.array([2.0, 1.0])), [0.8, 0.2])
    np.testing.assert_allclose(energy_spectrum(np.array([3.0])), [1.0])
    e = energy_spectrum(compute_pod(np.random.default_rng(1).standard_normal((10, 7)), 3))
    assert np.all(np.diff(e) <= 0) and e.sum() == pytest.approx(1.0)


def test_gram_fallback_matches_svd():
    from romforge.pod import _thin_svd

    rng = np.random.default_rng(3)
    X = rng.standard_normal((3000, 5)) @ np.diag([10, 5, 2, 1, 0.5]) @ rng.standard_normal((5, 40))
    U, s = _thin_svd(X)
    ref = np.linalg.svd(X, compute_uv=False)
    np.testing.assert_allclose(s[:5], ref[:5], rtol=1e-10)
    P = U[:, :5] @ U[:, :5].T
    assert np.linalg.norm(X - P @ X) <= 1e-8 * np.linalg.norm(X)


# ---------------------------------------------------------------- projection

@given(st.integers(0, 2 ** 31 - 1))
def test_projection_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    p = int(rng.integers(1, n + 1))
    m = random_model(rng, n)
    U = random_orthonormal(rng, n, p)
    rom = project(m, U)
    for _ in range(5):
        Q = rng.standard_normal(p)
        ref = U.T @ eval_internal_force(m, U @ Q)
        got = rom.reduced_force(Q)
        assert np.linalg.norm(got - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-300)
    np.testing.assert_allclose(rom.M, U.T @ m.M.toarray() @ U, atol=1e-12)
    assert np.linalg.eigvalsh(rom.M).min() > 0


def test_identity_basis_reproduces_model(rng):
    m = random_model(rng, 5)
    rom = project(m, np.eye(5))
    for A, B in ((rom.M, m.M), (rom.C, m.C), (rom.K, m.K)):
        np.testing.assert_allclose(A, B.toarray(), rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(rom.g, m.G.to_dense(), atol=1e-14)
    np.testing.assert_allclose(rom.h, m.H.to_dense(), atol=1e-14)
    np.testing.assert_array_equal(rom.F0, m.forcing.F0)


def test_non_orthonormal_basis_rejected(rng):
    m = random_model(rng, 4)
    with pytest.raises(ContractError):
        project(m, 1.01 * np.eye(4)[:, :2])
    with pytest.raises(ContractError):
        project(m, np.eye(3))


def test_full_basis_hb_identity(rng):
    m = random_model(rng, 6, beta=0.05)
    U = random_orthonormal(rng, 6, 6)
    rom = project(m, U)
    cfg = HbConfig(H=3)
    fom = hb_solve(m, 1.0, 0.05, config=cfg)
    red = hb_solve(rom, 1.0, 0.05, config=cfg)
    np.testing.assert_allclose(U @ red.Z, fom.Z, rtol=1e-8, atol=1e-10 * np.abs(fom.Z).max())
    t = np.linspace(0, fom.period, 50)
    for (_, o_f), (_, o_r) in zip(m.observables, rom.observables):
        np.testing.assert_allclose(o_r @ red.at(t), o_f @ fom.at(t), rtol=1e-8,
                                   atol=1e-8 * np.abs(o_f @ fom.at(t)).max())


# ---------------------------------------------------------------- lift / project_state

@given(st.integers(0, 2 ** 31 - 1))
def test_lift_project_round_trip(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    p = int(rng.integers(1, n + 1))
    b = PodBasis(random_orthonormal(rng, n, p), np.ones(p), float(p))
    Q = rng.standard_normal((p, 4))
    np.testing.assert_allclose(project_state(b, lift(b, Q)), Q, atol=1e-12)
    assert not np.any(lift(b, np.zeros(p)))


def test_column_reconstruction_bounded_by_tail(rng):
    X = rng.standard_normal((20, 15))
    b = compute_pod(X, 4)
    tail = np.sqrt(np.sum(b.sigma[4:] ** 2))
    R = X - lift(b, project_state(b, X))
    assert np.linalg.norm(R, axis=0).max() <= tail * (1 + 1e-12)


def test_lift_errors(rng):
    b = PodBasis(np.eye(4)[:, :2], np.ones(2), 2.0)
    with pytest.raises(ContractError):
        lift(b, np.zeros(3))
    with pytest.raises(ContractError):
        project_state(b, np.zeros(5))


# ---------------------------------------------------------------- eigenmode coordinates

def test_eigenmode_coordinates_along_first_mode(rng):
    m = random_model(rng, 6)
    pairs = solve_eigs(m, 6)
    amp = np.sin(np.linspace(0, 3, 40))
    D = np.outer(pairs[0].shape, amp)
    out = eigenmode_coordinates(m, (D, np.zeros_like(D)), [0, 1, 2], pairs)
    np.testing.assert_allclose(out[0][0], amp, atol=1e-10)
    for k in (1, 2):
        assert np.abs(out[k][0]).max() < 1e-10
    z = eigenmode_coordinates(m, (np.zeros((6, 3)), np.zeros((6, 3))), [0, 1])
    assert not np.any(z[0][0]) and not np.any(z[1][1])


def test_axial_mode_is_even_in_first_mode():
    beam = make_vk_beam(BeamSpec(n_elements=12))
    pairs = solve_eigs(beam, 20)
    ax = np.array(beam.meta["axial_dofs"])
    M = beam.M.toarray()
    phi1 = pairs[0].shape
    g11 = beam.G(phi1)

    def axial_fraction(v):
        Mv = M @ v
        return float(v[ax] @ Mv[ax]) / float(v @ Mv)

    axial = [k for k in range(1, 20) if axial_fraction(pairs[k].shape) > 0.5]
    assert axial
    k = max(axial, key=lambda j: abs(pairs[j].shape @ g11) / pairs[j].omega ** 2)
    w1 = pairs[0].omega
    sol = hb_solve(beam, 1.05 * w1, 0.1, config=HbConfig(H=5))
    X = sample_period(sol, 256)
    q = eigenmode_coordinates(beam, (X, np.zeros_like(X)), [0, k], pairs)
    q1, qa = q[0][0], q[k][0]
    assert np.ptp(qa) > 0
    # half-period shift flips q1; the even part of qa survives it
    shift = np.roll(qa, -128)
    assert np.allclose(np.roll(q1, -128), -q1, atol=1e-6 * np.abs(q1).max())
    odd = 0.5 * (qa - shift)
    assert np.linalg.norm(odd) < 0.1 * np.linalg.norm(qa)
    # dominant order: qa ~ c0 + c2 q1^2
    A = np.column_stack([np.ones_like(q1), q1 ** 2])
    coef, *_ = np.linalg.lstsq(A, qa, rcond=None)
    assert np.linalg.norm(qa - A @ coef) < 0.1 * np.linalg.norm(qa - qa.mean())

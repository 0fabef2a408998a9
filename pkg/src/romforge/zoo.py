"""Desk-scale model generators.

Units for the beam generators follow the micro-system convention
(um, us, ng, uN): Young's modulus in MPa (= uN/um^2), density in ng/um^3,
angular frequencies in rad/us.  The Duffing and two-dof models are
nondimensional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CubicTensor, FullOrderModel, QuarticTensor, SparseMatrixSym, make_model
from .errors import ContractError, ModelError
from .modal import rayleigh_damping, solve_eigs

# 4.730040745 is the first root of cos(x) cosh(x) = 1 (clamped-clamped beam)
CLAMPED_ROOT_1 = 4.730040744862704


def make_duffing(omega0: float, gamma: float, Q: float, beta: float = 1.0,
                 omega: float | None = None) -> FullOrderModel:
    """Single-dof Duffing oscillator x'' + (w0/Q) x' + w0^2 x + gamma x^3 = beta cos(wt)."""
    if not omega0 > 0:
        raise ContractError(f"omega0 must be positive, got {omega0}")
    if not Q > 0:
        raise ContractError(f"Q must be positive, got {Q}")
    H = QuarticTensor(1, [[0, 0, 0, 0]], [gamma])
    return make_model(
        M=[[1.0]], C=[[omega0 / Q]], K=[[omega0 ** 2]], H=H, F0=[1.0], beta=beta,
        omega=omega0 if omega is None else omega, observables=[("x", [1.0])],
        meta={"kind": "duffing", "omega_ref": omega0, "Q": Q, "gamma": gamma},
    )


def make_two_dof_1to2(omega1: float, detuning: float, g_c: float, Q: float,
                      beta: float = 1.0) -> FullOrderModel:
    """Two oscillators tuned near 1:2 with quadratic coupling.

    The coupling derives from the potential ``g_c q1^2 q2`` so the internal
    forces are ``(2 g_c q1 q2, g_c q1^2)``; the load acts on the first
    oscillator.
    """
    if not omega1 > 0:
        raise ContractError(f"omega1 must be positive, got {omega1}")
    if not Q > 0:
        raise ContractError(f"Q must be positive, got {Q}")
    omega2 = 2 * omega1 * (1 + detuning)
    if not omega2 > 0:
        raise ContractError("detuning leaves the second frequency non-positive")
    G = CubicTensor(2, [[0, 0, 1], [1, 0, 0]], [2 * g_c, g_c])
    c = omega1 / Q
    return make_model(
        M=np.eye(2), C=c * np.eye(2), K=np.diag([omega1 ** 2, omega2 ** 2]), G=G,
        F0=[1.0, 0.0], beta=beta, omega=omega1,
        observables=[("q1", [1.0, 0.0]), ("q2", [0.0, 1.0])],
        meta={"kind": "twodof", "omega_ref": omega1, "Q": Q, "g_c": g_c, "detuning": detuning},
    )


@dataclass(frozen=True)
class BeamSpec:
    """Clamped-clamped beam (optionally a shallow parabolic arch).

    Defaults describe a 1000 um polysilicon resonator bending across its
    10 um height.
    """

    length: float = 1000.0
    width: float = 24.0
    height: float = 10.0
    n_elements: int = 36
    young: float = 167000.0
    density: float = 2.33e-3
    rise: float = 0.0

    def __post_init__(self):
        if self.n_elements < 2:
            raise ContractError("a clamped-clamped beam needs at least 2 elements")
        for name in ("length", "width", "height", "young", "density"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.rise < 0:
            raise ContractError("rise must be non-negative")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def inertia(self) -> float:
        return self.width * self.height ** 3 / 12.0

    def analytic_omega1(self) -> float:
        """Euler-Bernoulli first clamped-clamped angular frequency (flat beam)."""
        return CLAMPED_ROOT_1 ** 2 * np.sqrt(
            self.young * self.inertia / (self.density * self.area * self.length ** 4))


def _hermite(xi, le):
    """Shape-function derivative rows at local coordinates ``xi`` (shape (ng,))."""
    ng = xi.size
    Bu = np.zeros((ng, 6))
    Bu[:, 0], Bu[:, 3] = -1.0 / le, 1.0 / le
    Bw = np.zeros((ng, 6))
    Bw[:, 1] = (-6 * xi + 6 * xi ** 2) / le
    Bw[:, 2] = 1 - 4 * xi + 3 * xi ** 2
    Bw[:, 4] = (6 * xi - 6 * xi ** 2) / le
    Bw[:, 5] = -2 * xi + 3 * xi ** 2
    Bk = np.zeros((ng, 6))
    Bk[:, 1] = (-6 + 12 * xi) / le ** 2
    Bk[:, 2] = (-4 + 6 * xi) / le
    Bk[:, 4] = (6 - 12 * xi) / le ** 2
    Bk[:, 5] = (-2 + 6 * xi) / le
    Nu = np.zeros((ng, 6))
    Nu[:, 0], Nu[:, 3] = 1 - xi, xi
    Nw = np.zeros((ng, 6))
    Nw[:, 1] = 1 - 3 * xi ** 2 + 2 * xi ** 3
    Nw[:, 2] = le * (xi - 2 * xi ** 2 + xi ** 3)
    Nw[:, 4] = 3 * xi ** 2 - 2 * xi ** 3
    Nw[:, 5] = le * (-xi ** 2 + xi ** 3)
    return Bu, Bw, Bk, Nu, Nw


def _canonical_entries(idx, vals):
    """Drop entries touching clamped dofs (index -1)."""
    keep = np.all(idx >= 0, axis=1) & (vals != 0.0)
    return idx[keep], vals[keep]


def beam_matrices(spec: BeamSpec):
    """Assemble M, K and the polynomial tensors of the planar beam.

    Kinematics: axial strain ``u' + w0' w' + w'^2 / 2`` and curvature ``w''``
    with linear axial and cubic Hermite transverse interpolation.  Five-point
    Gauss quadrature integrates every polynomial term exactly.

    Returns ``(M, K, G, H, dofmap)`` where ``dofmap`` is an
    (n_elements+1, 3) array of free-dof numbers (-1 on clamped nodes).
    """
    ne, L = spec.n_elements, spec.length
    le = L / ne
    EA = spec.young * spec.area
    EI = spec.young * spec.inertia
    rhoA = spec.density * spec.area

    dofmap = -np.ones((ne + 1, 3), dtype=np.int64)
    dofmap[1:ne] = np.arange(3 * (ne - 1)).reshape(ne - 1, 3)
    n = 3 * (ne - 1)

    gp, gw = np.polynomial.legendre.leggauss(5)
    xi = 0.5 * (gp + 1.0)
    wq = 0.5 * gw * le
    Bu, Bw, Bk, Nu, Nw = _hermite(xi, le)

    Mrows, Mcols, Mvals = [], [], []
    Krows, Kcols, Kvals = [], [], []
    Gidx, Gvals, Hidx, Hvals = [], [], [], []
    mass_e = rhoA * (np.einsum("g,gi,gj->ij", wq, Nu, Nu) + np.einsum("g,gi,gj->ij", wq, Nw, Nw))
    H_e = 0.5 * EA * np.einsum("g,gi,gj,gk,gl->ijkl", wq, Bw, Bw, Bw, Bw)
    grid2 = np.indices((6, 6)).reshape(2, -1).T
    grid3 = np.indices((6, 6, 6)).reshape(3, -1).T
    grid4 = np.indices((6, 6, 6, 6)).reshape(4, -1).T

    for e in range(ne):
        x = e * le + xi * le
        dw0 = spec.rise * 4.0 * (L - 2.0 * x) / L ** 2
        B1 = Bu + dw0[:, None] * Bw
        K_e = EA * np.einsum("g,gi,gj->ij", wq, B1, B1) + EI * np.einsum("g,gi,gj->ij", wq, Bk, Bk)
        T = np.einsum("g,gi,gj,gk->ijk", wq, B1, Bw, Bw)
        G_e = 0.5 * EA * (T + T.transpose(1, 0, 2) + T.transpose(1, 2, 0))
        gdofs = np.concatenate([dofmap[e], dofmap[e + 1]])

        for store_r, store_c, store_v, A in ((Mrows, Mcols, Mvals, mass_e), (Krows, Kcols, Kvals, K_e)):
            idx, vals = _canonical_entries(gdofs[grid2], A.ravel())
            up = idx[:, 0] <= idx[:, 1]
            store_r.append(idx[up, 0])
            store_c.append(idx[up, 1])
            store_v.append(vals[up])
        idx, vals = _canonical_entries(gdofs[grid3], G_e.ravel())
        Gidx.append(idx)
        Gvals.append(vals)
        idx, vals = _canonical_entries(gdofs[grid4], H_e.ravel())
        Hidx.append(idx)
        Hvals.append(vals)

    M = SparseMatrixSym(n, np.concatenate(Mrows), np.concatenate(Mcols), np.concatenate(Mvals))
    K = SparseMatrixSym(n, np.concatenate(Krows), np.concatenate(Kcols), np.concatenate(Kvals))
    G = CubicTensor(n, np.concatenate(Gidx), np.concatenate(Gvals))
    H = QuarticTensor(n, np.concatenate(Hidx), np.concatenate(Hvals))
    # round-off from the folded sums can leave tiny spurious entries
    G = _prune(G, 1e-13)
    H = _prune(H, 1e-13)
    return M, K, G, H, dofmap


def _prune(T, rtol):
    if not T.nnz:
        return T
    keep = np.abs(T.value) > rtol * np.abs(T.value).max()
    return type(T)(T.n, T.index[keep], T.value[keep])


def _midspan_functional(spec: BeamSpec, dofmap, n):
    ne = spec.n_elements
    o = np.zeros(n)
    if ne % 2 == 0:
        o[dofmap[ne // 2, 1]] = 1.0
        return o
    e = ne // 2
    le = spec.length / ne
    _, _, _, _, Nw = _hermite(np.array([0.5]), le)
    gdofs = np.concatenate([dofmap[e], dofmap[e + 1]])
    for loc, g in enumerate(gdofs):
        if g >= 0:
            o[g] += Nw[0, loc]
    return o


def make_vk_beam(spec: BeamSpec, Q: float = 50.0, beta: float = 1.0) -> FullOrderModel:
    """Geometrically nonlinear clamped-clamped beam or shallow arch.

    Three dofs per interior node (axial, transverse, rotation).  Damping is
    mass-proportional at the first eigenfrequency and the load vector is
    ``M phi_1``.  Observable ``w_mid`` is the midspan transverse deflection.
    """
    M, K, G, H, dofmap = beam_matrices(spec)
    n = K.n
    proto = make_model(M, SparseMatrixSym(n, [], [], []), K, G, H)
    try:
        pairs = solve_eigs(proto, 1)
    except ModelError as exc:
        raise ModelError(f"degenerate beam assembly: {exc}") from exc
    w1 = pairs[0].omega
    if not w1 > 0:
        raise ModelError("degenerate beam assembly: non-positive first eigenfrequency")
    phi1 = pairs[0].shape
    # sign so that mode 1 deflects toward +w at midspan
    mid = _midspan_functional(spec, dofmap, n)
    if mid @ phi1 < 0:
        phi1 = -phi1
    C = rayleigh_damping(proto, w1, Q)
    ne = spec.n_elements
    interior = dofmap[1:ne]
    meta = {
        "kind": "arch" if spec.rise > 0 else "beam",
        "omega_ref": w1,
        "Q": Q,
        "spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__},
        "axial_dofs": interior[:, 0].tolist(),
        "transverse_dofs": interior[:, 1].tolist(),
        "rotation_dofs": interior[:, 2].tolist(),
        # tributary length fractions of the transverse dofs facing an electrode
        "surface_dofs": interior[:, 1].tolist(),
        "surface_weights": [1.0 / ne] * (ne - 1),
    }
    return make_model(M, C, K, G, H, F0=M @ phi1, beta=beta, omega=w1,
                      observables=[("w_mid", mid)], meta=meta)

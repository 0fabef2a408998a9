"""Snapshot POD and exact Galerkin projection of polynomial models.

The reduced model keeps the polynomial structure: with D = U Q,

    U^T G(UQ, UQ) = g(Q, Q),    U^T H(UQ, UQ, UQ) = h(Q, Q, Q)

where the reduced coefficient tensors are contracted once, offline, from
the sparse full-order entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core import (CubicTensor, ForcingSpec, FullOrderModel, QuarticTensor, SparseMatrixSym,
                   as_model)
from .errors import ContractError, ModelError
from .hb import FourierSolution, sample_period
from .newmark import State, Trajectory

SOURCES = ("HB", "TM-SS", "TM-TR", "TM")


@dataclass(eq=False)
class SnapshotMatrix:
    """Column-stacked displacement snapshots with per-block provenance.

    ``provenance`` entries are dicts with keys ``source, omega, beta, start, stop``.
    """

    X: np.ndarray
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] < 1:
            raise ContractError("snapshot matrix needs at least one column")
        if not np.all(np.isfinite(self.X)):
            raise ContractError("snapshots must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]


def assemble_snapshots(sources, centre: bool = False) -> SnapshotMatrix:
    """Stack snapshots from trajectories and HB solutions.

    Each source is a :class:`Trajectory`, a ``(Trajectory, tag)`` pair with
    tag in {"TM-SS", "TM-TR"}, or a ``(FourierSolution, m)`` pair sampled at
    ``m`` equispaced instants over one period.  Mean removal is off by default.
    """
    sources = list(sources)
    if not sources:
        raise ContractError("no snapshot sources given")
    blocks, prov = [], []
    col = 0
    n = None
    for src in sources:
        tag = None
        if isinstance(src, tuple):
            obj, extra = src
        else:
            obj, extra = src, None
        if isinstance(obj, Trajectory):
            Xb = obj.D
            tag = extra if isinstance(extra, str) else "TM"
            if tag not in SOURCES:
                raise ContractError(f"unknown snapshot source tag {tag!r}")
            seg = obj.segments[0] if obj.segments else {}
            om = seg.get("omega", float("nan"))
            be = seg.get("beta", float("nan"))
        elif isinstance(obj, FourierSolution):
            if extra is None or int(extra) < 1:
                raise ContractError("HB sources need a positive sample count: (solution, m)")
            Xb = sample_period(obj, int(extra))
            tag, om, be = "HB", obj.omega, obj.beta if obj.beta is not None else float("nan")
        else:
            raise ContractError(f"unsupported snapshot source {type(obj).__name__}")
        if n is None:
            n = Xb.shape[0]
        elif Xb.shape[0] != n:
            raise ContractError(f"snapshot dimension mismatch: {Xb.shape[0]} vs {n}")
        blocks.append(Xb)
        prov.append({"source": tag, "omega": float(om), "beta": float(be),
                     "start": col, "stop": col + Xb.shape[1]})
        col += Xb.shape[1]
    X = np.hstack(blocks)
    if centre:
        X = X - X.mean(axis=1, keepdims=True)
    return SnapshotMatrix(X, prov)


@dataclass(frozen=True, eq=False)
class PodBasis:
    U: np.ndarray
    sigma: np.ndarray
    energy: float

    def __post_init__(self):
        for name in ("U", "sigma"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.U.shape[1]

    def truncate(self, p: int) -> "PodBasis":
        if not 1 <= p <= self.p:
            raise ContractError(f"p must lie in [1, {self.p}]")
        return PodBasis(self.U[:, :p], self.sigma, self.energy)


def _thin_svd(X):
    n, m = X.shape
    if n >= 10 * m and n > 2000:
        # method of snapshots: eigen-decomposition of the small Gram matrix
        w, V = np.linalg.eigh(X.T @ X)
        order = np.argsort(w)[::-1]
        w, V = np.clip(w[order], 0, None), V[:, order]
        s = np.sqrt(w)
        keep = s > s[0] * 1e-7 if s[0] > 0 else s > 0
        U = (X @ V[:, keep]) / s[keep]
        U, _ = np.linalg.qr(U)
        return U, s
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    return U, s


def compute_pod(X, p: int) -> PodBasis:
    """First ``p`` left singular vectors of the snapshot matrix.

    Raises if ``p`` exceeds the numerical rank (sigma_p / sigma_1 < 1e-14).
    """
    Xm = X.X if isinstance(X, SnapshotMatrix) else np.asarray(X, dtype=float)
    if Xm.ndim != 2:
        raise ContractError("snapshot matrix must be two-dimensional")
    U, s = _thin_svd(Xm)
    if s.size == 0 or s[0] == 0:
        raise ContractError("snapshot matrix is identically zero")
    rank = int(np.sum(s >= 1e-14 * s[0]))
    if not 1 <= p <= rank or p > U.shape[1]:
        raise ContractError(f"p={p} exceeds the numerical rank of the snapshots ({rank})")
    Up = U[:, :p].copy()
    # deterministic sign: largest component of each mode positive
    idx = np.argmax(np.abs(Up), axis=0)
    Up *= np.sign(Up[idx, np.arange(p)])
    return PodBasis(Up, s, float(np.sum(s ** 2)))


def energy_spectrum(basis) -> np.ndarray:
    """Relative energies sigma_k^2 / sum sigma^2, descending."""
    sigma = basis.sigma if isinstance(basis, PodBasis) else np.asarray(basis, dtype=float)
    e = sigma ** 2
    return e / e.sum()


def check_orthonormal(U, tol: float = 1e-8):
    U = np.asarray(U, dtype=float)
    dev = np.abs(U.T @ U - np.eye(U.shape[1])).max()
    if dev > tol:
        raise ContractError(f"basis is not orthonormal (Gram deviation {dev:.2e})")


def _project_tensor(T, U, chunk_elems: int = 1 << 22):
    """Raw reduced tensor sum_e v_e U[i_e] x U[j_e] x ... (dense, p^order)."""
    p = U.shape[1]
    order = T.order
    out = np.zeros((p ** 2, p ** (order - 2)))
    if not T.nnz:
        return out.reshape((p,) * order)
    idx, val = T.index, T.value
    step = max(1, chunk_elems // (p ** 2))
    for s in range(0, T.nnz, step):
        sl = slice(s, s + step)
        Ui = U[idx[sl, 0]] * val[sl, None]
        X = (Ui[:, :, None] * U[idx[sl, 1]][:, None, :]).reshape(-1, p * p)
        if order == 3:
            Y = U[idx[sl, 2]]
        else:
            Y = (U[idx[sl, 2]][:, :, None] * U[idx[sl, 3]][:, None, :]).reshape(-1, p * p)
        out += X.T @ Y
    return out.reshape((p,) * order)


@dataclass(eq=False)
class ReducedOrderModel:
    """Galerkin ROM: dense p x p matrices and dense reduced tensors.

    ``g`` and ``h`` are folded (canonical trailing-index order), matching
    the full-order convention.  ``model`` exposes the ROM as a
    :class:`FullOrderModel` in reduced coordinates so every solver accepts it.
    """

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    g: np.ndarray
    h: np.ndarray
    F0: np.ndarray
    basis: PodBasis | None
    forcing: ForcingSpec
    observables: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.K.shape[0]

    @property
    def n(self) -> int:
        return self.p

    @cached_property
    def model(self) -> FullOrderModel:
        p = self.p
        G = CubicTensor.from_dense(self.g) if p else CubicTensor(0)
        H = QuarticTensor.from_dense(self.h) if p else QuarticTensor(0)
        try:
            return FullOrderModel(SparseMatrixSym.from_dense(self.M, symmetric=True),
                                  SparseMatrixSym.from_dense(self.C, symmetric=True),
                                  SparseMatrixSym.from_dense(self.K, symmetric=True), G, H,
                                  self.forcing, self.observables, self.meta)
        except ModelError as exc:
            raise ModelError(f"reduced model is invalid: {exc}") from exc

    def reduced_force(self, Q) -> np.ndarray:
        """K Q + g(Q, Q) + h(Q, Q, Q)."""
        return self.model.evaluator.internal_force(np.asarray(Q, dtype=float))

    def with_forcing(self, forcing: ForcingSpec) -> "ReducedOrderModel":
        return ReducedOrderModel(self.M, self.C, self.K, self.g, self.h, forcing.F0, self.basis,
                                 forcing, self.observables, self.meta)


def project(system, basis) -> ReducedOrderModel:
    """Exact Galerkin projection of a full-order model onto ``basis``."""
    model = as_model(system)
    U = basis.U if isinstance(basis, PodBasis) else np.asarray(basis, dtype=float)
    if U.ndim != 2 or U.shape[0] != model.n:
        raise ContractError(f"basis must have {model.n} rows, got shape {U.shape}")
    check_orthonormal(U)
    Mr = U.T @ (model.M @ U)
    Cr = U.T @ (model.C @ U)
    Kr = U.T @ (model.K @ U)
    sym = lambda A: 0.5 * (A + A.T)
    Mr, Cr, Kr = sym(Mr), sym(Cr), sym(Kr)
    g = CubicTensor.from_dense(_project_tensor(model.G, U)).to_dense() if model.G.nnz \
        else np.zeros((U.shape[1],) * 3)
    h = QuarticTensor.from_dense(_project_tensor(model.H, U)).to_dense() if model.H.nnz \
        else np.zeros((U.shape[1],) * 4)
    F0 = U.T @ model.forcing.F0
    f = model.forcing
    forcing = ForcingSpec(F0, f.beta, f.omega, f.phase)
    obs = tuple((name, U.T @ vec) for name, vec in model.observables)
    meta = {k: v for k, v in model.meta.items() if k in ("kind", "omega_ref", "Q", "gamma", "g_c",
                                                          "detuning")}
    meta["reduced"] = True
    meta["full_n"] = model.n
    pb = basis if isinstance(basis, PodBasis) else PodBasis(U, np.zeros(0), 0.0)
    rom = ReducedOrderModel(Mr, Cr, Kr, g, h, F0, pb, forcing, obs, meta)
    rom.model  # validates SPD reduced mass
    return rom


def lift(basis, Q):
    """Physical states U Q; accepts vectors, (p, N) arrays or trajectories."""
    U = basis.U if isinstance(basis, PodBasis) else np.asarray(basis)
    if isinstance(Q, Trajectory):
        fin = Q.final
        final = None if fin is None else State(U @ fin.D, U @ fin.V, U @ fin.A)
        return Trajectory(Q.times.copy(), U @ Q.D, U @ Q.V, Q.stride, list(Q.segments), final)
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] != U.shape[1]:
        raise ContractError(f"expected {U.shape[1]} reduced coordinates, got {Q.shape[0]}")
    return U @ Q


def project_state(basis, D):
    """Reduced coordinates U^T D (orthonormal basis)."""
    U = basis.U if isinstance(basis, PodBasis) else np.asarray(basis)
    D = np.asarray(D, dtype=float)
    if D.shape[0] != U.shape[0]:
        raise ContractError(f"expected {U.shape[0]} physical dofs, got {D.shape[0]}")
    return U.T @ D


def eigenmode_coordinates(system, trajectory, modes, pairs=None) -> dict:
    """Mass-normalised modal displacement and velocity histories.

    Returns ``{mode_index: (q, qdot)}`` with ``q = phi^T M D``.  ``pairs``
    (from :func:`solve_eigs`) may be passed to avoid recomputing modes.
    """
    from .modal import solve_eigs

    model = as_model(system)
    modes = [int(i) for i in modes]
    if pairs is None:
        pairs = solve_eigs(model, max(modes) + 1)
    if isinstance(trajectory, Trajectory):
        D, V = trajectory.D, trajectory.V
    else:
        D, V = trajectory
    MD, MV = model.M @ D, model.M @ V
    return {i: (pairs[i].shape @ MD, pairs[i].shape @ MV) for i in modes}

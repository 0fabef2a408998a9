"""Harmonic balance with alternating frequency-time (AFT) evaluation.

Unknowns are the Fourier coefficients of every dof, stored dof-major as a
coefficient matrix ``Z`` of shape (n, 2H+1) with columns
``[c0, a1, b1, a2, b2, ...]`` so that

    D(t) = Z phi(w t),   phi = [1, cos th, sin th, cos 2th, sin 2th, ...].

With ``dphi/dth = Dm phi`` the balanced equations read

    K Z + w C Z Dm + w^2 M Z Dm^2 + P[f_nl(Z E^T)] - F = 0

where ``E`` samples the basis at ``N_t`` equispaced phases and ``P`` is the
discrete Fourier projection.  The Jacobian block of each pattern entry
(i, j) is ``K_ij I + w C_ij Dm^T + w^2 M_ij Dm^2T + P diag(k_ij(t)) E``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import as_model
from .errors import ConfigError, ContractError, ConvergenceError


def default_samples(H: int) -> int:
    """Smallest power of two >= 8 H (at least 8)."""
    return int(max(8, 1 << int(np.ceil(np.log2(max(8 * H, 1))))))


@dataclass(frozen=True)
class HbConfig:
    H: int = 9
    n_samples: int | None = None
    tol: float = 1e-10
    max_iter: int = 30

    def __post_init__(self):
        if self.H < 1:
            raise ConfigError(f"harmonic count must be >= 1, got {self.H}")
        N = default_samples(self.H) if self.n_samples is None else int(self.n_samples)
        if N < 2 * (3 * self.H) + 2:
            raise ConfigError(f"n_samples={N} aliases cubic terms; need >= {6 * self.H + 2} for H={self.H}")
        object.__setattr__(self, "n_samples", N)


@dataclass(frozen=True, eq=False)
class FourierSolution:
    """Truncated Fourier series of a periodic orbit at angular frequency ``omega``."""

    omega: float
    c0: np.ndarray
    a: np.ndarray
    b: np.ndarray
    beta: float | None = None

    def __post_init__(self):
        c0 = np.array(self.c0, dtype=float).ravel()
        a = np.array(self.a, dtype=float).reshape(c0.size, -1)
        b = np.array(self.b, dtype=float).reshape(c0.size, -1)
        if a.shape != b.shape:
            raise ContractError("cosine and sine coefficient blocks differ in shape")
        if not (np.all(np.isfinite(c0)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ContractError("Fourier coefficients must be finite")
        for name, v in (("c0", c0), ("a", a), ("b", b)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def H(self) -> int:
        return self.a.shape[1]

    @property
    def n(self) -> int:
        return self.c0.size

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega

    @property
    def Z(self) -> np.ndarray:
        Z = np.empty((self.n, 2 * self.H + 1))
        Z[:, 0] = self.c0
        Z[:, 1::2] = self.a
        Z[:, 2::2] = self.b
        return Z

    @classmethod
    def from_Z(cls, Z, omega, beta=None) -> "FourierSolution":
        Z = np.asarray(Z, dtype=float)
        return cls(float(omega), Z[:, 0], Z[:, 1::2], Z[:, 2::2], beta)

    def at(self, t) -> np.ndarray:
        """D(t) for scalar or array ``t``; shape (n,) or (n, len(t))."""
        t = np.asarray(t, dtype=float)
        th = self.omega * np.atleast_1d(t)
        out = self.Z @ basis(self.H, th).T
        return out[:, 0] if t.ndim == 0 else out

    def velocity(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        th = self.omega * np.atleast_1d(t)
        out = self.omega * (self.Z @ derivative_matrix(self.H)) @ basis(self.H, th).T
        return out[:, 0] if t.ndim == 0 else out

    def harmonic_amplitudes(self) -> np.ndarray:
        """sqrt(a_h^2 + b_h^2), shape (n, H)."""
        return np.hypot(self.a, self.b)

    def amplitude(self, vec, n_fine: int = 2048) -> float:
        """Half peak-to-peak over one period of the functional ``vec . D(t)``."""
        vec = np.asarray(vec, dtype=float)
        zc = vec @ self.Z
        th = 2 * np.pi * np.arange(n_fine) / n_fine
        y = basis(self.H, th) @ zc
        k_max, k_min = int(np.argmax(y)), int(np.argmin(y))
        return 0.5 * (_refine_extremum(zc, self.H, th[k_max], 1) - _refine_extremum(zc, self.H, th[k_min], -1))

    def observable_amplitudes(self, system) -> dict:
        model = as_model(system)
        if not model.observables:
            return {f"dof{i}": self.amplitude(np.eye(self.n)[i]) for i in range(self.n)}
        return {name: self.amplitude(vec) for name, vec in model.observables}


def _refine_extremum(zc, H, th0, sign, iters=4):
    """Newton polish of a sampled extremum of the scalar series ``zc . phi(th)``."""
    Dm = derivative_matrix(H)
    d1, d2 = zc @ Dm, zc @ Dm @ Dm
    th = th0
    for _ in range(iters):
        ph = basis(H, np.array([th]))[0]
        g, h = d1 @ ph, d2 @ ph
        if sign * h >= 0 or h == 0:
            break
        step = -g / h
        if abs(step) > np.pi / H:
            break
        th += step
    y0 = zc @ basis(H, np.array([th0]))[0]
    y1 = zc @ basis(H, np.array([th]))[0]
    return max(y0, y1) if sign > 0 else min(y0, y1)


def basis(H: int, th) -> np.ndarray:
    """phi(th) rows, shape (len(th), 2H+1)."""
    th = np.asarray(th, dtype=float).ravel()
    E = np.empty((th.size, 2 * H + 1))
    E[:, 0] = 1.0
    h = np.arange(1, H + 1)
    E[:, 1::2] = np.cos(np.outer(th, h))
    E[:, 2::2] = np.sin(np.outer(th, h))
    return E


def derivative_matrix(H: int) -> np.ndarray:
    """Dm with d phi / d th = Dm phi."""
    m = 2 * H + 1
    Dm = np.zeros((m, m))
    for h in range(1, H + 1):
        Dm[2 * h - 1, 2 * h] = -h
        Dm[2 * h, 2 * h - 1] = h
    return Dm


def aft_matrices(H: int, N: int):
    """Sampling matrix E (N, 2H+1) and projection P (2H+1, N) with P E = I."""
    th = 2 * np.pi * np.arange(N) / N
    E = basis(H, th)
    P = E.T * (2.0 / N)
    P[0] *= 0.5
    return E, P, th


class HbSystem:
    """Frequency-domain operators of one model at fixed harmonic count.

    ``extra`` optionally adds a state- and time-dependent load
    ``f_x(D, t)`` (moved to the left-hand side as ``-f_x``); it must provide
    ``force(X, t, omega) -> (n, N)`` and ``tangent(X, t, omega) -> (n*n, N)``
    (dense row-major pattern, small models only).
    """

    def __init__(self, system, config: HbConfig = HbConfig(), extra=None):
        self.model = as_model(system)
        self.config = config
        self.extra = extra
        model = self.model
        ev = model.evaluator
        if extra is not None and not ev.dense:
            raise ContractError("state-dependent extra loads require a small (dense) model")
        self.ev = ev
        self.n = model.n
        H = config.H
        self.H = H
        self.m = 2 * H + 1
        self.N = config.n_samples
        self.E, self.P, self.theta = aft_matrices(H, self.N)
        self.Dm = derivative_matrix(H)
        self.Dm2 = self.Dm @ self.Dm
        m = self.m
        # W[s, c*m + d] = P[c, s] E[s, d]: maps tangent samples to Jacobian blocks
        self.W = (self.P.T[:, :, None] * self.E[:, None, :]).reshape(self.N, m * m)
        self.Mm, self.Cm, self.Km = model.M.csr, model.C.csr, model.K.csr
        self.Kd = model.K.toarray() if ev.dense else None
        self.Md = model.M.toarray() if ev.dense else None
        self.Cd = model.C.toarray() if ev.dense else None
        self.F0 = model.forcing.F0
        self.phase = model.forcing.phase
        self.Knorm = max(model.K.frobenius(), 1e-300)
        self.Kabs = abs(model.K.toarray()) if self.Kd is not None else abs(model.K.csr)
        self.dense = ev.dense and self.n * m <= 1500
        if not self.dense:
            self._init_sparse_layout()

    # -- helpers -----------------------------------------------------------
    def _mats(self):
        if self.Kd is not None:
            return self.Md, self.Cd, self.Kd
        return self.Mm, self.Cm, self.Km

    def forcing_Z(self, beta) -> np.ndarray:
        cached = getattr(self, "_fz", None)
        if cached is not None and cached[0] == beta:
            return cached[1]
        F = np.zeros((self.n, self.m))
        F[:, 1] = beta * self.F0 * np.cos(self.phase)
        F[:, 2] = -beta * self.F0 * np.sin(self.phase)
        F.setflags(write=False)
        self._fz = (beta, F)
        return F

    def samples(self, Z) -> np.ndarray:
        return Z @ self.E.T

    # -- residual and Jacobian ----------------------------------------------
    def residual_Z(self, Z, omega, beta) -> np.ndarray:
        M, C, K = self._mats()
        R = K @ Z + omega * (C @ (Z @ self.Dm)) + omega ** 2 * (M @ (Z @ self.Dm2))
        R -= self.forcing_Z(beta)
        if self.ev.has_nl or self.extra is not None:
            X = self.samples(Z)
            F = self.ev.nl_force(X) if self.ev.has_nl else np.zeros_like(X)
            if self.extra is not None:
                F = F - self.extra.force(X, self.theta / omega, omega)
            R += F @ self.P.T
        return R

    def residual(self, z, omega, beta) -> np.ndarray:
        return self.residual_Z(z.reshape(self.n, self.m), omega, beta).ravel()

    def domega(self, z, omega) -> np.ndarray:
        """dR/d omega at fixed coefficients (nonlinear terms are omega-free
        unless an extra load depends on time explicitly)."""
        Z = z.reshape(self.n, self.m)
        M, C, _ = self._mats()
        return (C @ (Z @ self.Dm) + 2 * omega * (M @ (Z @ self.Dm2))).ravel()

    def dbeta(self) -> np.ndarray:
        return -self.forcing_Z(1.0).ravel()

    def block_values(self, Z, omega, linear=False) -> np.ndarray:
        """Jacobian blocks per pattern entry, shape (npat, m, m)."""
        ev, m = self.ev, self.m
        I = np.eye(m)
        V = (ev.K_pat[:, None, None] * I + omega * ev.C_pat[:, None, None] * self.Dm.T
             + omega ** 2 * ev.M_pat[:, None, None] * self.Dm2.T)
        if not linear and (ev.has_nl or self.extra is not None):
            X = self.samples(Z)
            kk = ev.nl_tangent(X) if ev.has_nl else np.zeros((ev.npat, self.N))
            if self.extra is not None:
                kk = kk - self.extra.tangent(X, self.theta / omega, omega)
            V = V + (kk @ self.W).reshape(-1, m, m)
        return V

    def jacobian(self, z, omega, linear=False):
        """dR/dz as a dense array (small systems) or CSC sparse matrix."""
        Z = z.reshape(self.n, self.m)
        V = self.block_values(Z, omega, linear)
        n, m = self.n, self.m
        if self.dense:
            return V.reshape(n, n, m, m).transpose(0, 2, 1, 3).reshape(n * m, n * m)
        return sp.csc_matrix((V.ravel()[self._perm], self._indices, self._indptr),
                             shape=(n * m, n * m))

    def _init_sparse_layout(self):
        n, m, ev = self.n, self.m, self.ev
        c, d = np.divmod(np.arange(m * m), m)
        rows = (ev.rows[:, None] * m + c[None, :]).ravel()
        cols = (ev.cols[:, None] * m + d[None, :]).ravel()
        probe = sp.csc_matrix((np.arange(1, rows.size + 1, dtype=float), (rows, cols)),
                              shape=(n * m, n * m))
        probe.sort_indices()
        self._perm = probe.data.astype(np.int64) - 1
        self._indices = probe.indices
        self._indptr = probe.indptr

    def factor(self, J):
        if self.dense:
            lu = sla.lu_factor(J, check_finite=False)
            return lambda b: sla.lu_solve(lu, b, check_finite=False)
        return spla.splu(J, permc_spec="COLAMD").solve

    def linear_guess(self, omega, beta) -> np.ndarray:
        """Exact solution of the linearised balance (nonlinear and extra terms dropped)."""
        z = np.zeros(self.n * self.m)
        rhs = -self.residual_lin_only(z, omega, beta)
        return self.factor(self.jacobian(z, omega, linear=True))(rhs)

    def residual_lin_only(self, z, omega, beta):
        Z = z.reshape(self.n, self.m)
        M, C, K = self._mats()
        R = K @ Z + omega * (C @ (Z @ self.Dm)) + omega ** 2 * (M @ (Z @ self.Dm2)) - self.forcing_Z(beta)
        return R.ravel()

    def scale(self, z, beta) -> float:
        """Reference force level for the relative convergence test.

        ``max(|F|, |K Z|)`` plus a round-off allowance: stiff rows (axial and
        rotational dofs of slender beams) cancel almost exactly, leaving a
        residual floor of order eps |K| |Z| that no iteration can remove.  The
        allowance is divided by the configured tolerance so that
        ``|r| / scale <= tol`` reads ``|r| <= tol max(|F|, |K Z|) + 16 eps |K||Z|``.
        """
        Z = z.reshape(self.n, self.m)
        M, C, K = self._mats()
        base = max(np.linalg.norm(self.forcing_Z(beta)), np.linalg.norm(K @ Z), 1e-300)
        floor = 16 * np.finfo(float).eps * np.linalg.norm(self.Kabs @ np.abs(Z))
        return base + floor / self.config.tol

    def newton(self, z, omega, beta, tol=None, max_iter=None):
        """Plain Newton at fixed (omega, beta); returns (z, iterations, residual ratio)."""
        tol = self.config.tol if tol is None else tol
        max_iter = self.config.max_iter if max_iter is None else max_iter
        z = np.array(z, dtype=float)
        hist = []
        for it in range(max_iter + 1):
            r = self.residual(z, omega, beta)
            ratio = np.linalg.norm(r) / self.scale(z, beta)
            hist.append(ratio)
            if ratio <= tol and (it >= 1 or ratio <= 0.1 * tol):
                return z, it, ratio
            if it == max_iter:
                break
            try:
                dz = self.factor(self.jacobian(z, omega))(-r)
            except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
                raise ConvergenceError(
                    f"singular HB Jacobian at omega={omega:g}; the solution is probably near a fold, "
                    "use continuation (trace_frf) instead", omega=omega, residual=ratio,
                    history=hist) from exc
            if not np.all(np.isfinite(dz)):
                raise ConvergenceError(
                    f"singular HB Jacobian at omega={omega:g}; the solution is probably near a fold, "
                    "use continuation (trace_frf) instead", omega=omega, residual=ratio, history=hist)
            z = z + dz
            if np.linalg.norm(dz) <= 1e-14 * max(np.linalg.norm(z), 1e-300) and ratio <= 1e3 * tol:
                return z, it + 1, ratio
        raise ConvergenceError(
            f"HB Newton did not converge at omega={omega:g} (relative residual {hist[-1]:.3e} after "
            f"{max_iter} iterations); near a fold use continuation (trace_frf)",
            omega=omega, residual=hist[-1], history=hist)

    def solution(self, z, omega, beta) -> FourierSolution:
        return FourierSolution.from_Z(z.reshape(self.n, self.m), omega, beta)


def _system_for(system, config, extra=None) -> HbSystem:
    if isinstance(system, HbSystem):
        return system
    return HbSystem(system, config, extra)


def hb_residual(system, sol: FourierSolution, beta=None, config: HbConfig | None = None,
                extra=None) -> np.ndarray:
    """Balanced residual, dof-major, length (2H+1) n."""
    model = as_model(system)
    if sol.n != model.n:
        raise ContractError(f"solution has {sol.n} dofs, model has {model.n}")
    if config is None:
        config = HbConfig(H=sol.H)
    elif config.H != sol.H:
        raise ContractError(f"solution has H={sol.H} but config has H={config.H}")
    beta = (model.forcing.beta if sol.beta is None else sol.beta) if beta is None else beta
    hs = _system_for(model, config, extra)
    return hs.residual(sol.Z.ravel(), sol.omega, beta)


def hb_solve(system, omega: float, beta=None, guess: FourierSolution | None = None,
             config: HbConfig = HbConfig(), extra=None) -> FourierSolution:
    """Periodic response at ``omega`` by Newton on the HB residual.

    The default initial guess is the linear harmonic solution.
    """
    if not omega > 0:
        raise ContractError(f"omega must be positive, got {omega}")
    hs = system if isinstance(system, HbSystem) else HbSystem(system, config, extra)
    beta = hs.model.forcing.beta if beta is None else beta
    if guess is None:
        z0 = hs.linear_guess(omega, beta)
    else:
        if guess.n != hs.n:
            raise ContractError("guess has the wrong number of dofs")
        Zg = np.zeros((hs.n, hs.m))
        k = min(guess.H, hs.H)
        Zg[:, : 2 * k + 1] = guess.Z[:, : 2 * k + 1]
        z0 = Zg.ravel()
    z, _, _ = hs.newton(z0, omega, beta)
    return hs.solution(z, omega, beta)


def sample_period(sol: FourierSolution, m: int) -> np.ndarray:
    """``m`` equispaced states over one period starting at t = 0, shape (n, m)."""
    if m < 1:
        raise ContractError("m must be >= 1")
    t = sol.period * np.arange(m) / m
    return sol.at(t)

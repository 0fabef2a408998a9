"""Electrostatic force manifold over the active POD amplitude.

Forces are sampled from an oracle along ``D = U_a q``, projected on the
basis and fitted per channel with a cubic in ``q``.  Coefficients are
stored per unit ``eps0 V^2`` so the runtime load reads

    f_i(Q_a, t) = eps0 (V_DC^2 + 2 V_DC V_AC cos wt) (al0 + al1 Q_a + al2 Q_a^2 + al3 Q_a^3)

(the V_AC^2 contribution is left out by construction).  Units: um, us, ng,
uN, volts; ``EPS0`` is the vacuum permittivity in uN / V^2.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import polynomial as npoly

from .core import ForcingSpec, as_model
from .errors import ContractError, ElectroRangeError

log = logging.getLogger(__name__)

EPS0 = 8.8541878128e-6  # uN / V^2 (= F/m expressed in the um-uN system)
N_GRID = 23


class PlateOracle:
    """Parallel-plate electrostatic load on the dofs facing an electrode.

    Each listed dof carries ``f_i / V^2 = eps0 A_i / (2 (g - d_i)^2)`` toward
    the electrode, which sits at distance ``gap`` in the positive direction.
    """

    def __init__(self, n: int, dofs, areas, gap: float, eps0: float = EPS0):
        self.n = int(n)
        self.dofs = np.asarray(dofs, dtype=np.int64).ravel()
        self.areas = np.broadcast_to(np.asarray(areas, dtype=float), self.dofs.shape).copy()
        if not gap > 0:
            raise ContractError("gap must be positive")
        if np.any(self.areas < 0):
            raise ContractError("areas must be non-negative")
        if self.dofs.size and (self.dofs.min() < 0 or self.dofs.max() >= self.n):
            raise ContractError("oracle dof index out of range")
        self.gap = float(gap)
        self.eps0 = float(eps0)

    @classmethod
    def for_model(cls, system, gap: float, area: float | None = None, eps0: float = EPS0):
        """Oracle on the model's registered surface dofs with tributary areas.

        ``area`` is the total facing area; for beams it defaults to
        length x width from the model metadata.
        """
        model = as_model(system)
        meta = model.meta
        if "surface_dofs" not in meta:
            raise ContractError("model metadata declares no surface dofs")
        if area is None:
            spec = meta.get("spec", {})
            area = spec.get("length", 1.0) * spec.get("width", 1.0)
        w = np.asarray(meta["surface_weights"], dtype=float)
        return cls(model.n, meta["surface_dofs"], area * w, gap, eps0)

    @property
    def admissible(self):
        """Largest admissible displacement toward the electrode (5% clearance)."""
        return 0.95 * self.gap

    def __call__(self, D) -> np.ndarray:
        D = np.asarray(D, dtype=float)
        d = D[self.dofs]
        clear = self.gap - d
        if np.any(clear <= 0.05 * self.gap):
            k = int(np.argmin(clear))
            raise ElectroRangeError(f"gap clearance {clear[k]:.4g} at dof {self.dofs[k]} is below "
                                    f"5% of the gap {self.gap:g}")
        F = np.zeros(self.n)
        np.add.at(F, self.dofs, self.eps0 * self.areas / (2.0 * clear ** 2))
        return F


@dataclass(eq=False)
class ElectroManifold:
    """Projected electrostatic samples and their cubic fit.

    ``samples`` has shape (p, len(grid)) in force per V^2; ``alpha`` has
    shape (p, 4) per unit eps0 V^2 (ascending powers of Q_a).
    """

    grid: np.ndarray
    samples: np.ndarray
    active: int = 0
    eps0: float = EPS0
    alpha: np.ndarray | None = None
    residual: np.ndarray | None = None
    dropped: list = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.samples.shape[0]

    @property
    def q_range(self):
        return float(self.grid.min()), float(self.grid.max())

    def poly(self, Q1) -> np.ndarray:
        """alpha_i(Q1) per channel; shape (p,) or (p, N)."""
        self._need_fit()
        Q1 = np.asarray(Q1, dtype=float)
        return npoly.polyval(Q1, self.alpha.T) if Q1.ndim else npoly.polyval(float(Q1), self.alpha.T)

    def dpoly(self, Q1) -> np.ndarray:
        self._need_fit()
        d = np.stack([self.alpha[:, 1], 2 * self.alpha[:, 2], 3 * self.alpha[:, 3]], axis=1)
        Q1 = np.asarray(Q1, dtype=float)
        return npoly.polyval(Q1, d.T)

    def _need_fit(self):
        if self.alpha is None:
            raise ContractError("manifold has not been fitted; call fit_cubic first")

    def check_range(self, Q1):
        """Warn beyond 10% extrapolation of the grid width, raise beyond 25%."""
        lo, hi = self.q_range
        w = hi - lo
        q = np.atleast_1d(np.asarray(Q1, dtype=float))
        excess = np.maximum(lo - q.min(), q.max() - hi)
        if excess > 0.25 * w:
            raise ElectroRangeError(f"Q={q.min() if lo - q.min() > q.max() - hi else q.max():.4g} lies "
                                    f"more than 25% outside the fitted range [{lo:.4g}, {hi:.4g}]")
        if excess > 0.10 * w:
            warnings.warn(f"electrostatic manifold extrapolated beyond 10% of its range [{lo:.4g}, {hi:.4g}]",
                          RuntimeWarning, stacklevel=3)


def uniform_grid(basis, active: int, dofs, extent: float, n_points: int = N_GRID, centre: float = 0.0):
    """Grid of Q_a values whose largest displacement on ``dofs`` spans
    ``centre +- extent / 2`` (physical length units)."""
    U = basis.U if hasattr(basis, "U") else np.asarray(basis)
    u = U[np.asarray(dofs), active]
    k = np.argmax(np.abs(u))
    scale = u[k]
    if scale == 0:
        raise ContractError("active mode does not move the electrode-facing dofs")
    q_lo, q_hi = (centre - extent / 2) / scale, (centre + extent / 2) / scale
    return np.linspace(min(q_lo, q_hi), max(q_lo, q_hi), n_points)


def sample_manifold(oracle, basis, grid, active: int = 0) -> ElectroManifold:
    """Evaluate the oracle along ``U_a q`` for each grid value and project."""
    U = basis.U if hasattr(basis, "U") else np.asarray(basis, dtype=float)
    grid = np.asarray(grid, dtype=float).ravel()
    if not 0 <= active < U.shape[1]:
        raise ContractError(f"active index {active} out of range for p={U.shape[1]}")
    S = np.empty((U.shape[1], grid.size))
    for k, q in enumerate(grid):
        try:
            F = oracle(U[:, active] * q)
        except ElectroRangeError as exc:
            raise ElectroRangeError(f"oracle failed at grid point {k} (Q={q:.6g}): {exc}") from exc
        F = np.asarray(F, dtype=float)
        if not np.all(np.isfinite(F)):
            raise ElectroRangeError(f"oracle returned non-finite forces at grid point {k} (Q={q:.6g})")
        S[:, k] = U.T @ F
    return ElectroManifold(grid, S, active, getattr(oracle, "eps0", EPS0))


def fit_cubic(manifold: ElectroManifold, tol: float = 1e-2) -> ElectroManifold:
    """Least-squares cubic per channel; returns a fitted copy.

    Channel residuals are max |fit - sample| relative to the channel's
    sample range (or magnitude when the range is flat).  Non-active
    channels above ``tol`` are zeroed with a warning.
    """
    q = np.asarray(manifold.grid, dtype=float)
    if q.size < 8:
        raise ContractError(f"cubic fit needs at least 8 grid points, got {q.size}")
    # centred, scaled design to keep the conditioning honest
    c, s = 0.5 * (q.max() + q.min()), 0.5 * (q.max() - q.min())
    if s <= 0 or np.unique(q).size < 4:
        raise ContractError("degenerate grid: fewer than four distinct sample locations")
    x = (q - c) / s
    V = np.vander(x, 4, increasing=True)
    if np.linalg.cond(V) > 1e8:
        raise ContractError("ill-conditioned cubic design matrix")
    beta, *_ = sla.lstsq(V, manifold.samples.T)
    # back to powers of q: sum_k b_k ((q - c)/s)^k
    T = np.zeros((4, 4))
    for k in range(4):
        # ((q - c)/s)^k expanded in ascending powers of q
        T[k, : k + 1] = npoly.polypow([-c / s, 1.0 / s], k)
    coef = (T.T @ beta).T  # (p, 4), force per V^2
    fit = npoly.polyval(q, coef.T)
    res = np.abs(fit - manifold.samples).max(axis=1)
    span = np.ptp(manifold.samples, axis=1)
    mag = np.abs(manifold.samples).max(axis=1)
    ref = np.where(span > 1e-12 * np.maximum(mag, 1e-300), span, np.maximum(mag, 1e-300))
    rel = res / ref
    dropped = []
    for i in range(coef.shape[0]):
        if i != manifold.active and rel[i] > tol:
            warnings.warn(f"electrostatic channel {i} fit residual {rel[i]:.2e} exceeds {tol:g}; "
                          "channel set to zero", RuntimeWarning, stacklevel=2)
            log.warning("dropping electrostatic channel %d (residual %.2e)", i, rel[i])
            coef[i] = 0.0
            dropped.append(i)
    if rel[manifold.active] > tol:
        warnings.warn(f"active electrostatic channel fit residual {rel[manifold.active]:.2e} exceeds {tol:g}",
                      RuntimeWarning, stacklevel=2)
    return ElectroManifold(q.copy(), manifold.samples.copy(), manifold.active, manifold.eps0,
                           coef / manifold.eps0, rel, dropped)


def manifold_from_coefficients(alpha, q_range, active: int = 0, eps0: float = EPS0,
                               n_points: int = N_GRID) -> ElectroManifold:
    """Manifold defined directly by per-unit-eps0 coefficients (p, 4)."""
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    grid = np.linspace(q_range[0], q_range[1], n_points)
    samples = eps0 * npoly.polyval(grid, alpha.T)
    return ElectroManifold(grid, samples, active, eps0, alpha.copy(), np.zeros(alpha.shape[0]), [])


def eval_ef(manifold: ElectroManifold, Q1, V_dc: float, V_ac: float, omega: float, t) -> np.ndarray:
    """Generalised electrostatic force per channel at amplitude Q1 and time t."""
    manifold.check_range(Q1)
    drive = manifold.eps0 * (V_dc ** 2 + 2.0 * V_dc * V_ac * np.cos(omega * np.asarray(t, dtype=float)))
    return drive * manifold.poly(Q1)


class ElectroLoad:
    """State-dependent HB load built from a fitted manifold (see HbSystem)."""

    def __init__(self, manifold: ElectroManifold, V_dc: float, V_ac: float):
        manifold._need_fit()
        self.m = manifold
        self.V_dc, self.V_ac = float(V_dc), float(V_ac)

    def drive(self, t, omega):
        return self.m.eps0 * (self.V_dc ** 2 + 2 * self.V_dc * self.V_ac * np.cos(omega * np.asarray(t)))

    def force(self, X, t, omega):
        q = X[self.m.active]
        return self.drive(t, omega)[None, :] * self.m.poly(q)

    def tangent(self, X, t, omega):
        p = X.shape[0]
        q = X[self.m.active]
        out = np.zeros((p, p, q.size))
        out[:, self.m.active, :] = self.drive(t, omega)[None, :] * self.m.dpoly(q)
        return out.reshape(p * p, -1)


def static_equilibrium(rom, manifold: ElectroManifold, V_dc: float, tol: float = 1e-12, max_iter: int = 50):
    """Equilibrium under the DC load alone, K Q + g + h = eps0 V_DC^2 alpha(Q_a)."""
    model = as_model(rom)
    ev = model.evaluator
    load = ElectroLoad(manifold, V_dc, 0.0)
    p = model.n
    Q = np.zeros(p)
    for _ in range(max_iter):
        X = Q[:, None]
        r = ev.internal_force(Q) - load.force(X, np.zeros(1), 1.0)[:, 0]
        Kt = ev.assemble(ev.tangent_values(Q)) - load.tangent(X, np.zeros(1), 1.0)[:, 0].reshape(p, p)
        dQ = np.linalg.solve(Kt, -r)
        Q = Q + dQ
        if np.linalg.norm(dQ) <= tol * max(np.linalg.norm(Q), 1e-30):
            return Q, Kt
    raise ElectroRangeError(f"no static equilibrium at V_DC={V_dc:g} (possible pull-in)")


def electro_linear_frequency(rom, manifold: ElectroManifold, V_dc: float) -> float:
    """Lowest linearised angular frequency about the DC equilibrium."""
    model = as_model(rom)
    Q, _ = static_equilibrium(model, manifold, V_dc)
    ev = model.evaluator
    load = ElectroLoad(manifold, V_dc, 0.0)
    p = model.n
    Kt = ev.assemble(ev.tangent_values(Q)) - load.tangent(Q[:, None], np.zeros(1), 1.0)[:, 0].reshape(p, p)
    Kt = 0.5 * (Kt + Kt.T) if p > 1 else Kt
    w2 = sla.eigvals(Kt, model.M.toarray()).real
    return float(np.sqrt(np.min(w2[w2 > 0])))


def coupled_frf(rom, manifold: ElectroManifold, V_dc: float, V_ac: float, omega_range, config=None,
                hb_config=None, stability: bool = True):
    """FRF of the ROM driven only by the electrostatic manifold load."""
    from .continuation import ContinuationConfig, trace_frf
    from .hb import HbConfig

    model = as_model(rom)
    f = model.forcing
    driven = model.with_forcing(ForcingSpec(f.F0, 0.0, f.omega, 0.0))
    load = ElectroLoad(manifold, V_dc, V_ac)
    br = trace_frf(driven, omega_range, 0.0, config or ContinuationConfig(), hb_config or HbConfig(),
                   extra=load, stability=stability)
    for pt in br.points:
        manifold.check_range(pt.sol.at(np.linspace(0, pt.sol.period, 64, endpoint=False))[manifold.active])
    br.meta.update({"V_dc": V_dc, "V_ac": V_ac})
    return br

"""Implicit Newmark time marching (average acceleration) with Newton corrections.

Small systems (n <= DENSE_MAX) run through a compiled dense kernel; larger
ones through a sparse-LU Python loop.  Both share the same update and the
same convergence test

    ||r|| <= tol_rel * ||F_ext(t)|| + tol_abs * f_scale

where f_scale is the size of the inertia, damping and internal force terms
(a row-wise sum of magnitudes in the dense kernel)

with at least one Newton iteration per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .core import DENSE_MAX, as_model
from .errors import ContractError, ConvergenceError


@dataclass(frozen=True)
class NewmarkConfig:
    tol_rel: float = 1e-8
    tol_abs: float = 1e-10
    max_iter: int = 20


@dataclass(frozen=True, eq=False)
class State:
    D: np.ndarray
    V: np.ndarray
    A: np.ndarray


@dataclass(eq=False)
class Trajectory:
    """Recorded states, column-stacked.

    ``segments`` holds one dict per forcing segment with keys
    ``omega, beta, start, stop`` (column range) and ``t0`` (segment start).
    """

    times: np.ndarray
    D: np.ndarray
    V: np.ndarray
    stride: int = 1
    segments: list = field(default_factory=list)
    final: State | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.D.shape != self.V.shape or self.D.shape[1] != self.times.size:
            raise ContractError("trajectory arrays have inconsistent column counts")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ContractError("trajectory times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def n_t(self) -> int:
        return self.times.size

    def observe(self, system) -> np.ndarray:
        """Observable histories, shape (n_obs, n_t)."""
        return as_model(system).observable_matrix @ self.D


@dataclass(frozen=True)
class SweepPlan:
    omegas: tuple
    cycles: int = 100
    steps_per_cycle: int = 50
    direction: str = "down"
    carry: bool = True
    beta: float | None = None
    stride: int = 1

    def __post_init__(self):
        om = tuple(float(w) for w in self.omegas)
        if not om:
            raise ContractError("sweep plan needs at least one frequency")
        if self.cycles < 1 or self.steps_per_cycle < 1 or self.stride < 1:
            raise ContractError("cycles, steps_per_cycle and stride must be positive")
        if self.direction not in ("up", "down"):
            raise ContractError(f"direction must be 'up' or 'down', got {self.direction!r}")
        if any(w <= 0 for w in om):
            raise ContractError("sweep frequencies must be positive")
        d = np.diff(om)
        if (self.direction == "up" and np.any(d < 0)) or (self.direction == "down" and np.any(d > 0)):
            raise ContractError(f"frequencies are not sorted for a {self.direction} sweep")
        object.__setattr__(self, "omegas", om)


# ---------------------------------------------------------------------------
# compiled dense kernel

@numba.njit(cache=True)
def _nl_force(D, gi, gv, hi, hv, out):
    for e in range(gv.size):
        out[gi[e, 0]] += gv[e] * D[gi[e, 1]] * D[gi[e, 2]]
    for e in range(hv.size):
        out[hi[e, 0]] += hv[e] * D[hi[e, 1]] * D[hi[e, 2]] * D[hi[e, 3]]


@numba.njit(cache=True)
def _nl_tangent(D, gi, gv, hi, hv, J):
    for e in range(gv.size):
        i, j, k = gi[e, 0], gi[e, 1], gi[e, 2]
        J[i, j] += gv[e] * D[k]
        J[i, k] += gv[e] * D[j]
    for e in range(hv.size):
        i, j, k, l = hi[e, 0], hi[e, 1], hi[e, 2], hi[e, 3]
        v = hv[e]
        J[i, j] += v * D[k] * D[l]
        J[i, k] += v * D[j] * D[l]
        J[i, l] += v * D[j] * D[k]


@numba.njit(cache=True)
def _solve_inplace(A, b):
    """Gaussian elimination with partial pivoting; overwrites A and b."""
    n = b.size
    for c in range(n):
        p = c
        big = abs(A[c, c])
        for r in range(c + 1, n):
            if abs(A[r, c]) > big:
                big = abs(A[r, c])
                p = r
        if big == 0.0:
            return False
        if p != c:
            for k in range(n):
                A[c, k], A[p, k] = A[p, k], A[c, k]
            b[c], b[p] = b[p], b[c]
        inv = 1.0 / A[c, c]
        for r in range(c + 1, n):
            f = A[r, c] * inv
            if f != 0.0:
                for k in range(c, n):
                    A[r, k] -= f * A[c, k]
                b[r] -= f * b[c]
    for c in range(n - 1, -1, -1):
        s = b[c]
        for k in range(c + 1, n):
            s -= A[c, k] * b[k]
        b[c] = s / A[c, c]
    return True


@numba.njit(cache=True)
def _march_dense(M, C, K, gi, gv, hi, hv, F0, beta, omega, phase, t0, dt, nsteps,
                 D0, V0, A0, stride, tol_rel, tol_abs, max_iter, rec_D, rec_V):
    """Returns (status, failed_step, iterations, residual_norm, D, V, A).

    status 0 = success, 1 = Newton stalled, 2 = singular tangent.
    """
    n = D0.size
    a0 = 4.0 / (dt * dt)
    a1 = 2.0 / dt
    Dn = D0.copy()
    Vn = V0.copy()
    An = A0.copy()
    D = np.empty(n)
    r = np.empty(n)
    J = np.empty((n, n))
    Acc = np.empty(n)
    Vel = np.empty(n)
    nl = np.empty(n)
    col = 0
    for s in range(1, nsteps + 1):
        t = t0 + s * dt
        fc = beta * np.cos(omega * t + phase)
        fnorm = abs(fc) * np.sqrt(np.sum(F0 * F0))
        for i in range(n):
            D[i] = Dn[i] + dt * Vn[i] + 0.25 * dt * dt * An[i]
        # displacement scale of the step, guards the tests when D passes zero
        xscale = np.sqrt(np.sum(Dn * Dn)) + dt * np.sqrt(np.sum(Vn * Vn)) + dt * dt * np.sqrt(np.sum(An * An))
        it = 0
        rnorm = 0.0
        while True:
            for i in range(n):
                Acc[i] = a0 * (D[i] - Dn[i]) - 2.0 * a1 * Vn[i] - An[i]
                Vel[i] = -Vn[i] + a1 * (D[i] - Dn[i])
            nl[:] = 0.0
            _nl_force(D, gi, gv, hi, hv, nl)
            fsum = 0.0
            for i in range(n):
                s_ = -fc * F0[i] + nl[i]
                a_ = abs(fc * F0[i]) + abs(nl[i])
                for k in range(n):
                    tm = M[i, k] * Acc[k] + C[i, k] * Vel[k] + K[i, k] * D[k]
                    s_ += tm
                    a_ += abs(tm)
                r[i] = s_
                fsum += a_ * a_
            rnorm = np.sqrt(np.sum(r * r))
            # absolute part scales with the force terms themselves; it is
            # also far above their round-off level
            tol = tol_rel * fnorm + (tol_abs + 64 * 2.2e-16) * np.sqrt(fsum)
            if it >= 1 and rnorm <= tol:
                break
            if it >= max_iter:
                return 1, s, it, rnorm, Dn, Vn, An
            for i in range(n):
                for k in range(n):
                    J[i, k] = a0 * M[i, k] + a1 * C[i, k] + K[i, k]
            _nl_tangent(D, gi, gv, hi, hv, J)
            for i in range(n):
                r[i] = -r[i]
            if not _solve_inplace(J, r):
                return 2, s, it, rnorm, Dn, Vn, An
            dd = 0.0
            for i in range(n):
                D[i] += r[i]
                dd += r[i] * r[i]
            it += 1
            # increment at round-off level: the residual cannot drop further
            if np.sqrt(dd) <= 8 * 2.2e-16 * (np.sqrt(np.sum(D * D)) + xscale):
                break
        for i in range(n):
            Acc[i] = a0 * (D[i] - Dn[i]) - 2.0 * a1 * Vn[i] - An[i]
            Vel[i] = -Vn[i] + a1 * (D[i] - Dn[i])
            Dn[i] = D[i]
            Vn[i] = Vel[i]
            An[i] = Acc[i]
        if s % stride == 0:
            rec_D[:, col] = Dn
            rec_V[:, col] = Vn
            col += 1
    return 0, nsteps, 0, 0.0, Dn, Vn, An


class _DenseData:
    """Dense arrays and canonical tensor lists cached per model."""

    def __init__(self, model):
        self.M = np.ascontiguousarray(model.M.toarray())
        self.C = np.ascontiguousarray(model.C.toarray())
        self.K = np.ascontiguousarray(model.K.toarray())
        self.gi = np.ascontiguousarray(model.G.index)
        self.gv = np.ascontiguousarray(model.G.value)
        self.hi = np.ascontiguousarray(model.H.index)
        self.hv = np.ascontiguousarray(model.H.value)
        self.F0 = np.ascontiguousarray(model.forcing.F0)


_DENSE_CACHE: dict = {}


def _dense_data(model):
    key = id(model)
    hit = _DENSE_CACHE.get(key)
    if hit is None or hit[0] is not model:
        if len(_DENSE_CACHE) > 32:
            _DENSE_CACHE.clear()
        hit = (model, _DenseData(model))
        _DENSE_CACHE[key] = hit
    return hit[1]


# ---------------------------------------------------------------------------
# sparse path

def _march_sparse(model, beta, omega, phase, t0, dt, nsteps, D0, V0, A0, stride, cfg,
                  rec_D, rec_V):
    ev = model.evaluator
    M, C, F0 = model.M.csr, model.C.csr, model.forcing.F0
    a0, a1 = 4.0 / dt ** 2, 2.0 / dt
    lin_pat = a0 * ev.M_pat + a1 * ev.C_pat
    f0n = np.linalg.norm(F0)
    # entrywise magnitudes bound the cancellation inside each product
    aM, aC, aK = abs(M), abs(C), abs(model.K.csr)
    Dn, Vn, An = D0.copy(), V0.copy(), A0.copy()
    col = 0
    for s in range(1, nsteps + 1):
        t = t0 + s * dt
        fc = beta * np.cos(omega * t + phase)
        D = Dn + dt * Vn + 0.25 * dt * dt * An
        xscale = np.linalg.norm(Dn) + dt * np.linalg.norm(Vn) + dt * dt * np.linalg.norm(An)
        it = 0
        while True:
            Acc = a0 * (D - Dn) - 2 * a1 * Vn - An
            Vel = -Vn + a1 * (D - Dn)
            terms = (M @ Acc, C @ Vel, ev.internal_force(D), fc * F0)
            r = terms[0] + terms[1] + terms[2] - terms[3]
            rnorm = np.linalg.norm(r)
            tscale = np.linalg.norm(aM @ np.abs(Acc) + aC @ np.abs(Vel) + aK @ np.abs(D)
                                    + np.abs(terms[2] - model.K.csr @ D) + np.abs(terms[3]))
            tol = cfg.tol_rel * abs(fc) * f0n + (cfg.tol_abs + 64 * np.finfo(float).eps) * tscale
            if it >= 1 and rnorm <= tol:
                break
            if it >= cfg.max_iter:
                return 1, s, it, rnorm, Dn, Vn, An
            try:
                dD = ev.solver(lin_pat + ev.tangent_values(D))(-r)
            except RuntimeError:
                return 2, s, it, rnorm, Dn, Vn, An
            D = D + dD
            it += 1
            if np.linalg.norm(dD) <= 8 * np.finfo(float).eps * (np.linalg.norm(D) + xscale):
                break
        An = a0 * (D - Dn) - 2 * a1 * Vn - An
        Vn = -Vn + a1 * (D - Dn)
        Dn = D
        if s % stride == 0:
            rec_D[:, col] = Dn
            rec_V[:, col] = Vn
            col += 1
    return 0, nsteps, 0, 0.0, Dn, Vn, An


# ---------------------------------------------------------------------------
# public API

def consistent_acceleration(system, D, V, t=0.0, beta=None, omega=None) -> np.ndarray:
    """Solve M A = F(t) - C V - f_int(D)."""
    import scipy.linalg as sla

    model = as_model(system)
    rhs = model.forcing(t, beta, omega) - model.C @ V - model.evaluator.internal_force(D)
    return sla.cho_solve(sla.cho_factor(model.M.toarray()), rhs)


def _check_vector(name, x, n):
    if x.shape != (n,) or not np.all(np.isfinite(x)):
        raise ContractError(f"initial {name} must be a finite vector of length {n}")


def _initial(model, state, t, beta, omega):
    n = model.n
    if state is None:
        D0, V0 = np.zeros(n), np.zeros(n)
        A0 = consistent_acceleration(model, D0, V0, t, beta, omega)
    elif isinstance(state, State):
        D0, V0, A0 = (np.array(x, dtype=float) for x in (state.D, state.V, state.A))
    else:
        D0, V0 = (np.array(x, dtype=float) for x in state)
        _check_vector("D", D0, n)
        _check_vector("V", V0, n)
        A0 = consistent_acceleration(model, D0, V0, t, beta, omega)
    for name, x in (("D", D0), ("V", V0), ("A", A0)):
        _check_vector(name, x, n)
    return D0, V0, A0


def _march(model, beta, omega, phase, t0, dt, nsteps, D0, V0, A0, stride, cfg):
    nrec = nsteps // stride
    rec_D = np.empty((model.n, nrec))
    rec_V = np.empty((model.n, nrec))
    if model.n <= DENSE_MAX:
        dd = _dense_data(model)
        out = _march_dense(dd.M, dd.C, dd.K, dd.gi, dd.gv, dd.hi, dd.hv, dd.F0,
                           float(beta), float(omega), float(phase), float(t0), float(dt),
                           int(nsteps), D0, V0, A0, int(stride), cfg.tol_rel, cfg.tol_abs,
                           int(cfg.max_iter), rec_D, rec_V)
    else:
        out = _march_sparse(model, beta, omega, phase, t0, dt, nsteps, D0, V0, A0, stride, cfg,
                            rec_D, rec_V)
    status, step, it, rnorm, D, V, A = out
    if status:
        why = "Newton did not converge" if status == 1 else "singular effective tangent"
        raise ConvergenceError(f"Newmark step {step} failed: {why} (residual {rnorm:.3e} after {it} iterations)",
                               step=int(step), iterations=int(it), residual=float(rnorm),
                               time=t0 + step * dt)
    return rec_D, rec_V, State(D.copy(), V.copy(), A.copy())


def newmark_step(system, state: State, t: float, dt: float, beta=None, omega=None,
                 config: NewmarkConfig = NewmarkConfig()) -> State:
    """Advance one average-acceleration Newmark step from time ``t`` to ``t + dt``."""
    model = as_model(system)
    if not dt > 0:
        raise ContractError(f"dt must be positive, got {dt}")
    D0, V0, A0 = _initial(model, state, t, beta, omega)
    f = model.forcing
    beta = f.beta if beta is None else beta
    omega = f.omega if omega is None else omega
    _, _, final = _march(model, beta, omega, f.phase, t, dt, 1, D0, V0, A0, 1, config)
    return final


def simulate(system, t_end: float, dt: float, initial=None, stride: int = 1, beta=None,
             omega=None, t0: float = 0.0, record_initial: bool = False,
             config: NewmarkConfig = NewmarkConfig()) -> Trajectory:
    """March from ``t0`` to ``t_end`` with fixed ``dt``, recording every ``stride``-th step.

    ``initial`` may be None (rest, consistent acceleration), a ``(D, V)``
    pair or a full :class:`State`.  The step count is ``round((t_end - t0) / dt)``.
    """
    model = as_model(system)
    if not dt > 0:
        raise ContractError(f"dt must be positive, got {dt}")
    if stride < 1:
        raise ContractError("stride must be >= 1")
    nsteps = int(round((t_end - t0) / dt))
    if nsteps < 1:
        raise ContractError("t_end must exceed t0 by at least one step")
    f = model.forcing
    beta = f.beta if beta is None else beta
    omega = f.omega if omega is None else omega
    D0, V0, A0 = _initial(model, initial, t0, beta, omega)
    rec_D, rec_V, final = _march(model, beta, omega, f.phase, t0, dt, nsteps, D0, V0, A0,
                                 stride, config)
    times = t0 + dt * stride * np.arange(1, rec_D.shape[1] + 1)
    if record_initial:
        times = np.concatenate([[t0], times])
        rec_D = np.column_stack([D0, rec_D])
        rec_V = np.column_stack([V0, rec_V])
    seg = {"omega": float(omega), "beta": float(beta), "start": 0, "stop": rec_D.shape[1], "t0": t0}
    return Trajectory(times, rec_D, rec_V, stride, [seg], final)


def sweep(system, plan: SweepPlan, config: NewmarkConfig = NewmarkConfig()) -> Trajectory:
    """Run the plan's frequencies in order; the forcing phase restarts per segment.

    Recorded times are global (segments laid end to end) while each segment's
    load uses its local time.
    """
    model = as_model(system)
    beta = model.forcing.beta if plan.beta is None else plan.beta
    Ds, Vs, ts, segs = [], [], [], []
    state = None
    t_off, col = 0.0, 0
    for idx, w in enumerate(plan.omegas):
        T = 2 * np.pi / w
        dt = T / plan.steps_per_cycle
        nsteps = plan.cycles * plan.steps_per_cycle
        init = state if plan.carry else None
        if init is not None:
            # same D, V; acceleration re-made consistent with the new load
            init = (init.D, init.V)
        try:
            D0, V0, A0 = _initial(model, init, 0.0, beta, w)
            rec_D, rec_V, state = _march(model, beta, w, model.forcing.phase, 0.0, dt, nsteps,
                                         D0, V0, A0, plan.stride, config)
        except ConvergenceError as exc:
            raise ConvergenceError(f"sweep segment {idx} (omega={w:g}): {exc}", segment=idx,
                                   **exc.diagnostics) from exc
        m = rec_D.shape[1]
        ts.append(t_off + dt * plan.stride * np.arange(1, m + 1))
        Ds.append(rec_D)
        Vs.append(rec_V)
        segs.append({"omega": w, "beta": float(beta), "start": col, "stop": col + m, "t0": t_off})
        col += m
        t_off += nsteps * dt
    return Trajectory(np.concatenate(ts), np.hstack(Ds), np.hstack(Vs), plan.stride, segs, state)


@dataclass(frozen=True, eq=False)
class SteadyState:
    omega: float
    beta: float
    amplitudes: dict
    periods: int
    converged: bool
    final: State
    last_period: Trajectory


def steady_state(system, omega: float, beta=None, steps_per_period: int = 600,
                 max_periods: float | None = None, rtol: float = 1e-5, detect: bool = True,
                 initial=None, config: NewmarkConfig = NewmarkConfig()) -> SteadyState:
    """March period by period until the observable peak-to-peak settles.

    Stops when the per-period relative change of every observable's
    peak-to-peak is below ``rtol`` (if ``detect``) or after ``max_periods``
    (default ``6 Q`` with ``Q`` from the model metadata, else 300).
    Amplitudes are half the peak-to-peak over the final period.
    """
    model = as_model(system)
    if not omega > 0:
        raise ContractError("omega must be positive")
    if max_periods is None:
        max_periods = 6 * float(model.meta.get("Q", 50.0))
    n_per = int(np.ceil(max_periods))
    f = model.forcing
    beta = f.beta if beta is None else beta
    T = 2 * np.pi / omega
    dt = T / steps_per_period
    O = model.observable_matrix if model.observables else np.eye(model.n)
    names = model.observable_names or [f"dof{i}" for i in range(model.n)]
    D0, V0, A0 = _initial(model, initial, 0.0, beta, omega)
    prev = None
    block = 1 if detect else n_per
    done, converged = 0, False
    t = 0.0
    while done < n_per:
        k = min(block, n_per - done)
        rec_D, rec_V, st = _march(model, beta, omega, f.phase, t, dt, k * steps_per_period,
                                  D0, V0, A0, 1, config)
        t += k * T
        done += k
        D0, V0, A0 = st.D, st.V, st.A
        last = O @ rec_D[:, -steps_per_period:]
        p2p = last.max(axis=1) - last.min(axis=1)
        if detect and prev is not None:
            scale = np.maximum(np.abs(p2p), 1e-300)
            if np.all(np.abs(p2p - prev) <= rtol * scale):
                converged = True
                break
        prev = p2p
    times = t - T + dt * np.arange(1, steps_per_period + 1)
    lastD = rec_D[:, -steps_per_period:]
    traj = Trajectory(times, lastD.copy(), rec_V[:, -steps_per_period:].copy(), 1,
                      [{"omega": omega, "beta": float(beta), "start": 0, "stop": steps_per_period,
                        "t0": t - T}], st)
    amps = {nm: 0.5 * float(v) for nm, v in zip(names, p2p)}
    return SteadyState(float(omega), float(beta), amps, done, converged or not detect, st, traj)

"""Pseudo-arclength continuation of HB solutions in omega, Floquet stability
and saddle-node / Neimark-Sacker detection.

Arclength is measured in a scaled space ``y = (z / s_z, omega / s_w)`` where
``s_w`` is the width of the frequency window and ``s_z`` the largest
coefficient norm met so far, so neither component dominates the step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import as_model
from .errors import ContractError, ConvergenceError
from .hb import FourierSolution, HbConfig, HbSystem, basis

log = logging.getLogger(__name__)

TOL_FLOQ = 1e-6
IMAG_TOL = 1e-3


@dataclass(frozen=True)
class ContinuationConfig:
    ds0: float = 0.02
    ds_min: float = 1e-7
    ds_max: float = 0.08
    grow: float = 1.5
    fast_iters: int = 3
    max_corrector: int = 10
    max_points: int = 4000
    tol: float = 1e-10
    min_cos: float = 0.8
    bif_omega_rtol: float = 1e-4
    bif_phi_tol: float = 1e-7
    max_bisect: int = 80


@dataclass(eq=False)
class BranchPoint:
    sol: FourierSolution
    omega: float
    beta: float
    amplitudes: dict
    multipliers: np.ndarray | None = None
    stable: bool | None = None
    bif: str = "NONE"
    iterations: int = 0
    ds: float = 0.0
    note: str = ""


@dataclass(eq=False)
class FrfBranch:
    points: list
    beta: float
    omega_range: tuple
    complete: bool = True
    message: str = ""
    scales: tuple = (1.0, 1.0)
    H: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    @property
    def omegas(self) -> np.ndarray:
        return np.array([p.omega for p in self.points])

    def amplitudes(self, name: str) -> np.ndarray:
        return np.array([p.amplitudes[name] for p in self.points])

    @property
    def observable_names(self) -> list:
        return list(self.points[0].amplitudes) if self.points else []

    @property
    def stable(self) -> np.ndarray:
        return np.array([bool(p.stable) if p.stable is not None else True for p in self.points])

    def bifurcations(self, label: str | None = None) -> list:
        return [p for p in self.points if p.bif != "NONE" and (label is None or p.bif == label)]

    def peak(self, name: str | None = None):
        """(omega, amplitude) of the largest amplitude point on the branch."""
        name = name or self.observable_names[0]
        a = self.amplitudes(name)
        k = int(np.argmax(a))
        return self.points[k].omega, float(a[k])


# ---------------------------------------------------------------------------
# Floquet analysis

def _rk4_monodromy(Minv_C, Minv_Kt, T, N):
    """Monodromy of x' = [[0, I], [-Minv Kt(t), -Minv C]] x by classical RK4.

    ``Minv_Kt`` holds M^-1 Kt sampled at t_j = j T / (2N), j = 0..2N.
    """
    n = Minv_C.shape[0]
    h = T / N
    X = np.eye(2 * n)
    for k in range(N):
        A0, Ah, A1 = Minv_Kt[2 * k], Minv_Kt[2 * k + 1], Minv_Kt[2 * k + 2]

        def f(Y, Ak):
            top = Y[n:]
            bot = -Ak @ Y[:n] - Minv_C @ Y[n:]
            return np.vstack([top, bot])

        k1 = f(X, A0)
        k2 = f(X + 0.5 * h * k1, Ah)
        k3 = f(X + 0.5 * h * k2, Ah)
        k4 = f(X + h * k3, A1)
        X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return X


def floquet_multipliers(system, sol: FourierSolution, beta=None, extra=None, steps: int | None = None,
                        config: HbConfig | None = None, check: bool = True) -> np.ndarray:
    """Eigenvalues of the one-period monodromy matrix of the linearised flow.

    The tangent stiffness is evaluated along the reconstructed orbit.  The
    RK4 step count is at least 500 per period and adapts to the stiffest
    linearised frequency so the integration stays accurate.  Multipliers are
    returned sorted by decreasing modulus.
    """
    model = as_model(system)
    ev = model.evaluator
    if not ev.dense:
        raise ContractError("Floquet analysis is limited to small models (ROMs or small FOMs)")
    if sol.n != model.n:
        raise ContractError("solution and model dimensions differ")
    beta = (model.forcing.beta if sol.beta is None else sol.beta) if beta is None else beta
    if check:
        hs = HbSystem(model, config or HbConfig(H=sol.H), extra)
        z = sol.Z.ravel()
        ratio = np.linalg.norm(hs.residual(z, sol.omega, beta)) / hs.scale(z, beta)
        if ratio > 1e-6:
            raise ContractError(f"solution is not converged (relative HB residual {ratio:.2e})")
    n = model.n
    T = sol.period
    Md = model.M.toarray()
    Minv = np.linalg.inv(Md)
    Minv_C = Minv @ model.C.toarray()

    def tangents(N):
        t = T * np.arange(2 * N + 1) / (2 * N)
        X = sol.at(t)
        kt = ev.tangent_values(X)
        if extra is not None:
            kt = kt - extra.tangent(X, t, sol.omega)
        return np.einsum("ij,jkt->tik", Minv, kt.reshape(n, n, -1))

    # stiffest linearised frequency along the orbit decides the step count
    probe = tangents(16)
    wmax2 = max(np.abs(np.linalg.eigvals(A)).max() for A in probe)
    cmax = np.abs(np.linalg.eigvals(Minv_C)).max() if n else 0.0
    wmax = np.sqrt(wmax2) + cmax
    N = max(500, int(np.ceil(12.6 * wmax * T / (2 * np.pi)))) if steps is None else int(steps)
    Phi = _rk4_monodromy(Minv_C, tangents(N), T, N)
    mu = np.linalg.eigvals(Phi)
    return mu[np.argsort(-np.abs(mu), kind="stable")]


def _n_out(mu, tol=TOL_FLOQ):
    return int(np.sum(np.abs(mu) > 1 + tol))


# ---------------------------------------------------------------------------
# tracing

class _Tracer:
    def __init__(self, hs: HbSystem, beta: float, cfg: ContinuationConfig, s_w: float, s_z: float):
        self.hs, self.beta, self.cfg = hs, beta, cfg
        self.s_w, self.s_z = s_w, s_z

    def y(self, x):
        return np.concatenate([x[:-1] / self.s_z, [x[-1] / self.s_w]])

    def ratio(self, x):
        z, w = x[:-1], x[-1]
        return np.linalg.norm(self.hs.residual(z, w, self.beta)) / self.hs.scale(z, self.beta)

    def _bordered_solve(self, J, rw, row, rhs):
        hs = self.hs
        if hs.dense:
            A = np.block([[J, rw[:, None]], [row[None, :-1], np.array([[row[-1]]])]])
            return sla.solve(A, rhs, check_finite=False)
        A = sp.bmat([[J, sp.csc_matrix(rw[:, None])],
                     [sp.csr_matrix(row[None, :-1]), sp.csr_matrix([[row[-1]]])]], format="csc")
        return spla.splu(A, permc_spec="COLAMD").solve(rhs)

    def correct(self, x_pred, normal_y, anchor_y, max_iter=None):
        """Newton on R = 0 with the hyperplane normal_y . (y(x) - anchor_y) = 0."""
        hs, cfg = self.hs, self.cfg
        max_iter = cfg.max_corrector if max_iter is None else max_iter
        x = x_pred.copy()
        row = np.concatenate([normal_y[:-1] / self.s_z, [normal_y[-1] / self.s_w]])
        for it in range(max_iter + 1):
            z, w = x[:-1], x[-1]
            if not w > 0:
                return None, it
            r = hs.residual(z, w, self.beta)
            g = normal_y @ (self.y(x) - anchor_y)
            ratio = np.linalg.norm(r) / hs.scale(z, self.beta)
            if ratio <= cfg.tol and abs(g) <= 1e-10 and it >= 1:
                return x, it
            if it == max_iter or not np.isfinite(ratio):
                return None, it
            try:
                dx = self._bordered_solve(hs.jacobian(z, w), hs.domega(z, w), row,
                                          -np.concatenate([r, [g]]))
            except (np.linalg.LinAlgError, RuntimeError, ValueError):
                return None, it
            if not np.all(np.isfinite(dx)):
                return None, it
            x = x + dx
        return None, max_iter

    def tangent(self, x, direction=1.0):
        """Unit tangent in scaled space with sign chosen by ``direction`` on omega."""
        hs = self.hs
        z, w = x[:-1], x[-1]
        J = hs.jacobian(z, w)
        rw = hs.domega(z, w)
        dz = (sla.solve(J, -rw) if hs.dense else spla.splu(J, permc_spec="COLAMD").solve(-rw))
        t = np.concatenate([dz / self.s_z, [1.0 / self.s_w]]) * direction
        return t / np.linalg.norm(t)

    def chord_point(self, xa, xb, s):
        """Solution on the hyperplane through the chord point at fraction s,
        orthogonal to the chord (scaled space)."""
        ya, yb = self.y(xa), self.y(xb)
        d = yb - ya
        d = d / np.linalg.norm(d)
        anchor = (1 - s) * ya + s * yb
        x, it = self.correct((1 - s) * xa + s * xb, d, anchor, max_iter=2 * self.cfg.max_corrector)
        return x

    def fixed_omega(self, x_guess, w):
        z, _, _ = self.hs.newton(x_guess[:-1], w, self.beta, tol=self.cfg.tol)
        return np.concatenate([z, [w]])


def _make_point(hs, model, x, beta, it=0, ds=0.0):
    sol = hs.solution(x[:-1], x[-1], beta)
    return BranchPoint(sol, float(x[-1]), float(beta), sol.observable_amplitudes(model),
                       iterations=it, ds=ds)


def _start_solution(hs, w, beta, tol):
    """Newton from the linear guess; if that fails, ramp the load from zero."""
    try:
        z, it, _ = hs.newton(hs.linear_guess(w, beta), w, beta, tol=tol)
        return z, it
    except ConvergenceError as first:
        err = first
    for n_ramp in (8, 32, 128):
        z = np.zeros(hs.n * hs.m)
        try:
            for b in beta * np.arange(1, n_ramp + 1) / n_ramp:
                z, it, _ = hs.newton(z, w, b, tol=tol)
            return z, it
        except ConvergenceError as exc:
            err = exc
    raise ConvergenceError(f"no periodic solution found at the branch start omega={w:g}: {err}",
                           omega=w)


def trace_frf(system, omega_range, beta=None, config: ContinuationConfig = ContinuationConfig(),
              hb_config: HbConfig = HbConfig(), extra=None, stability: bool = True,
              classify: bool = True, direction: str = "up") -> FrfBranch:
    """Continue the periodic response across ``omega_range``.

    The returned branch is flagged ``complete=False`` with a diagnostic
    ``message`` if the step size underflows or the point budget runs out;
    the points found so far are kept.
    """
    model = as_model(system)
    w_lo, w_hi = (float(v) for v in omega_range)
    if not 0 < w_lo < w_hi:
        raise ContractError(f"invalid frequency window {omega_range}")
    if direction not in ("up", "down"):
        raise ContractError("direction must be 'up' or 'down'")
    beta = model.forcing.beta if beta is None else float(beta)
    cfg = config
    hs = system if isinstance(system, HbSystem) else HbSystem(model, hb_config, extra)
    sgn = 1.0 if direction == "up" else -1.0
    w_start, w_end = (w_lo, w_hi) if sgn > 0 else (w_hi, w_lo)

    z0, it0 = _start_solution(hs, w_start, beta, cfg.tol)
    s_z = max(np.linalg.norm(z0), 1e-300)
    tr = _Tracer(hs, beta, cfg, w_hi - w_lo, s_z)
    x = np.concatenate([z0, [w_start]])
    points = [_make_point(hs, model, x, beta, it0)]
    t = tr.tangent(x, sgn)
    ds = cfg.ds0
    complete, message = True, ""
    prev_x = None
    while True:
        if len(points) >= cfg.max_points:
            complete, message = False, f"point budget ({cfg.max_points}) exhausted at omega={x[-1]:.6g}"
            break
        y = tr.y(x)
        x_pred = x + ds * np.concatenate([t[:-1] * tr.s_z, [t[-1] * tr.s_w]])
        xn, it = tr.correct(x_pred, t, y + ds * t)
        ok = xn is not None
        if ok:
            sec = tr.y(xn) - y
            nrm = np.linalg.norm(sec)
            ok = nrm > 0 and (sec / nrm) @ t >= cfg.min_cos
        if not ok:
            ds *= 0.5
            if ds < cfg.ds_min:
                complete = False
                message = (f"step size underflow (ds < {cfg.ds_min:g}) at omega={x[-1]:.6g}; "
                           "branch is partial")
                log.warning(message)
                break
            continue
        if sgn * (xn[-1] - w_end) >= 0:
            # overshoot: land exactly on the window edge
            try:
                xe = tr.fixed_omega(x + (w_end - x[-1]) / (xn[-1] - x[-1]) * (xn - x), w_end)
            except ConvergenceError:
                xe = None
            if xe is not None:
                points.append(_make_point(hs, model, xe, beta, it, ds))
            else:
                points.append(_make_point(hs, model, xn, beta, it, ds))
            break
        if sgn * (xn[-1] - w_start) < 0 and len(points) > 3:
            complete = False
            message = f"branch turned back out of the window at omega={xn[-1]:.6g}"
            points.append(_make_point(hs, model, xn, beta, it, ds))
            break
        points.append(_make_point(hs, model, xn, beta, it, ds))
        prev_x, x = x, xn
        nz = np.linalg.norm(x[:-1])
        if nz > tr.s_z:
            tr.s_z = nz
        # secant predictor direction
        sec = tr.y(x) - tr.y(prev_x)
        t = sec / np.linalg.norm(sec)
        if it <= cfg.fast_iters:
            ds = min(ds * cfg.grow, cfg.ds_max)
    branch = FrfBranch(points, beta, (w_lo, w_hi), complete, message, (tr.s_z, tr.s_w), hs.H,
                       {"n_points_traced": len(points)})
    # verification pass: every point satisfies the HB tolerance
    for p in branch.points:
        r = tr.ratio(np.concatenate([p.sol.Z.ravel(), [p.omega]]))
        if r > 100 * cfg.tol:
            raise ConvergenceError(f"branch point at omega={p.omega:g} fails re-verification ({r:.2e})")
    branch._tracer = tr
    branch._extra = extra
    if stability:
        for p in branch.points:
            p.multipliers = floquet_multipliers(model, p.sol, beta, extra, check=False)
            p.stable = _n_out(p.multipliers) == 0
        if classify:
            classify_bifurcations(branch, model)
    return branch


def _crossing_fn(k):
    def phi(mu):
        return float(np.abs(mu[k]) - 1.0)
    return phi


def classify_bifurcations(branch: FrfBranch, system=None, config: ContinuationConfig | None = None):
    """Refine and label every stability change along the branch.

    Between consecutive points whose counts of multipliers outside the unit
    circle differ, the crossing is located by Illinois regula falsi on the
    k-th largest multiplier modulus along the chord-corrected segment.  The
    refined point is inserted and labelled SN (real multiplier at +1) or NS
    (complex pair).  Intervals where more than one real multiplier or more
    than one pair changes are subdivided and, if still ambiguous, flagged.
    """
    tr = getattr(branch, "_tracer", None)
    if tr is None:
        raise ContractError("branch carries no continuation state; trace it with trace_frf")
    cfg = config or tr.cfg
    model = tr.hs.model
    extra = getattr(branch, "_extra", None)
    beta = branch.beta
    for p in branch.points:
        if p.multipliers is None:
            p.multipliers = floquet_multipliers(model, p.sol, beta, extra, check=False)
            p.stable = _n_out(p.multipliers) == 0

    def x_of(p):
        return np.concatenate([p.sol.Z.ravel(), [p.omega]])

    def mk(x):
        q = _make_point(tr.hs, model, x, beta)
        q.multipliers = floquet_multipliers(model, q.sol, beta, extra, check=False)
        q.stable = _n_out(q.multipliers) == 0
        return q

    out = [branch.points[0]]
    for b in branch.points[1:]:
        a = out[-1]
        na, nb = _n_out(a.multipliers), _n_out(b.multipliers)
        if na == nb:
            out.append(b)
            continue
        segment = _resolve_interval(a, b, tr, cfg, mk, x_of, depth=0)
        out.extend(segment[1:])
    branch.points = out
    return branch


def _resolve_interval(a, b, tr, cfg, mk, x_of, depth):
    """Returns [a, (refined...), b] for an interval with a stability change."""
    na, nb = _n_out(a.multipliers), _n_out(b.multipliers)
    jump = abs(nb - na)
    if jump > 2 and depth < 4:
        xm = tr.chord_point(x_of(a), x_of(b), 0.5)
        if xm is not None:
            m = mk(xm)
            left = _resolve_interval(a, m, tr, cfg, mk, x_of, depth + 1) if _n_out(m.multipliers) != na else [a, m]
            right = _resolve_interval(m, b, tr, cfg, mk, x_of, depth + 1) if _n_out(m.multipliers) != nb else [m, b]
            return left + right[1:]
    if jump > 2:
        b.note = "ambiguous crossing: several multipliers leave the unit circle in one step"
        return [a, b]
    k = min(na, nb)
    phi = _crossing_fn(k)
    xa, xb = x_of(a), x_of(b)
    sa, sb = 0.0, 1.0
    fa, fb = phi(a.multipliers), phi(b.multipliers)
    side = 0
    best = None
    for _ in range(cfg.max_bisect):
        s = (sa * fb - sb * fa) / (fb - fa) if fb != fa else 0.5 * (sa + sb)
        if not (sa < s < sb):
            s = 0.5 * (sa + sb)
        x = tr.chord_point(xa, xb, s)
        if x is None:
            s = 0.5 * (sa + sb)
            x = tr.chord_point(xa, xb, s)
            if x is None:
                break
        q = mk(x)
        f = phi(q.multipliers)
        best = q
        if np.sign(f) == np.sign(fa):
            sa, fa = s, f
            if side == -1:
                fb *= 0.5
            side = -1
        else:
            sb, fb = s, f
            if side == 1:
                fa *= 0.5
            side = 1
        w_a = (1 - sa) * xa[-1] + sa * xb[-1]
        w_b = (1 - sb) * xa[-1] + sb * xb[-1]
        if abs(f) <= cfg.bif_phi_tol and abs(w_b - w_a) <= cfg.bif_omega_rtol * abs(q.omega):
            break
        if sb - sa < 1e-13:
            break
    if best is None:
        b.note = "crossing could not be refined"
        return [a, b]
    mu = best.multipliers
    crossing = mu[k]
    if jump == 2 or abs(crossing.imag) > IMAG_TOL:
        best.bif = "NS" if abs(crossing.imag) > IMAG_TOL else "NONE"
        if best.bif == "NONE":
            best.note = "two real multipliers crossed together"
    elif crossing.real > 0:
        best.bif = "SN"
    else:
        best.bif = "NONE"
        best.note = "real multiplier crossed at -1 (period doubling)"
    return [a, best, b]


def refine_peak(branch: FrfBranch, name: str | None = None, tol: float = 1e-10):
    """Locate the amplitude maximum between the neighbours of the largest
    sampled point by golden-section search on chord-corrected solutions.

    Returns ``(omega, amplitude, solution)``.
    """
    tr = getattr(branch, "_tracer", None)
    name = name or branch.observable_names[0]
    a = branch.amplitudes(name)
    k = int(np.argmax(a))
    best = branch.points[k]
    if tr is None or len(branch.points) < 3 or k in (0, len(branch.points) - 1):
        return best.omega, float(a[k]), best.sol
    model = tr.hs.model
    vec = dict(model.observables)[name] if model.observables else np.eye(model.n)[int(name[3:])]

    def x_of(p):
        return np.concatenate([p.sol.Z.ravel(), [p.omega]])

    pa, pb = branch.points[k - 1], branch.points[k + 1]
    xa, xb = x_of(pa), x_of(pb)
    cache = {}

    def f(s):
        if s not in cache:
            x = tr.chord_point(xa, xb, s)
            if x is None:
                cache[s] = (-np.inf, None)
            else:
                sol = tr.hs.solution(x[:-1], x[-1], branch.beta)
                cache[s] = (sol.amplitude(vec), sol)
        return cache[s][0]

    g = (np.sqrt(5) - 1) / 2
    lo, hi = 0.0, 1.0
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    for _ in range(60):
        if f(c) >= f(d):
            hi = d
        else:
            lo = c
        c, d = hi - g * (hi - lo), lo + g * (hi - lo)
        if hi - lo < tol:
            break
    s = 0.5 * (lo + hi)
    amp = f(s)
    sol = cache[s][1]
    if sol is None or amp < a[k]:
        return best.omega, float(a[k]), best.sol
    return sol.omega, float(amp), sol


def natural_sweep(system, omegas, beta=None, hb_config: HbConfig = HbConfig(), extra=None,
                  reuse: bool | None = None):
    """Warm-started HB solves along a frequency list (no fold following).

    Each start is extrapolated from the two previous solutions.  With
    ``reuse`` the Jacobian factorisation is kept between frequencies (chord
    Newton) and refreshed only when convergence slows; by default this is on
    for sparse systems, where factorising dominates, and off for dense ones.
    Returns the list of FourierSolution, ``None`` where Newton failed.
    """
    hs = system if isinstance(system, HbSystem) else HbSystem(system, hb_config, extra)
    if reuse is None:
        reuse = not hs.dense
    beta = hs.model.forcing.beta if beta is None else beta
    tol = hs.config.tol
    sols = []
    z = None
    hist = []  # last two converged (omega, z), for the secant predictor
    solve = None
    for w in omegas:
        w = float(w)
        if z is None:
            z = hs.linear_guess(w, beta)
            hist = []
        if len(hist) == 2 and hist[1][0] != hist[0][0]:
            (w0, z0), (w1, z1) = hist
            z = z1 + (z1 - z0) * ((w - w1) / (w1 - w0))
        ok = False
        for attempt in range(2 if reuse else 0):
            if solve is None or attempt == 1:
                solve = hs.factor(hs.jacobian(z, w))
            zt = z.copy()
            last = np.inf
            for it in range(hs.config.max_iter):
                r = hs.residual(zt, w, beta)
                ratio = np.linalg.norm(r) / hs.scale(zt, beta)
                if ratio <= tol:
                    ok = True
                    break
                if ratio > 0.5 * last or not np.isfinite(ratio):
                    break
                last = ratio
                zt = zt + solve(-r)
            if ok:
                z = zt
                break
        if not ok:
            # full Newton from the predictor, then from the last converged point
            starts = [z] + ([hist[-1][1]] if hist else [])
            solve = None
            for z_start in starts:
                try:
                    z, _, _ = hs.newton(z_start, w, beta)
                    ok = True
                    break
                except ConvergenceError:
                    pass
            if not ok:
                sols.append(None)
                z = None
                continue
        hist = (hist + [(w, z)])[-2:]
        sols.append(hs.solution(z, w, beta))
    return sols

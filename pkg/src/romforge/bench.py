"""Offline/online timing of POD reduction against full-order HB sweeps.

All timings wrap compute kernels only (no file I/O) and report the median
of ``repeats`` runs.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .continuation import natural_sweep
from .hb import HbConfig
from .pipeline import RunConfig, build_model, make_snapshots, to_rad
from .pod import compute_pod, project


@dataclass
class TimingReport:
    T_FOM: float
    T_snap: float
    T_svd: float
    T_proj: float
    T_online: float
    n: int
    p: int
    H: int
    strategy: str
    n_freq: int
    n_snap: int
    meta: dict = field(default_factory=dict)

    @property
    def T_offline(self) -> float:
        return self.T_snap + self.T_svd + self.T_proj

    @property
    def speedup_online(self) -> float:
        return self.T_FOM / self.T_online

    @property
    def speedup_total(self) -> float:
        return self.T_FOM / (self.T_online + self.T_offline)

    def row(self) -> dict:
        return {"n": self.n, "p": self.p, "H": self.H, "strategy": self.strategy,
                "n_freq": self.n_freq, "n_snap": self.n_snap, "T_FOM": self.T_FOM,
                "T_snap": self.T_snap, "T_offline": self.T_offline, "T_online": self.T_online,
                "T_FOM/T_online": self.speedup_online,
                "T_FOM/(T_online+T_offline)": self.speedup_total}


def _median_time(fn, repeats: int):
    times, out = [], None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out, times


def _sweep_chunk(args):
    system, omegas, beta, H = args
    return natural_sweep(system, omegas, beta, HbConfig(H=H))


def parallel_sweep(system, omegas, beta, H: int, workers: int | None = None):
    """Frequency grid split into contiguous chunks swept in separate processes."""
    workers = workers or min(len(omegas), os.cpu_count() or 1)
    chunks = [c for c in np.array_split(np.asarray(omegas), workers) if c.size]
    with ProcessPoolExecutor(len(chunks)) as ex:
        parts = list(ex.map(_sweep_chunk, [(system, c, beta, H) for c in chunks]))
    return [s for part in parts for s in part]


def run_benchmark(config: RunConfig, n_freq: int = 1000, repeats: int = 3, fom_repeats: int | None = None,
                  parallel: bool = False, model=None, T_FOM: float | None = None) -> TimingReport:
    """Time FOM HB over ``n_freq`` frequencies, ROM construction and the ROM sweep.

    ``T_FOM`` may be passed to reuse a full-order timing between reports
    that share the model and grid.
    """
    model = build_model(config.model) if model is None else model
    w0, w1 = to_rad(model, config.omega_min), to_rad(model, config.omega_max)
    grid = np.linspace(w0, w1, int(n_freq))
    beta = config.betas[0]
    hbc = HbConfig(H=config.H)
    fom_repeats = repeats if fom_repeats is None else fom_repeats
    meta = {}
    fom_fail = None
    if T_FOM is None:
        T_FOM, fom_sols, meta["T_FOM_runs"] = _median_time(
            lambda: natural_sweep(model, grid, beta, hbc), fom_repeats)
        fom_fail = sum(s is None for s in fom_sols)
    if parallel:
        meta["T_FOM_parallel"], _, _ = _median_time(
            lambda: parallel_sweep(model, grid, beta, config.H), fom_repeats)

    T_snap, X, meta["T_snap_runs"] = _median_time(lambda: make_snapshots(model, config), repeats)
    T_svd, basis, _ = _median_time(lambda: compute_pod(X.X, config.p), repeats)
    T_proj, rom, _ = _median_time(lambda: project(model, basis), repeats)
    rom.model  # build the reduced evaluator outside the timed online sweep
    T_online, rom_sols, meta["T_online_runs"] = _median_time(
        lambda: natural_sweep(rom, grid, beta, hbc), repeats)
    if parallel:
        meta["T_online_parallel"], _, _ = _median_time(
            lambda: parallel_sweep(rom, grid, beta, config.H), repeats)
    meta["fom_failures"] = fom_fail
    meta["rom_failures"] = sum(s is None for s in rom_sols)
    return TimingReport(T_FOM, T_snap, T_svd, T_proj, T_online, model.n, config.p, config.H,
                        config.strategy, int(n_freq), X.m, meta)


def matched_strategies(config: RunConfig, n_snap: int) -> dict:
    """HB and TM-TR training configs producing ``n_snap`` snapshots each.

    HB: the configured training frequencies with ``n_snap / n_freq`` samples per
    period.  TM-TR: one transient run at the first training frequency with
    ``n_snap`` recorded steps.
    """
    k = len(config.train_omegas)
    if n_snap % k:
        raise ValueError(f"n_snap={n_snap} is not a multiple of the {k} training frequencies")
    spp = config.tm_steps_per_period
    if n_snap % spp:
        raise ValueError(f"n_snap={n_snap} is not a multiple of steps_per_period={spp}")
    hb = replace(config, strategy="HB", samples_per_period=n_snap // k)
    tr = replace(config, strategy="TM-TR", train_omegas=config.train_omegas[:1],
                 tm_periods=n_snap // spp, tm_stride=1)
    return {"HB": hb, "TM-TR": tr}


def format_table(reports) -> str:
    """Plain-text table: one row per report."""
    cols = ["n", "p", "H", "strategy", "n_freq", "n_snap", "T_FOM", "T_snap", "T_offline", "T_online",
            "T_FOM/T_online", "T_FOM/(T_online+T_offline)"]
    rows = [r.row() for r in reports]

    def cell(v):
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    width = {c: max(len(c), *(len(cell(r[c])) for r in rows)) for c in cols}
    lines = [" | ".join(c.rjust(width[c]) for c in cols)]
    lines.append("-+-".join("-" * width[c] for c in cols))
    for r in rows:
        lines.append(" | ".join(cell(r[c]).rjust(width[c]) for c in cols))
    return "\n".join(lines)

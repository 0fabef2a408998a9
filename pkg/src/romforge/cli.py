"""``romforge`` command-line driver.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import (ConfigError, ContractError, ConvergenceError, ElectroRangeError, ModelError,
                     PipelineError)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        return exit_code(exc.cause)
    if isinstance(exc, ConvergenceError):
        return EXIT_SOLVER
    if isinstance(exc, (OSError, EOFError)):
        return EXIT_IO
    if isinstance(exc, (ConfigError, ContractError, ModelError, ElectroRangeError, ValueError, KeyError)):
        return EXIT_CONFIG
    raise exc


def _kv(items) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise ConfigError(f"expected key=value, got {it!r}")
        k, v = it.split("=", 1)
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


def _float_list(text: str) -> list:
    """``a,b,c`` or ``start:stop:count``."""
    if ":" in text:
        a, b, n = text.split(":")
        return list(np.linspace(float(a), float(b), int(n)))
    return [float(v) for v in text.split(",") if v]


def _omega(model, text: str) -> float:
    """Frequency with optional unit suffix: ``1.02rel``, ``0.55rad``, ``87khz``."""
    from .pipeline import to_rad

    for unit in ("khz", "hz", "rel", "rad"):
        if text.endswith(unit):
            return to_rad(model, (float(text[: -len(unit)]), unit))
    return float(text)


# -- commands ----------------------------------------------------------------

def cmd_model_build(a):
    from .pipeline import MODEL_KEYS, build_model, load_config
    from .storage import save_model

    if a.config:
        spec = load_config(a.config).model
    else:
        if not a.kind:
            raise ConfigError("give --config or --kind")
        spec = {"kind": a.kind, **_kv(a.param)}
        extra = set(spec) - MODEL_KEYS[a.kind]
        if extra:
            raise ConfigError(f"unknown {a.kind} parameter(s) {sorted(extra)}; "
                              f"allowed: {sorted(MODEL_KEYS[a.kind] - {'kind'})}")
    m = build_model(spec)
    save_model(a.out, m)
    print(f"model n={m.n} written to {a.out}")


def cmd_eig(a):
    from .modal import solve_eigs
    from .storage import load_model, write_dense

    m = load_model(a.model)
    pairs = solve_eigs(m, a.k)
    tu = float(m.meta.get("time_unit_s", 1e-6 if m.meta.get("kind") in ("beam", "arch") else 1.0))
    print("index,omega_rad_per_time,freq_hz")
    for i, p in enumerate(pairs):
        print(f"{i + 1},{p.omega:.10g},{p.omega / (2 * np.pi * tu):.10g}")
    if a.out:
        write_dense(a.out, np.column_stack([p.shape for p in pairs]))


def cmd_tm(a):
    from .newmark import SweepPlan, simulate, sweep
    from .storage import load_model, write_observables_csv, write_trajectory

    m = load_model(a.model)
    omegas = [_omega(m, w) for w in a.omega.split(",")]
    if len(omegas) == 1:
        w = omegas[0]
        dt = 2 * np.pi / w / a.steps_per_period
        tr = simulate(m, a.periods * a.steps_per_period * dt, dt, stride=a.stride, beta=a.beta, omega=w)
    else:
        d = "down" if omegas[0] > omegas[-1] else "up"
        tr = sweep(m, SweepPlan(tuple(omegas), a.periods, a.steps_per_period, d, True, a.beta, a.stride))
    write_trajectory(a.out, tr)
    if a.csv:
        write_observables_csv(a.csv, tr, m)
        if a.figure:
            from .plotting import plot_history

            Y = tr.observe(m) if m.observables else tr.D
            names = m.observable_names or [f"dof{i}" for i in range(m.n)]
            plot_history(tr.times, Y, names, Path(a.csv).with_suffix(".png"))
    print(f"{tr.n_t} states written to {a.out}")


def cmd_hb(a):
    from .continuation import natural_sweep
    from .hb import HbConfig
    from .storage import load_model, write_fourier_csv

    m = load_model(a.model)
    omegas = [_omega(m, w) for w in a.omega.split(",")] if ":" not in a.omega else _float_list(a.omega)
    sols = natural_sweep(m, omegas, a.beta, HbConfig(H=a.H))
    bad = [w for w, s in zip(omegas, sols) if s is None]
    good = [s for s in sols if s is not None]
    names = m.observable_names or [f"dof{i}" for i in range(m.n)]
    print("omega_rad_per_time," + ",".join(names))
    for s in good:
        amps = s.observable_amplitudes(m)
        print(f"{s.omega:.10g}," + ",".join(f"{amps[k]:.10g}" for k in names))
    if a.out and good:
        write_fourier_csv(a.out, good)
    if bad:
        raise ConvergenceError(f"HB did not converge at omega={bad[0]:g} ({len(bad)} frequencies); "
                               "near folds use 'romforge frf' (continuation)")


def cmd_pod(a):
    from .pod import compute_pod
    from .report import export_spectrum
    from .storage import read_snapshots, write_dense

    X = read_snapshots(a.snapshots)
    b = compute_pod(X.X, a.p)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dense(out / "basis.mtx", b.U)
    export_spectrum(b, out / "spectrum.csv", figure=a.figure)
    print(f"p={b.p} basis written to {out}; first-vector energy {b.sigma[0] ** 2 / np.sum(b.sigma ** 2):.6f}")


def cmd_project(a):
    from .pod import project
    from .storage import load_basis, load_model, save_model

    m = load_model(a.model)
    rom = project(m, load_basis(a.basis))
    save_model(a.out, rom)
    print(f"ROM p={rom.p} (from n={m.n}) written to {a.out}")


def cmd_frf(a):
    from .continuation import trace_frf
    from .hb import HbConfig
    from .report import export_frf
    from .storage import load_model

    m = load_model(a.model)
    w0, w1 = _omega(m, a.omega_min), _omega(m, a.omega_max)
    branches = []
    for b in _float_list(a.beta):
        br = trace_frf(m, (w0, w1), b, hb_config=HbConfig(H=a.H), stability=a.stability)
        if not br.complete:
            logging.getLogger("romforge").warning("beta=%g: %s", b, br.message)
        print(f"beta={b:g}: {len(br)} points, {len(br.bifurcations('SN'))} SN, "
              f"{len(br.bifurcations('NS'))} NS, peak omega={br.peak()[0]:.8g}")
        branches.append(br)
    export_frf(branches, a.out, figure=a.figure)


def cmd_electro_fit(a):
    from .electro import PlateOracle, fit_cubic, sample_manifold, uniform_grid
    from .storage import load_basis, load_model, write_manifold

    m = load_model(a.model)
    basis = load_basis(a.basis)
    oracle = PlateOracle.for_model(m, a.gap_um, a.area_um2)
    grid = uniform_grid(basis, a.active, oracle.dofs, a.extent_um, a.points)
    man = fit_cubic(sample_manifold(oracle, basis, grid, a.active), a.tol)
    write_manifold(a.out, man)
    print("channel,residual,dropped")
    for i, r in enumerate(man.residual):
        print(f"{i + 1},{r:.3e},{int(i in man.dropped)}")


def cmd_bench(a):
    from .bench import format_table, matched_strategies, run_benchmark
    from .pipeline import build_model, load_config

    cfg = load_config(a.config)
    model = build_model(cfg.model)
    reports = [run_benchmark(cfg, a.n_freq, a.repeats, parallel=a.parallel, model=model)]
    if a.compare_offline:
        T_FOM = reports[0].T_FOM
        for name, c in matched_strategies(cfg, a.compare_offline).items():
            reports.append(run_benchmark(c, a.n_freq, a.repeats, model=model, T_FOM=T_FOM))
    print(format_table(reports))
    if a.parallel:
        r = reports[0]
        print(f"parallel sweeps: T_FOM={r.meta['T_FOM_parallel']:.4g} s, "
              f"T_online={r.meta['T_online_parallel']:.4g} s")


def cmd_pipeline(a):
    from .pipeline import load_config, run_pipeline

    cfg = load_config(a.config, out=a.out)
    out = run_pipeline(cfg, from_stage=a.from_stage)
    print(f"artifacts and manifest written to {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="romforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    mp = sub.add_parser("model", help="model utilities")
    msub = mp.add_subparsers(dest="sub", required=True)
    b = msub.add_parser("build", help="build a zoo model and save it")
    b.add_argument("--config", help="TOML run config (its [model] section is used)")
    b.add_argument("--kind", choices=["duffing", "two_dof", "beam", "arch"])
    b.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="model parameter with unit suffix, e.g. q=50 n_elements=36")
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_model_build)

    e = sub.add_parser("eig", help="lowest eigenpairs")
    e.add_argument("--model", required=True)
    e.add_argument("-k", type=int, default=6)
    e.add_argument("--out", help="mode shapes (Matrix Market array)")
    e.set_defaults(fn=cmd_eig)

    t = sub.add_parser("tm", help="Newmark time marching")
    t.add_argument("--model", required=True)
    t.add_argument("--omega", required=True, help="one frequency or a comma list (sweep); suffix rel/rad/hz/khz")
    t.add_argument("--beta", type=float, required=True)
    t.add_argument("--periods", type=int, default=50)
    t.add_argument("--steps-per-period", type=int, default=64)
    t.add_argument("--stride", type=int, default=1)
    t.add_argument("--out", required=True, help="binary trajectory file")
    t.add_argument("--csv", help="observable histories CSV")
    t.add_argument("--no-figure", dest="figure", action="store_false")
    t.set_defaults(fn=cmd_tm)

    h = sub.add_parser("hb", help="harmonic balance at fixed frequencies")
    h.add_argument("--model", required=True)
    h.add_argument("--omega", required=True, help="comma list or start:stop:count (rad)")
    h.add_argument("--beta", type=float, required=True)
    h.add_argument("-H", type=int, default=9)
    h.add_argument("--out", help="Fourier coefficient CSV")
    h.set_defaults(fn=cmd_hb)

    po = sub.add_parser("pod", help="POD basis from a snapshot file")
    po.add_argument("--snapshots", required=True)
    po.add_argument("-p", type=int, required=True)
    po.add_argument("--out", required=True)
    po.add_argument("--no-figure", dest="figure", action="store_false")
    po.set_defaults(fn=cmd_pod)

    pr = sub.add_parser("project", help="Galerkin projection onto a basis")
    pr.add_argument("--model", required=True)
    pr.add_argument("--basis", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(fn=cmd_project)

    f = sub.add_parser("frf", help="FRF by continuation with stability")
    f.add_argument("--model", required=True)
    f.add_argument("--omega-min", required=True)
    f.add_argument("--omega-max", required=True)
    f.add_argument("--beta", required=True, help="comma list")
    f.add_argument("-H", type=int, default=9)
    f.add_argument("--out", required=True)
    f.add_argument("--no-stability", dest="stability", action="store_false")
    f.add_argument("--no-figure", dest="figure", action="store_false")
    f.set_defaults(fn=cmd_frf)

    el = sub.add_parser("electro", help="electrostatic manifold tools")
    esub = el.add_subparsers(dest="sub", required=True)
    ef = esub.add_parser("fit", help="sample the plate oracle and fit cubic polynomials")
    ef.add_argument("--model", required=True, help="full-order model directory")
    ef.add_argument("--basis", required=True)
    ef.add_argument("--gap-um", type=float, required=True)
    ef.add_argument("--area-um2", type=float, default=None)
    ef.add_argument("--extent-um", type=float, required=True, help="span of the largest surface displacement")
    ef.add_argument("--points", type=int, default=23)
    ef.add_argument("--active", type=int, default=0)
    ef.add_argument("--tol", type=float, default=1e-2)
    ef.add_argument("--out", required=True)
    ef.set_defaults(fn=cmd_electro_fit)

    be = sub.add_parser("bench", help="offline/online timing table")
    be.add_argument("--config", required=True)
    be.add_argument("--n-freq", type=int, default=1000)
    be.add_argument("--repeats", type=int, default=3)
    be.add_argument("--parallel", action="store_true", help="also time process-parallel sweeps")
    be.add_argument("--compare-offline", type=int, metavar="N_SNAP",
                    help="add HB and TM-TR training rows with this many snapshots each")
    be.set_defaults(fn=cmd_bench)

    pl = sub.add_parser("pipeline", help="model -> snapshots -> POD -> ROM -> FRF")
    pl.add_argument("--config", required=True)
    pl.add_argument("--out")
    pl.add_argument("--from-stage", default="model",
                    choices=["model", "snapshots", "pod", "rom", "frf"])
    pl.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        a.fn(a)
    except Exception as exc:  # mapped to documented exit codes
        code = exit_code(exc)
        print(f"romforge: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

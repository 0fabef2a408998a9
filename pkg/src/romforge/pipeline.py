"""Declarative runs: model -> snapshots -> POD -> projection -> FRF.

Configuration is TOML.  Dimensional keys carry their unit as a suffix so a
value can never be read in the wrong unit::

    out = "run_duffing"

    [model]
    kind = "duffing"        # duffing | two_dof | beam | arch, or path = "<model dir>"
    omega0_rad = 1.0
    gamma_un = 0.1
    q = 50

    [snapshots]
    strategy = "HB"         # HB | TM-SS | TM-TR
    omega_rel = [0.95, 1.0, 1.05]
    beta_un = 0.01
    samples_per_period = 32

    [rom]
    p = 1

    [frf]
    solver = "hb"           # hb (continuation) | tm (time-marching sweep)
    omega_min_rel = 0.9
    omega_max_rel = 1.2
    beta_un = [0.01]
    h = 9

Frequencies accept ``_rel`` (multiples of the model's reference frequency),
``_rad`` (rad per model time unit), ``_hz`` and ``_khz`` (converted through the
model's time unit, 1 us for beams).  Beam geometry uses ``_um``, Young's
modulus ``_mpa`` and density ``_kg_m3``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .continuation import natural_sweep, trace_frf
from .core import as_model
from .errors import ConfigError, PipelineError
from .hb import HbConfig
from .newmark import NewmarkConfig, SweepPlan, Trajectory, simulate, sweep
from .pod import assemble_snapshots, compute_pod, project
from .storage import (load_model, load_rom, read_snapshots, save_model, sha256_file, write_json,
                      write_snapshots, load_basis, write_dense)
from .zoo import BeamSpec, make_duffing, make_two_dof_1to2, make_vk_beam

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGES = ("model", "snapshots", "pod", "rom", "frf")
STRATEGIES = ("HB", "TM-SS", "TM-TR")
TIME_UNIT_S = {"beam": 1e-6, "arch": 1e-6}
MODEL_KEYS = {
    "duffing": {"kind", "omega0_rad", "gamma_un", "q"},
    "two_dof": {"kind", "omega1_rad", "detuning_un", "gc_un", "q"},
    "beam": {"kind", "length_um", "width_um", "height_um", "n_elements", "young_mpa",
             "density_kg_m3", "q"},
    "arch": {"kind", "length_um", "width_um", "height_um", "n_elements", "young_mpa",
             "density_kg_m3", "rise_um", "q"},
}


@dataclass
class RunConfig:
    """Validated run description (all quantities already in model units).

    Frequencies stay symbolic (value, unit) until the model is built, since
    ``_rel`` and ``_hz`` need the model's reference frequency and time unit.
    """

    model: dict
    strategy: str = "HB"
    train_omegas: tuple = ((1.0, "rel"),)
    train_beta: float = 1.0
    samples_per_period: int = 32
    tm_periods: int = 50
    tm_record_periods: int = 2
    tm_steps_per_period: int = 64
    tm_stride: int = 1
    train_h: int = 9
    p: int = 1
    solver: str = "hb"
    omega_min: tuple = (0.9, "rel")
    omega_max: tuple = (1.1, "rel")
    n_omega: int = 41
    betas: tuple = (1.0,)
    H: int = 9
    stability: bool = True
    tm_cycles: int = 200
    figures: bool = True
    out: Path = Path("romforge_run")
    source: Path | None = None
    raw: dict = field(default_factory=dict)

    @property
    def hb_config(self) -> HbConfig:
        return HbConfig(H=self.H)


def _freq(section: dict, base: str, required=True, default=None):
    hits = [(k, v) for k, v in section.items() if k.startswith(base + "_")
            and k[len(base) + 1:] in ("rel", "rad", "hz", "khz")]
    if len(hits) > 1:
        raise ConfigError(f"'{base}' given in more than one unit: {[k for k, _ in hits]}")
    if not hits:
        if required:
            raise ConfigError(f"missing '{base}_<unit>' (units: rel, rad, hz, khz)")
        return default
    k, v = hits[0]
    unit = k[len(base) + 1:]
    if isinstance(v, list):
        return tuple((float(x), unit) for x in v)
    return float(v), unit


def _pop_keys(section: dict, allowed: set, where: str):
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in [{where}]: {sorted(extra)}")


def _freq_keys(base):
    return {f"{base}_{u}" for u in ("rel", "rad", "hz", "khz")}


def parse_config(data: dict, source: Path | None = None, out: str | Path | None = None) -> RunConfig:
    """Validate a parsed TOML document into a :class:`RunConfig`."""
    data = dict(data)
    _pop_keys(data, {"out", "model", "snapshots", "rom", "frf"}, "top level")
    for sec in ("model", "snapshots", "rom", "frf"):
        if sec not in data:
            raise ConfigError(f"missing [{sec}] section")
    base = source.parent if source is not None else Path.cwd()

    model = dict(data["model"])
    if "path" in model:
        p = Path(model["path"])
        p = p if p.is_absolute() else base / p
        if not (p / "meta.json").exists():
            raise ConfigError(f"model path {p} does not exist or is not a model directory")
        model["path"] = str(p)
        _pop_keys(model, {"path"}, "model")
    else:
        kind = model.get("kind")
        allowed = MODEL_KEYS
        if kind not in allowed:
            raise ConfigError(f"[model] kind must be one of {sorted(allowed)} (or give path), got {kind!r}")
        _pop_keys(model, allowed[kind], "model")
        if kind == "arch" and "rise_um" not in model:
            raise ConfigError("arch model needs rise_um")

    snap = dict(data["snapshots"])
    strategy = snap.get("strategy", "HB")
    if strategy not in STRATEGIES:
        raise ConfigError(f"snapshot strategy must be one of {STRATEGIES}, got {strategy!r}")
    common = {"strategy", "beta_un"} | _freq_keys("omega")
    need = {"HB": {"samples_per_period", "h"},
            "TM-SS": {"periods", "record_periods", "steps_per_period"},
            "TM-TR": {"periods", "steps_per_period", "stride"}}[strategy]
    _pop_keys(snap, common | need, "snapshots")
    missing = {"beta_un"} - set(snap)
    if strategy == "TM-TR":
        missing |= {"periods"} - set(snap)
    if missing:
        raise ConfigError(f"[snapshots] strategy {strategy} needs {sorted(missing)}")
    train = _freq(snap, "omega")
    train = train if isinstance(train[0], tuple) else (train,)
    if strategy == "TM-TR" and len(train) != 1:
        raise ConfigError("TM-TR training uses exactly one frequency")

    rom = dict(data["rom"])
    _pop_keys(rom, {"p"}, "rom")
    if "p" not in rom or int(rom["p"]) < 1:
        raise ConfigError("[rom] needs a positive integer p")

    frf = dict(data["frf"])
    _pop_keys(frf, {"solver", "beta_un", "h", "n_omega", "stability", "cycles", "figures"}
              | _freq_keys("omega_min") | _freq_keys("omega_max"), "frf")
    solver = frf.get("solver", "hb")
    if solver not in ("hb", "tm"):
        raise ConfigError(f"[frf] solver must be 'hb' or 'tm', got {solver!r}")
    if "beta_un" not in frf:
        raise ConfigError("[frf] needs beta_un")
    betas = frf["beta_un"]
    betas = tuple(float(b) for b in (betas if isinstance(betas, list) else [betas]))

    out_dir = Path(out if out is not None else data.get("out", "romforge_run"))
    if not out_dir.is_absolute() and out is None:
        out_dir = base / out_dir

    cfg = RunConfig(
        model=model, strategy=strategy, train_omegas=train, train_beta=float(snap["beta_un"]),
        samples_per_period=int(snap.get("samples_per_period", 32)),
        tm_periods=int(snap.get("periods", 50)), tm_record_periods=int(snap.get("record_periods", 2)),
        tm_steps_per_period=int(snap.get("steps_per_period", 64)), tm_stride=int(snap.get("stride", 1)),
        train_h=int(snap.get("h", frf.get("h", 9))), p=int(rom["p"]), solver=solver,
        omega_min=_freq(frf, "omega_min"), omega_max=_freq(frf, "omega_max"),
        n_omega=int(frf.get("n_omega", 41)), betas=betas, H=int(frf.get("h", 9)),
        stability=bool(frf.get("stability", True)), tm_cycles=int(frf.get("cycles", 200)),
        figures=bool(frf.get("figures", True)), out=out_dir, source=source, raw=data)
    if cfg.tm_record_periods > cfg.tm_periods:
        raise ConfigError("record_periods exceeds periods")
    return cfg


def load_config(path, out=None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, path.resolve(), out)


# ---------------------------------------------------------------------------

def build_model(spec: dict):
    """FOM from a ``[model]`` section."""
    if "path" in spec:
        return load_model(spec["path"])
    kind = spec["kind"]
    Q = float(spec.get("q", 50.0))
    if kind == "duffing":
        return make_duffing(float(spec.get("omega0_rad", 1.0)), float(spec.get("gamma_un", 0.1)), Q)
    if kind == "two_dof":
        return make_two_dof_1to2(float(spec.get("omega1_rad", 1.0)), float(spec.get("detuning_un", 0.0)),
                                 float(spec.get("gc_un", 0.5)), Q)
    d = BeamSpec()
    bs = BeamSpec(length=float(spec.get("length_um", d.length)), width=float(spec.get("width_um", d.width)),
                  height=float(spec.get("height_um", d.height)),
                  n_elements=int(spec.get("n_elements", d.n_elements)),
                  young=float(spec.get("young_mpa", d.young)),
                  density=float(spec.get("density_kg_m3", d.density * 1e6)) * 1e-6,
                  rise=float(spec.get("rise_um", 0.0)))
    return make_vk_beam(bs, Q=Q)


def to_rad(model, q) -> float:
    """(value, unit) to rad per model time unit."""
    v, unit = q
    meta = as_model(model).meta
    if unit == "rad":
        return v
    if unit == "rel":
        if "omega_ref" not in meta:
            raise ConfigError("'_rel' frequencies need a model with a reference frequency")
        return v * float(meta["omega_ref"])
    tu = float(meta.get("time_unit_s", TIME_UNIT_S.get(meta.get("kind"), 1.0)))
    hz = v * (1e3 if unit == "khz" else 1.0)
    return 2 * np.pi * hz * tu


def make_snapshots(model, cfg: RunConfig):
    omegas = sorted(to_rad(model, w) for w in cfg.train_omegas)
    beta = cfg.train_beta
    if cfg.strategy == "HB":
        sols = natural_sweep(model, omegas, beta, HbConfig(H=cfg.train_h))
        bad = [w for w, s in zip(omegas, sols) if s is None]
        if bad:
            from .errors import ConvergenceError

            raise ConvergenceError(f"HB training solve failed at omega={bad[0]:g}")
        return assemble_snapshots([(s, cfg.samples_per_period) for s in sols])
    nc = NewmarkConfig()
    if cfg.strategy == "TM-TR":
        w = omegas[0]
        T = 2 * np.pi / w
        n = cfg.tm_periods * cfg.tm_steps_per_period
        dt = T / cfg.tm_steps_per_period
        tr = simulate(model, n * dt, dt, stride=cfg.tm_stride, beta=beta, omega=w, config=nc)
        return assemble_snapshots([(tr, "TM-TR")])
    # TM-SS: march each frequency (state carried, highest first) and keep the last periods
    plan = SweepPlan(tuple(sorted(omegas, reverse=True)), cycles=cfg.tm_periods,
                     steps_per_cycle=cfg.tm_steps_per_period, direction="down", beta=beta)
    tr = sweep(model, plan, nc)
    keep = cfg.tm_record_periods * cfg.tm_steps_per_period
    parts = []
    for s in tr.segments:
        a, b = max(s["stop"] - keep, s["start"]), s["stop"]
        sub = Trajectory(tr.times[a:b], tr.D[:, a:b], tr.V[:, a:b], 1,
                         [{**s, "start": 0, "stop": b - a}])
        parts.append((sub, "TM-SS"))
    return assemble_snapshots(parts)


def tm_frf(rom, omegas, beta, cycles: int, steps_per_cycle: int = 64):
    """Steady amplitudes by a carried downward time-marching sweep.

    Returns ``(omegas, {name: amplitudes})`` (half peak-to-peak of the last cycle).
    """
    model = as_model(rom)
    om = tuple(sorted(omegas, reverse=True))
    plan = SweepPlan(om, cycles=cycles, steps_per_cycle=steps_per_cycle, direction="down", beta=beta)
    tr = sweep(model, plan)
    O = model.observable_matrix if model.observables else np.eye(model.n)
    names = model.observable_names or [f"dof{i}" for i in range(model.n)]
    amps = {k: [] for k in names}
    for s in tr.segments:
        Y = O @ tr.D[:, s["stop"] - steps_per_cycle:s["stop"]]
        for k, y in zip(names, Y):
            amps[k].append(0.5 * (y.max() - y.min()))
    order = np.argsort(om)
    return np.array(om)[order], {k: np.array(v)[order] for k, v in amps.items()}


def _stage_files(out: Path, stage: str) -> list:
    d = out / stage
    return sorted(p for p in d.rglob("*") if p.is_file() and not p.name.startswith("."))


def _command(cfg: RunConfig, stage: str) -> str:
    src = shlex.quote(str(cfg.source)) if cfg.source else "<config.toml>"
    return f"romforge pipeline --config {src} --out {shlex.quote(str(cfg.out))} --from-stage {stage}"


def run_pipeline(cfg: RunConfig | str | Path, from_stage: str = "model") -> Path:
    """Execute every stage, writing products under ``cfg.out``.

    Stages before ``from_stage`` are reloaded from disk.  Returns the output
    directory; ``manifest.json`` there lists each stage's files with SHA-256.
    """
    from .report import export_frf, export_spectrum

    if not isinstance(cfg, RunConfig):
        cfg = load_config(cfg)
    if from_stage not in STAGES:
        raise ConfigError(f"unknown stage {from_stage!r}; stages are {STAGES}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = STAGES.index(from_stage)
    ctx = {}

    def stage(name, fn, load):
        idx = STAGES.index(name)
        try:
            ctx[name] = fn() if idx >= start else load()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, _command(cfg, name), exc) from exc

    def do_model():
        m = build_model(cfg.model)
        save_model(out / "model", m)
        return m

    def do_snapshots():
        X = make_snapshots(ctx["model"], cfg)
        (out / "snapshots").mkdir(exist_ok=True)
        write_snapshots(out / "snapshots" / "snapshots.bin", X)
        return X

    def do_pod():
        b = compute_pod(ctx["snapshots"].X, cfg.p)
        d = out / "pod"
        d.mkdir(exist_ok=True)
        write_dense(d / "basis.mtx", b.U)
        export_spectrum(b, d / "spectrum.csv", figure=cfg.figures)
        return b

    def do_rom():
        r = project(ctx["model"], ctx["pod"])
        save_model(out / "rom", r)
        return r

    def do_frf():
        rom = ctx["rom"]
        w0, w1 = to_rad(rom, cfg.omega_min), to_rad(rom, cfg.omega_max)
        d = out / "frf"
        d.mkdir(exist_ok=True)
        if cfg.solver == "hb":
            branches = [trace_frf(rom, (w0, w1), b, hb_config=cfg.hb_config, stability=cfg.stability)
                        for b in cfg.betas]
            for br in branches:
                if not br.complete:
                    log.warning("beta=%g: %s", br.beta, br.message)
            export_frf(branches, d / "frf.csv", figure=cfg.figures)
            return branches
        from .report import write_table

        grid = np.linspace(w0, w1, cfg.n_omega)
        table = None
        for b in cfg.betas:
            om, amps = tm_frf(rom, grid, b, cfg.tm_cycles)
            t = {"omega_rad_per_time": list(om), "beta": [b] * om.size}
            t.update({k: list(v) for k, v in amps.items()})
            t["stable"], t["bif"] = [1] * om.size, ["NONE"] * om.size
            table = t if table is None else {k: table[k] + t[k] for k in table}
        from .report import _FRF_SCRIPT
        from .storage import atomic_write

        write_table(d / "frf.csv", table)
        with atomic_write(d / "frf_plot.py") as fh:
            fh.write(_FRF_SCRIPT.format(csv="frf.csv"))
        if cfg.figures:
            from .plotting import plot_frf
            from .report import read_table

            plot_frf(read_table(d / "frf.csv"), d / "frf.png")
        return table

    stage("model", do_model, lambda: load_model(out / "model"))
    stage("snapshots", do_snapshots, lambda: read_snapshots(out / "snapshots" / "snapshots.bin"))
    stage("pod", do_pod, lambda: load_basis(out / "pod" / "basis.mtx"))
    stage("rom", do_rom, lambda: load_rom(out / "rom"))
    stage("frf", do_frf, lambda: None)
    write_manifest(cfg, out)
    return out


def config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.raw, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(cfg: RunConfig, out: Path):
    inputs = {}
    if "path" in cfg.model:
        mp = Path(cfg.model["path"])
        inputs = {str(p.relative_to(mp)): sha256_file(p) for p in sorted(mp.iterdir()) if p.is_file()}
    artifacts = []
    for s in STAGES:
        files = {str(p.relative_to(out)): sha256_file(p) for p in _stage_files(out, s)}
        artifacts.append({"stage": s, "files": files})
    write_json(out / "manifest.json", {
        "romforge": __version__,
        "config_sha256": config_digest(cfg),
        "config": cfg.raw,
        "inputs": inputs,
        "artifacts": artifacts,
    })

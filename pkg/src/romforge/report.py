"""Delimited FRF / spectrum exports with companion plot scripts and figures."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .continuation import FrfBranch
from .pod import PodBasis, energy_spectrum
from .storage import atomic_write, fmt

FRF_FIXED = ("omega_rad_per_time", "beta")

_FRF_SCRIPT = '''"""Plot {csv} (stable solid, unstable dotted)."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
with open(path) as fh:
    rows = list(csv.DictReader(fh))
names = [k for k in rows[0] if k not in ("omega_rad_per_time", "beta", "stable", "bif")]
obs = sys.argv[2] if len(sys.argv) > 2 else names[0]
for beta in sorted({{r["beta"] for r in rows}}, key=float):
    sel = [r for r in rows if r["beta"] == beta]
    w = [float(r["omega_rad_per_time"]) for r in sel]
    a = [float(r[obs]) for r in sel]
    st = [r["stable"] == "1" for r in sel]
    line, = plt.plot(w, [x if s else float("nan") for x, s in zip(a, st)], "-", label="beta=" + beta)
    plt.plot(w, [x if not s else float("nan") for x, s in zip(a, st)], ":", color=line.get_color())
plt.xlabel("omega [rad/time]")
plt.ylabel(obs + " amplitude")
plt.legend()
plt.show()
'''

_SPEC_SCRIPT = '''"""Plot the singular value spectrum in {csv}."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
with open(path) as fh:
    rows = list(csv.DictReader(fh))
idx = [int(r["index"]) for r in rows]
plt.semilogy(idx, [float(r["sigma"]) for r in rows], "o-")
plt.xlabel("index")
plt.ylabel("singular value")
plt.show()
'''


def frf_table(branches, names=None) -> dict:
    """Column dict from FRF branches or natural-sweep solution lists.

    ``branches`` items are :class:`FrfBranch` or ``(beta, [FourierSolution], model)``
    triples; sweep points are flagged stable=1 (not assessed) and bif=NONE.
    """
    if isinstance(branches, FrfBranch):
        branches = [branches]
    rows = []
    for br in branches:
        if isinstance(br, FrfBranch):
            names = names or br.observable_names
            for p in br.points:
                rows.append((p.omega, br.beta, [p.amplitudes[k] for k in names],
                             1 if (p.stable is None or p.stable) else 0, p.bif))
        else:
            beta, sols, model = br
            names = names or model.observable_names
            for s in sols:
                if s is None:
                    continue
                amps = s.observable_amplitudes(model)
                rows.append((s.omega, beta, [amps[k] for k in names], 1, "NONE"))
    names = list(names or [])
    table = {"omega_rad_per_time": [], "beta": []}
    for k in names:
        table[k] = []
    table["stable"], table["bif"] = [], []
    for w, b, amps, st, bif in rows:
        table["omega_rad_per_time"].append(w)
        table["beta"].append(b)
        for k, a in zip(names, amps):
            table[k].append(a)
        table["stable"].append(st)
        table["bif"].append(bif)
    return table


def write_table(path, table: dict):
    keys = list(table)
    nrow = len(table[keys[0]]) if keys else 0
    with atomic_write(path) as fh:
        fh.write(",".join(keys) + "\n")
        for i in range(nrow):
            cells = []
            for k in keys:
                v = table[k][i]
                cells.append(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer))
                                                           else fmt(v)))
            fh.write(",".join(cells) + "\n")


def read_table(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    out = {}
    for k in rows[0]:
        vals = [r[k] for r in rows]
        try:
            out[k] = np.array([float(v) for v in vals])
        except ValueError:
            out[k] = np.array(vals)
    return out


def export_frf(branches, path, names=None, figure: bool = True) -> list:
    """Write ``path`` (CSV), a plot script beside it and, optionally, a PNG.

    Returns the written paths.
    """
    path = Path(path)
    table = frf_table(branches, names)
    write_table(path, table)
    script = path.with_name(path.stem + "_plot.py")
    with atomic_write(script) as fh:
        fh.write(_FRF_SCRIPT.format(csv=path.name))
    out = [path, script]
    if figure and table["omega_rad_per_time"]:
        from .plotting import plot_frf

        out.append(plot_frf(read_table(path), path.with_suffix(".png")))
    return out


def export_spectrum(basis_or_sigma, path, figure: bool = True) -> list:
    """``index, sigma, rel_energy, cum_energy`` CSV, plot script and PNG."""
    path = Path(path)
    sigma = basis_or_sigma.sigma if isinstance(basis_or_sigma, PodBasis) else np.asarray(basis_or_sigma)
    rel = energy_spectrum(sigma)
    table = {"index": list(range(1, sigma.size + 1)), "sigma": list(sigma), "rel_energy": list(rel),
             "cum_energy": list(np.cumsum(rel))}
    write_table(path, table)
    script = path.with_name(path.stem + "_plot.py")
    with atomic_write(script) as fh:
        fh.write(_SPEC_SCRIPT.format(csv=path.name))
    out = [path, script]
    if figure and sigma.size:
        from .plotting import plot_spectrum

        out.append(plot_spectrum(read_table(path), path.with_suffix(".png")))
    return out

"""Figures rendered to PNG next to the CSV files they illustrate.

The Agg backend is forced so figures render without a display, and PNG
metadata is stripped so reruns produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .storage import atomic_write  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    with atomic_write(path, "wb") as fh:
        fig.savefig(fh, format="png", dpi=110, metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_frf(table: dict, path, observable: str | None = None, title: str | None = None):
    """FRF curves from a column dict (as written by ``export_frf``).

    Stable points are drawn solid, unstable points dotted, bifurcations marked.
    """
    omega = np.asarray(table["omega_rad_per_time"])
    names = [k for k in table if k not in ("omega_rad_per_time", "beta", "stable", "bif")]
    name = observable or names[0]
    amp = np.asarray(table[name])
    stable = np.asarray(table["stable"]).astype(int)
    beta = np.asarray(table["beta"])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for b in np.unique(beta):
        sel = np.flatnonzero(beta == b)
        w, a, s = omega[sel], amp[sel], stable[sel]
        line, = ax.plot(w, np.where(s != 0, a, np.nan), "-", lw=1.4, label=f"beta={b:g}")
        ax.plot(w, np.where(s == 0, a, np.nan), ":", lw=1.4, color=line.get_color())
        bif = np.asarray(table["bif"])[sel]
        for lab, mk in (("SN", "o"), ("NS", "s")):
            k = bif == lab
            if np.any(k):
                ax.plot(w[k], a[k], mk, ms=5, mfc="none", color="k")
    ax.set_xlabel("omega [rad/time]")
    ax.set_ylabel(f"{name} amplitude")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_spectrum(table: dict, path, title: str | None = None):
    """Singular values and cumulative energy on a log scale."""
    idx = np.asarray(table["index"])
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.0, 3.5))
    a1.semilogy(idx, np.maximum(np.asarray(table["sigma"]), 1e-300), "o-", ms=3)
    a1.set_xlabel("index")
    a1.set_ylabel("singular value")
    miss = np.maximum(1.0 - np.asarray(table["cum_energy"]), 1e-17)
    a2.semilogy(idx, miss, "o-", ms=3)
    a2.set_xlabel("retained vectors")
    a2.set_ylabel("1 - cumulative energy")
    for a in (a1, a2):
        a.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_history(times, values, names, path, title: str | None = None):
    """Time histories, one line per observable."""
    values = np.atleast_2d(values)
    fig, ax = plt.subplots(figsize=(7.0, 3.5))
    for name, y in zip(names, values):
        ax.plot(times, y, lw=0.8, label=name)
    ax.set_xlabel("time")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, path)

"""On-disk formats.

* matrices: Matrix Market coordinate files (``.mtx``), dense arrays in
  Matrix Market array format;
* tensors: plain text, header ``CUBIC n nnz`` / ``QUARTIC n nnz`` followed by
  ``i j k [l] value`` lines;
* models: a directory with ``M.mtx C.mtx K.mtx G.txt H.txt F0.txt
  observables.txt meta.json``;
* trajectories: little-endian binary, header + segment table + column-major
  float64 blocks;
* CSV: 17 significant digits.

Every write goes to a temporary file in the target directory and is renamed
into place.
"""

from __future__ import annotations

import contextlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import scipy.io as sio
import scipy.sparse as sp

from .core import CubicTensor, ForcingSpec, FullOrderModel, QuarticTensor, SparseMatrixSym
from .errors import ContractError
from .hb import FourierSolution
from .newmark import State, Trajectory

FMT = "%.17g"
TRAJ_MAGIC = b"RFTRAJ01"


@contextlib.contextmanager
def atomic_write(path, mode: str = "w"):
    """Write to a sibling temporary file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def fmt(x) -> str:
    return FMT % x


# -- matrices ----------------------------------------------------------------

def write_matrix(path, A):
    """SparseMatrixSym, scipy sparse or dense array to Matrix Market."""
    buf = io.BytesIO()
    if isinstance(A, SparseMatrixSym):
        S = sp.coo_matrix((A.values, (A.rows, A.cols)), shape=(A.n, A.n))
        if A.symmetric:
            # Matrix Market symmetric storage is lower triangle
            S = S.T.tocoo()
        sio.mmwrite(buf, S, symmetry="symmetric" if A.symmetric else "general", precision=17)
    elif sp.issparse(A):
        sio.mmwrite(buf, sp.coo_matrix(A), precision=17)
    else:
        sio.mmwrite(buf, np.atleast_2d(np.asarray(A, dtype=float)), precision=17)
    with atomic_write(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_matrix(path, sparse_sym: bool = True):
    M = sio.mmread(str(path))
    if sp.issparse(M):
        return SparseMatrixSym.from_scipy(M) if sparse_sym else M
    return np.asarray(M, dtype=float)


def write_dense(path, A):
    A = np.asarray(A, dtype=float)
    write_matrix(path, A.reshape(A.shape[0], -1) if A.ndim > 1 else A[:, None])


def read_dense(path) -> np.ndarray:
    A = sio.mmread(str(path))
    return np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)


# -- tensors -----------------------------------------------------------------

def write_tensor(path, T):
    lines = [f"{T.label} {T.n} {T.nnz}"]
    for idx, v in zip(T.index, T.value):
        lines.append(" ".join(str(int(i)) for i in idx) + " " + fmt(v))
    with atomic_write(path) as fh:
        fh.write("\n".join(lines) + "\n")


def read_tensor(path):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 3 or head[0] not in ("CUBIC", "QUARTIC"):
            raise ContractError(f"{path}: bad tensor header {' '.join(head)!r}")
        cls = CubicTensor if head[0] == "CUBIC" else QuarticTensor
        n, nnz = int(head[1]), int(head[2])
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, cls.order + 1))
    if data.shape[0] != nnz:
        raise ContractError(f"{path}: header announces {nnz} entries, found {data.shape[0]}")
    return cls(n, data[:, : cls.order].astype(np.int64), data[:, cls.order])


# -- models ------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def write_json(path, obj):
    with atomic_write(path) as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_model(directory, system, basis=None):
    """Write a full-order model, or a ROM (its reduced model plus basis)."""
    from .pod import PodBasis, ReducedOrderModel

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if isinstance(system, ReducedOrderModel):
        basis = system.basis if basis is None else basis
        model = system.model
    else:
        model = system
    write_matrix(d / "M.mtx", model.M)
    write_matrix(d / "C.mtx", model.C)
    write_matrix(d / "K.mtx", model.K)
    write_tensor(d / "G.txt", model.G)
    write_tensor(d / "H.txt", model.H)
    with atomic_write(d / "F0.txt") as fh:
        fh.write("\n".join(fmt(v) for v in model.forcing.F0) + "\n")
    with atomic_write(d / "observables.txt") as fh:
        for name, vec in model.observables:
            fh.write(name + " " + " ".join(fmt(v) for v in vec) + "\n")
    f = model.forcing
    meta = dict(model.meta)
    meta["forcing"] = {"beta": f.beta, "omega": f.omega, "phase": f.phase}
    meta["n"] = model.n
    write_json(d / "meta.json", meta)
    if basis is not None and isinstance(basis, PodBasis):
        write_dense(d / "basis.mtx", basis.U)
        export_sigma(d / "sigma.csv", basis)


def load_model(directory) -> FullOrderModel:
    d = Path(directory)
    if not (d / "meta.json").exists():
        raise FileNotFoundError(f"{d} is not a model directory (meta.json missing)")
    meta = json.loads((d / "meta.json").read_text())
    fo = meta.pop("forcing", {})
    meta.pop("n", None)
    F0 = np.atleast_1d(np.loadtxt(d / "F0.txt", ndmin=1))
    obs = []
    txt = (d / "observables.txt").read_text().strip()
    for line in txt.splitlines() if txt else []:
        parts = line.split()
        obs.append((parts[0], np.array([float(v) for v in parts[1:]])))
    forcing = ForcingSpec(F0, fo.get("beta", 1.0), fo.get("omega", 1.0), fo.get("phase", 0.0))
    return FullOrderModel(read_matrix(d / "M.mtx"), read_matrix(d / "C.mtx"), read_matrix(d / "K.mtx"),
                          read_tensor(d / "G.txt"), read_tensor(d / "H.txt"), forcing, tuple(obs), meta)


def load_rom(directory):
    """ROM directory back to a :class:`ReducedOrderModel` (basis optional)."""
    from .pod import ReducedOrderModel

    d = Path(directory)
    m = load_model(d)
    basis = load_basis(d) if (d / "basis.mtx").exists() else None
    return ReducedOrderModel(m.M.toarray(), m.C.toarray(), m.K.toarray(), m.G.to_dense(),
                             m.H.to_dense(), np.array(m.forcing.F0), basis, m.forcing,
                             m.observables, m.meta)


def load_basis(path):
    from .pod import PodBasis

    path = Path(path)
    if path.is_dir():
        path = path / "basis.mtx"
    U = read_dense(path)
    sigma = np.zeros(0)
    for name in ("sigma.csv", "spectrum.csv"):
        sig_path = path.with_name(name)
        if sig_path.exists():
            sigma = np.loadtxt(sig_path, delimiter=",", skiprows=1, usecols=1, ndmin=1)
            break
    return PodBasis(U, sigma, float(np.sum(sigma ** 2)))


def export_sigma(path, basis):
    from .pod import energy_spectrum

    rel = energy_spectrum(basis) if basis.sigma.size else np.zeros(0)
    cum = np.cumsum(rel)
    with atomic_write(path) as fh:
        fh.write("index,sigma,rel_energy,cum_energy\n")
        for k, (s, r, c) in enumerate(zip(basis.sigma, rel, cum)):
            fh.write(f"{k + 1},{fmt(s)},{fmt(r)},{fmt(c)}\n")


# -- trajectories ------------------------------------------------------------

def write_trajectory(path, traj: Trajectory):
    """Binary layout (little endian):

    magic[8] | n, n_t, stride, n_seg (int64) | n_seg x (omega, beta, start, stop, t0) float64
    | times[n_t] | D (n x n_t, column-major) | V (same)
    """
    segs = traj.segments
    head = TRAJ_MAGIC + struct.pack("<4q", traj.n, traj.n_t, traj.stride, len(segs))
    table = np.array([[s.get("omega", np.nan), s.get("beta", np.nan), s.get("start", 0),
                       s.get("stop", 0), s.get("t0", 0.0)] for s in segs], dtype="<f8").reshape(-1, 5)
    with atomic_write(path, "wb") as fh:
        fh.write(head)
        fh.write(table.tobytes())
        fh.write(np.asarray(traj.times, dtype="<f8").tobytes())
        fh.write(np.asfortranarray(traj.D, dtype="<f8").tobytes(order="F"))
        fh.write(np.asfortranarray(traj.V, dtype="<f8").tobytes(order="F"))


def read_trajectory(path) -> Trajectory:
    raw = Path(path).read_bytes()
    if raw[:8] != TRAJ_MAGIC:
        raise ContractError(f"{path}: not a trajectory file")
    n, n_t, stride, n_seg = struct.unpack("<4q", raw[8:40])
    off = 40
    table = np.frombuffer(raw, "<f8", n_seg * 5, off).reshape(n_seg, 5)
    off += n_seg * 40
    times = np.frombuffer(raw, "<f8", n_t, off).copy()
    off += n_t * 8
    D = np.frombuffer(raw, "<f8", n * n_t, off).reshape((n, n_t), order="F").copy()
    off += n * n_t * 8
    V = np.frombuffer(raw, "<f8", n * n_t, off).reshape((n, n_t), order="F").copy()
    segs = [{"omega": float(r[0]), "beta": float(r[1]), "start": int(r[2]), "stop": int(r[3]),
             "t0": float(r[4])} for r in table]
    return Trajectory(times, D, V, int(stride), segs, None)


def write_observables_csv(path, traj: Trajectory, system):
    from .core import as_model

    model = as_model(system)
    names = model.observable_names or [f"dof{i}" for i in range(model.n)]
    Y = traj.observe(model) if model.observables else traj.D
    with atomic_write(path) as fh:
        fh.write("time," + ",".join(names) + "\n")
        for k in range(traj.n_t):
            fh.write(fmt(traj.times[k]) + "," + ",".join(fmt(v) for v in Y[:, k]) + "\n")


def write_snapshots(path, X):
    """Snapshot matrices share the trajectory layout; provenance rides in the
    segment table (omega, beta, start, stop) with the source tag encoded in t0."""
    from .pod import SOURCES

    segs = [{"omega": p["omega"], "beta": p["beta"], "start": p["start"], "stop": p["stop"],
             "t0": float(SOURCES.index(p["source"]))} for p in X.provenance]
    traj = Trajectory(np.arange(X.m, dtype=float), X.X, np.zeros_like(X.X), 1, segs)
    write_trajectory(path, traj)


def read_snapshots(path):
    from .pod import SOURCES, SnapshotMatrix

    tr = read_trajectory(path)
    prov = []
    for s in tr.segments:
        k = int(s["t0"])
        src = SOURCES[k] if 0 <= k < len(SOURCES) and float(k) == s["t0"] else "TM"
        prov.append({"source": src, "omega": s["omega"], "beta": s["beta"], "start": s["start"],
                     "stop": s["stop"]})
    if not prov:
        prov = [{"source": "TM", "omega": float("nan"), "beta": float("nan"), "start": 0, "stop": tr.n_t}]
    return SnapshotMatrix(tr.D, prov)


# -- Fourier solutions --------------------------------------------------------

def write_fourier_csv(path, sols):
    """CSV blocks ``harmonic, dof, a, b`` preceded by ``# omega=... beta=... H=...``.

    Harmonic 0 carries the mean in column ``a`` (``b`` = 0).
    """
    if isinstance(sols, FourierSolution):
        sols = [sols]
    with atomic_write(path) as fh:
        for s in sols:
            beta = "nan" if s.beta is None else fmt(s.beta)
            fh.write(f"# omega={fmt(s.omega)} beta={beta} H={s.H}\n")
            fh.write("harmonic,dof,a,b\n")
            for i in range(s.n):
                fh.write(f"0,{i},{fmt(s.c0[i])},0\n")
            for h in range(s.H):
                for i in range(s.n):
                    fh.write(f"{h + 1},{i},{fmt(s.a[i, h])},{fmt(s.b[i, h])}\n")


def read_fourier_csv(path) -> list:
    out = []
    cur = None
    rows = []

    def flush():
        if cur is None:
            return
        omega, beta, H = cur
        n = 1 + max(int(r[1]) for r in rows)
        c0 = np.zeros(n)
        a = np.zeros((n, H))
        b = np.zeros((n, H))
        for h, i, av, bv in rows:
            h, i = int(h), int(i)
            if h == 0:
                c0[i] = av
            else:
                a[i, h - 1], b[i, h - 1] = av, bv
        out.append(FourierSolution(omega, c0, a, b, None if np.isnan(beta) else beta))

    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            flush()
            kv = dict(tok.split("=") for tok in line[1:].split())
            cur = (float(kv["omega"]), float(kv["beta"]), int(kv["H"]))
            rows = []
        elif line.startswith("harmonic") or not line.strip():
            continue
        else:
            h, i, av, bv = line.split(",")
            rows.append((int(h), int(i), float(av), float(bv)))
    flush()
    return out


def sha256_file(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- electrostatic manifolds --------------------------------------------------

def write_manifold(directory, manifold):
    """``samples.csv`` (q, f_1 .. f_p per V^2) and ``coefficients.csv``
    (channel, a0..a3 per unit eps0, residual, dropped) plus ``manifold.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p = manifold.p
    with atomic_write(d / "samples.csv") as fh:
        fh.write("q," + ",".join(f"f{i + 1}_per_V2" for i in range(p)) + "\n")
        for k, q in enumerate(manifold.grid):
            fh.write(fmt(q) + "," + ",".join(fmt(v) for v in manifold.samples[:, k]) + "\n")
    if manifold.alpha is not None:
        with atomic_write(d / "coefficients.csv") as fh:
            fh.write("channel,a0,a1,a2,a3,residual,dropped\n")
            for i in range(p):
                a = manifold.alpha[i]
                fh.write(f"{i + 1}," + ",".join(fmt(v) for v in a)
                         + f",{fmt(manifold.residual[i])},{int(i in manifold.dropped)}\n")
    write_json(d / "manifold.json", {"active": manifold.active, "eps0": manifold.eps0,
                                     "p": p, "n_points": int(manifold.grid.size)})


def read_manifold(directory):
    from .electro import ElectroManifold

    d = Path(directory)
    info = json.loads((d / "manifold.json").read_text())
    S = np.loadtxt(d / "samples.csv", delimiter=",", skiprows=1, ndmin=2)
    alpha = residual = None
    dropped = []
    if (d / "coefficients.csv").exists():
        C = np.loadtxt(d / "coefficients.csv", delimiter=",", skiprows=1, ndmin=2)
        alpha, residual = C[:, 1:5], C[:, 5]
        dropped = [int(c) - 1 for c, flag in zip(C[:, 0], C[:, 6]) if flag]
    return ElectroManifold(S[:, 0], S[:, 1:].T.copy(), int(info["active"]), float(info["eps0"]),
                           alpha, residual, dropped)

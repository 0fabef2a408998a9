"""Full-order polynomial structural model.

The discrete equations of motion are

    M D'' + C D' + K D + G(D, D) + H(D, D, D) = beta * F0 * cos(omega t + phase)

with the quadratic and cubic internal forces stored as sparse coefficient
tensors.  Tensors keep their trailing indices in canonical (non-decreasing)
order with the permutation multiplicity folded into the value, so that

    G(D, D)_i    = sum_e  v_e D_j D_k            (j <= k)
    H(D, D, D)_i = sum_e  v_e D_j D_k D_l        (j <= k <= l)

All model data is read-only after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractError, ModelError

# Systems up to this size are evaluated with dense arrays; beyond it the
# sparse coordinate path is used.
DENSE_MAX = 64


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class SparseMatrixSym:
    """Square sparse matrix assembled from (row, col, value) triplets.

    When ``symmetric`` is set only the upper triangle is stored; duplicate
    triplets are summed on assembly.
    """

    def __init__(self, n: int, rows, cols, values, symmetric: bool = True):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ContractError("rows, cols and values must have equal length")
        if rows.size and (min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= n):
            raise ContractError(f"matrix index out of range [0, {n})")
        if symmetric and np.any(rows > cols):
            raise ContractError("symmetric storage accepts upper-triangle entries only")
        key = rows * n + cols
        uniq, inv = np.unique(key, return_inverse=True)
        summed = np.bincount(inv.ravel(), weights=values, minlength=uniq.size)
        self.n = int(n)
        self.symmetric = bool(symmetric)
        self.rows = _frozen(uniq // n, np.int64)
        self.cols = _frozen(uniq % n, np.int64)
        self.values = _frozen(summed)

    @classmethod
    def from_dense(cls, A, symmetric: bool | None = None, rtol: float = 1e-12) -> "SparseMatrixSym":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractError(f"expected a square matrix, got shape {A.shape}")
        scale = max(np.abs(A).max(initial=0.0), np.finfo(float).tiny)
        if symmetric is None:
            symmetric = bool(np.abs(A - A.T).max(initial=0.0) <= rtol * scale)
        if symmetric:
            A = np.triu(0.5 * (A + A.T))
        r, c = np.nonzero(A)
        return cls(A.shape[0], r, c, A[r, c], symmetric=symmetric)

    @classmethod
    def from_scipy(cls, S, symmetric: bool | None = None) -> "SparseMatrixSym":
        S = sp.coo_matrix(S)
        if S.shape[0] != S.shape[1]:
            raise ContractError(f"expected a square matrix, got shape {S.shape}")
        S.sum_duplicates()
        if symmetric is None:
            d = abs(S - S.T)
            scale = max(abs(S).max(), np.finfo(float).tiny)
            symmetric = bool(d.max() <= 1e-12 * scale) if d.nnz else True
        if symmetric:
            S = sp.triu(0.5 * (S + S.T)).tocoo()
        return cls(S.shape[0], S.row, S.col, S.data, symmetric=symmetric)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        A = sp.coo_matrix((self.values, (self.rows, self.cols)), shape=(self.n, self.n))
        if self.symmetric:
            off = self.rows != self.cols
            A = A + sp.coo_matrix(
                (self.values[off], (self.cols[off], self.rows[off])), shape=(self.n, self.n)
            )
        A = A.tocsr()
        A.sort_indices()
        return A

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def scaled(self, factor: float) -> "SparseMatrixSym":
        return SparseMatrixSym(self.n, self.rows, self.cols, factor * self.values, self.symmetric)

    def frobenius(self) -> float:
        return float(spla.norm(self.csr)) if self.nnz else 0.0

    def __matmul__(self, x):
        return self.csr @ x

    def __repr__(self):
        kind = "sym" if self.symmetric else "gen"
        return f"SparseMatrixSym(n={self.n}, nnz={self.nnz}, {kind})"


class _PolyTensor:
    order = 0
    label = ""

    def __init__(self, n: int, index=None, value=None):
        k = self.order
        index = np.zeros((0, k), np.int64) if index is None else np.asarray(index, dtype=np.int64)
        index = index.reshape(-1, k)
        value = np.zeros(0) if value is None else np.asarray(value, dtype=float).ravel()
        if index.shape[0] != value.size:
            raise ContractError("index and value arrays disagree in length")
        if index.size and (index.min() < 0 or index.max() >= n):
            raise ContractError(f"tensor index out of range [0, {n})")
        if index.shape[0]:
            index = np.hstack([index[:, :1], np.sort(index[:, 1:], axis=1)])
            uniq, inv = np.unique(index, axis=0, return_inverse=True)
            value = np.bincount(inv.ravel(), weights=value, minlength=uniq.shape[0])
            keep = value != 0.0
            index, value = uniq[keep], value[keep]
        self.n = int(n)
        self.index = _frozen(index, np.int64)
        self.value = _frozen(value)

    @classmethod
    def from_dense(cls, T):
        """Build from a raw dense tensor in any trailing-index convention."""
        T = np.asarray(T, dtype=float)
        if T.ndim != cls.order or len(set(T.shape)) != 1:
            raise ContractError(f"expected an n^{cls.order} array, got shape {T.shape}")
        nz = np.nonzero(T)
        return cls(T.shape[0], np.stack(nz, axis=1), T[nz])

    @property
    def nnz(self) -> int:
        return int(self.value.size)

    def to_dense(self) -> np.ndarray:
        """Folded dense array: non-zero only at canonical index positions."""
        T = np.zeros((self.n,) * self.order)
        if self.nnz:
            T[tuple(self.index.T)] = self.value
        return T

    def __call__(self, D) -> np.ndarray:
        D = np.asarray(D, dtype=float)
        if D.shape[0] != self.n:
            raise ContractError(f"vector of length {self.n} expected, got {D.shape[0]}")
        prod = self.value.reshape((-1,) + (1,) * (D.ndim - 1)).copy()
        for c in range(1, self.order):
            prod = prod * D[self.index[:, c]]
        out = np.zeros(D.shape)
        np.add.at(out, self.index[:, 0], prod)
        return out

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, nnz={self.nnz})"


class CubicTensor(_PolyTensor):
    """Quadratic-force coefficients G_ijk (three indices, j <= k)."""

    order = 3
    label = "CUBIC"


class QuarticTensor(_PolyTensor):
    """Cubic-force coefficients H_ijkl (four indices, j <= k <= l)."""

    order = 4
    label = "QUARTIC"


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    """Harmonic load ``beta * F0 * cos(omega t + phase)``."""

    F0: np.ndarray
    beta: float = 1.0
    omega: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        F0 = _frozen(self.F0)
        if not np.all(np.isfinite(F0)):
            raise ContractError("forcing vector must be finite")
        object.__setattr__(self, "F0", F0)

    def __call__(self, t, beta=None, omega=None):
        beta = self.beta if beta is None else beta
        omega = self.omega if omega is None else omega
        return beta * self.F0 * np.cos(omega * t + self.phase)


class PolyEvaluator:
    """Vectorised evaluation of the polynomial internal force and its tangent.

    Tangent matrices are represented by their values on a fixed sparsity
    pattern (``rows``, ``cols``), which lets callers evaluate at many states
    at once (shape ``(npat, N)``) and assemble matrices cheaply.  For small
    systems the pattern is the full row-major n x n grid.
    """

    def __init__(self, M: SparseMatrixSym, C: SparseMatrixSym, K: SparseMatrixSym,
                 G: CubicTensor, H: QuarticTensor, dense: bool | None = None):
        n = K.n
        self.n = n
        self.dense = n <= DENSE_MAX if dense is None else dense
        self.has_nl = bool(G.nnz or H.nnz)
        if self.dense:
            self._init_dense(M, C, K, G, H)
        else:
            self._init_sparse(M, C, K, G, H)

    def _init_dense(self, M, C, K, G, H):
        n = self.n
        self.rows = np.repeat(np.arange(n), n)
        self.cols = np.tile(np.arange(n), n)
        self.Md, self.Cd, self.Kd = M.toarray(), C.toarray(), K.toarray()
        self.M_pat, self.C_pat, self.K_pat = self.Md.ravel(), self.Cd.ravel(), self.Kd.ravel()
        g, h = G.to_dense(), H.to_dense()
        self._has_g, self._has_h = bool(G.nnz), bool(H.nnz)
        self._g2 = g.reshape(n, n * n)
        self._gt = (g + g.transpose(0, 2, 1)).reshape(n * n, n)
        self._h3 = h.reshape(n, n ** 3)
        self._ht = (h + h.transpose(0, 2, 1, 3) + h.transpose(0, 3, 1, 2)).reshape(n * n, n * n)

    def _init_sparse(self, M, C, K, G, H):
        n = self.n
        keys = [M.csr.tocoo(), C.csr.tocoo(), K.csr.tocoo()]
        all_keys = [k.row.astype(np.int64) * n + k.col for k in keys]
        gi, hi = G.index, H.index
        if G.nnz:
            all_keys += [gi[:, 0] * n + gi[:, 1], gi[:, 0] * n + gi[:, 2]]
        if H.nnz:
            all_keys += [hi[:, 0] * n + hi[:, c] for c in (1, 2, 3)]
        pat = np.unique(np.concatenate(all_keys))
        self.rows, self.cols = pat // n, pat % n
        npat = pat.size

        def on_pattern(A):
            A = A.csr.tocoo()
            out = np.zeros(npat)
            out[np.searchsorted(pat, A.row.astype(np.int64) * n + A.col)] = A.data
            return out

        self.M_pat, self.C_pat, self.K_pat = on_pattern(M), on_pattern(C), on_pattern(K)
        self.Kcsr = K.csr
        self._has_g, self._has_h = bool(G.nnz), bool(H.nnz)
        if G.nnz:
            e = np.arange(G.nnz)
            self._g_force = sp.csr_matrix((G.value, (gi[:, 0], e)), shape=(n, G.nnz))
            pos = [np.searchsorted(pat, gi[:, 0] * n + gi[:, c]) for c in (1, 2)]
            self._g_tan = sp.csr_matrix(
                (np.tile(G.value, 2), (np.concatenate(pos), np.arange(2 * G.nnz))),
                shape=(npat, 2 * G.nnz))
            # multiplicand order matches pos: d/dD_j -> D_k, d/dD_k -> D_j
            self._g_mult = np.concatenate([gi[:, 2], gi[:, 1]])
            self._gi = gi
        if H.nnz:
            e = np.arange(H.nnz)
            self._h_force = sp.csr_matrix((H.value, (hi[:, 0], e)), shape=(n, H.nnz))
            pos = [np.searchsorted(pat, hi[:, 0] * n + hi[:, c]) for c in (1, 2, 3)]
            self._h_tan = sp.csr_matrix(
                (np.tile(H.value, 3), (np.concatenate(pos), np.arange(3 * H.nnz))),
                shape=(npat, 3 * H.nnz))
            self._h_mult = (np.concatenate([hi[:, 2], hi[:, 1], hi[:, 1]]),
                            np.concatenate([hi[:, 3], hi[:, 3], hi[:, 2]]))
            self._hi = hi
        # fixed CSC layout: pattern values -> csc data by a single gather
        probe = sp.csc_matrix((np.arange(1, npat + 1, dtype=float), (self.rows, self.cols)),
                              shape=(n, n))
        probe.sort_indices()
        self._csc_perm = probe.data.astype(np.int64) - 1
        self._csc_indices = probe.indices
        self._csc_indptr = probe.indptr

    @property
    def npat(self) -> int:
        return int(self.rows.size)

    def nl_force(self, D) -> np.ndarray:
        """G(D, D) + H(D, D, D) for D of shape (n,) or (n, N)."""
        D = np.asarray(D, dtype=float)
        n = self.n
        if self.dense:
            vec = D.ndim == 1
            X = D[:, None] if vec else D
            out = np.zeros(X.shape)
            if self._has_g or self._has_h:
                DD = (X[:, None, :] * X[None, :, :]).reshape(n * n, -1)
                if self._has_g:
                    out += self._g2 @ DD
                if self._has_h:
                    out += self._h3 @ (DD[:, None, :] * X[None, :, :]).reshape(n ** 3, -1)
            return out[:, 0] if vec else out
        out = np.zeros(D.shape)
        if self._has_g:
            gi = self._gi
            out += self._g_force @ (D[gi[:, 1]] * D[gi[:, 2]])
        if self._has_h:
            hi = self._hi
            out += self._h_force @ (D[hi[:, 1]] * D[hi[:, 2]] * D[hi[:, 3]])
        return out

    def internal_force(self, D) -> np.ndarray:
        D = np.asarray(D, dtype=float)
        lin = self.Kd @ D if self.dense else self.Kcsr @ D
        return lin + self.nl_force(D)

    def nl_tangent(self, D) -> np.ndarray:
        """Pattern values of d(G + H)/dD; shape (npat,) or (npat, N)."""
        D = np.asarray(D, dtype=float)
        n = self.n
        shape = (self.npat,) + D.shape[1:]
        out = np.zeros(shape)
        if self.dense:
            vec = D.ndim == 1
            X = D[:, None] if vec else D
            acc = np.zeros((n * n, X.shape[1]))
            if self._has_g:
                acc += self._gt @ X
            if self._has_h:
                acc += self._ht @ (X[:, None, :] * X[None, :, :]).reshape(n * n, -1)
            return acc[:, 0] if vec else acc
        if self._has_g:
            out += self._g_tan @ D[self._g_mult]
        if self._has_h:
            a, b = self._h_mult
            out += self._h_tan @ (D[a] * D[b])
        return out

    def tangent_values(self, D) -> np.ndarray:
        vals = self.nl_tangent(D)
        return vals + (self.K_pat if vals.ndim == 1 else self.K_pat[:, None])

    def assemble(self, vals):
        """Matrix from pattern values: dense ndarray or CSC sparse."""
        if self.dense:
            return np.asarray(vals).reshape(self.n, self.n)
        return sp.csc_matrix((np.asarray(vals)[self._csc_perm], self._csc_indices,
                              self._csc_indptr), shape=(self.n, self.n))

    def solver(self, vals):
        """Factorise the matrix with the given pattern values; returns a solve callable."""
        A = self.assemble(vals)
        if self.dense:
            lu = sla.lu_factor(A, check_finite=False)
            return lambda b: sla.lu_solve(lu, b, check_finite=False)
        return spla.splu(A).solve


@dataclass(frozen=True, eq=False)
class FullOrderModel:
    """Discrete polynomial equations of motion (see module docstring)."""

    M: SparseMatrixSym
    C: SparseMatrixSym
    K: SparseMatrixSym
    G: CubicTensor
    H: QuarticTensor
    forcing: ForcingSpec
    observables: tuple = ()
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        n = self.K.n
        for name in ("M", "C", "G", "H"):
            if getattr(self, name).n != n:
                raise ModelError(f"{name} has dimension {getattr(self, name).n}, expected {n}")
        if self.forcing.F0.shape != (n,):
            raise ModelError(f"forcing vector has shape {self.forcing.F0.shape}, expected ({n},)")
        if not self.K.symmetric:
            raise ModelError("stiffness matrix K must be symmetric")
        if not self.M.symmetric:
            raise ModelError("mass matrix M must be symmetric")
        try:
            np.linalg.cholesky(self.M.toarray())
        except np.linalg.LinAlgError as exc:
            raise ModelError("mass matrix is not positive definite") from exc
        obs = []
        for name, vec in self.observables:
            vec = _frozen(vec)
            if vec.shape != (n,):
                raise ModelError(f"observable '{name}' has shape {vec.shape}, expected ({n},)")
            obs.append((str(name), vec))
        object.__setattr__(self, "observables", tuple(obs))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n(self) -> int:
        return self.K.n

    @property
    def model(self) -> "FullOrderModel":
        return self

    @cached_property
    def evaluator(self) -> PolyEvaluator:
        return PolyEvaluator(self.M, self.C, self.K, self.G, self.H)

    @property
    def observable_names(self) -> list[str]:
        return [name for name, _ in self.observables]

    @cached_property
    def observable_matrix(self) -> np.ndarray:
        """Rows are the observable functionals, shape (n_obs, n)."""
        if not self.observables:
            return np.zeros((0, self.n))
        return np.vstack([v for _, v in self.observables])

    def with_forcing(self, forcing: ForcingSpec) -> "FullOrderModel":
        return FullOrderModel(self.M, self.C, self.K, self.G, self.H, forcing,
                              self.observables, self.meta)

    def with_damping(self, C: SparseMatrixSym) -> "FullOrderModel":
        return FullOrderModel(self.M, C, self.K, self.G, self.H, self.forcing,
                              self.observables, self.meta)


def as_model(system) -> FullOrderModel:
    """Accept a FullOrderModel or anything exposing one as ``.model`` (ROMs)."""
    model = getattr(system, "model", None)
    if not isinstance(model, FullOrderModel):
        raise ContractError(f"expected a FullOrderModel or ReducedOrderModel, got {type(system)}")
    return model


def _check_vec(model, D, name="D"):
    D = np.asarray(D, dtype=float)
    if D.shape != (model.n,):
        raise ContractError(f"{name} must have shape ({model.n},), got {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ContractError(f"{name} must be finite")
    return D


def eval_internal_force(model, D) -> np.ndarray:
    """K D + G(D, D) + H(D, D, D)."""
    model = as_model(model)
    return model.evaluator.internal_force(_check_vec(model, D))


def eval_tangent_stiffness(model, D) -> SparseMatrixSym:
    """Exact Jacobian of :func:`eval_internal_force` at D."""
    model = as_model(model)
    ev = model.evaluator
    vals = ev.tangent_values(_check_vec(model, D))
    A = sp.coo_matrix((vals, (ev.rows, ev.cols)), shape=(model.n, model.n))
    return SparseMatrixSym.from_scipy(A)


def eval_residual(model, D, V, A, t: float, beta: float | None = None,
                  omega: float | None = None) -> np.ndarray:
    """M A + C V + f_int(D) - beta F0 cos(omega t + phase)."""
    model = as_model(model)
    D = _check_vec(model, D)
    V = _check_vec(model, V, "V")
    A = _check_vec(model, A, "A")
    return (model.M @ A + model.C @ V + model.evaluator.internal_force(D)
            - model.forcing(t, beta, omega))


def make_model(M, C, K, G=None, H=None, F0=None, beta=1.0, omega=1.0, phase=0.0,
               observables: Sequence = (), meta: Mapping | None = None) -> FullOrderModel:
    """Convenience constructor accepting dense arrays or SparseMatrixSym."""

    def mat(A):
        if isinstance(A, SparseMatrixSym):
            return A
        if sp.issparse(A):
            return SparseMatrixSym.from_scipy(A)
        return SparseMatrixSym.from_dense(np.atleast_2d(A))

    K = mat(K)
    n = K.n
    G = G if isinstance(G, CubicTensor) else (CubicTensor(n) if G is None else CubicTensor.from_dense(G))
    H = H if isinstance(H, QuarticTensor) else (QuarticTensor(n) if H is None else QuarticTensor.from_dense(H))
    F0 = np.zeros(n) if F0 is None else F0
    return FullOrderModel(mat(M), mat(C), K, G, H, ForcingSpec(F0, beta, omega, phase),
                          tuple(observables), dict(meta or {}))

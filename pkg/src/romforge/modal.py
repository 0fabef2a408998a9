"""Linear modal analysis: generalized eigenproblem K phi = w^2 M phi."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .core import SparseMatrixSym, as_model
from .errors import ContractError, ModelError


@dataclass(frozen=True, eq=False)
class EigenPair:
    omega: float
    shape: np.ndarray

    @property
    def freq(self) -> float:
        """Cyclic frequency, omega / 2 pi."""
        return self.omega / (2 * np.pi)


def _eigh(K, M, k):
    try:
        w2, phi = sla.eigh(K, M, subset_by_index=[0, k - 1])
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"generalized eigenproblem failed (is M positive definite?): {exc}") from exc
    return w2, phi


def solve_eigs(system, k: int) -> list[EigenPair]:
    """The ``k`` lowest-frequency mass-normalised modes, ascending.

    Dense symmetric-definite solver; each mode is signed so that its
    largest-magnitude component is positive.
    """
    model = as_model(system)
    if not 1 <= k <= model.n:
        raise ContractError(f"k must lie in [1, {model.n}], got {k}")
    K, M = model.K.toarray(), model.M.toarray()
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ModelError("mass matrix is not positive definite") from exc
    w2, phi = _eigh(K, M, k)
    pairs = []
    for i in range(k):
        v = phi[:, i]
        j = np.argmax(np.abs(v))
        if v[j] < 0:
            v = -v
        v = v / np.sqrt(v @ M @ v)
        v.setflags(write=False)
        pairs.append(EigenPair(float(np.sqrt(max(w2[i], 0.0))), v))
    return pairs


def rayleigh_damping(system, omega0: float, Q: float) -> SparseMatrixSym:
    """Mass-proportional damping C = (omega0 / Q) M."""
    if not Q > 0:
        raise ContractError(f"quality factor must be positive, got {Q}")
    if not omega0 >= 0:
        raise ContractError(f"reference frequency must be non-negative, got {omega0}")
    return as_model(system).M.scaled(omega0 / Q)


def modal_coordinates(system, pairs: list[EigenPair], D) -> np.ndarray:
    """phi_i^T M D for each pair; D may be (n,) or (n, N)."""
    model = as_model(system)
    Phi = np.column_stack([p.shape for p in pairs])
    return Phi.T @ (model.M @ np.asarray(D, dtype=float))

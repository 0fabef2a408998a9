"""Reduced-order modelling of geometrically nonlinear structures.

Polynomial full-order models, time marching, harmonic balance with
continuation and Floquet stability, POD Galerkin reduction and reduced
electrostatic coupling.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractError, ConvergenceError, ElectroRangeError,  # noqa: E402
                     ModelError, PipelineError, RomforgeError)
from .core import (CubicTensor, ForcingSpec, FullOrderModel, QuarticTensor,  # noqa: E402
                   SparseMatrixSym, eval_internal_force, eval_residual, eval_tangent_stiffness,
                   make_model)
from .zoo import BeamSpec, make_duffing, make_two_dof_1to2, make_vk_beam  # noqa: E402
from .modal import EigenPair, modal_coordinates, rayleigh_damping, solve_eigs  # noqa: E402
from .newmark import (NewmarkConfig, State, SweepPlan, Trajectory, newmark_step,  # noqa: E402
                      simulate, steady_state, sweep)
from .hb import FourierSolution, HbConfig, hb_residual, hb_solve  # noqa: E402
from .continuation import (ContinuationConfig, FrfBranch, classify_bifurcations,  # noqa: E402
                           floquet_multipliers, natural_sweep, refine_peak, trace_frf)
from .pod import (PodBasis, ReducedOrderModel, SnapshotMatrix, assemble_snapshots,  # noqa: E402
                  compute_pod, energy_spectrum, lift, project)
from .electro import (ElectroManifold, PlateOracle, coupled_frf, eval_ef,  # noqa: E402
                      fit_cubic, sample_manifold)

__all__ = [
    "RomforgeError", "ContractError", "ModelError", "ConfigError", "ConvergenceError",
    "ElectroRangeError", "PipelineError",
    "SparseMatrixSym", "CubicTensor", "QuarticTensor", "ForcingSpec", "FullOrderModel",
    "make_model", "eval_internal_force", "eval_tangent_stiffness", "eval_residual",
    "BeamSpec", "make_duffing", "make_two_dof_1to2", "make_vk_beam",
    "EigenPair", "solve_eigs", "rayleigh_damping", "modal_coordinates",
    "NewmarkConfig", "State", "SweepPlan", "Trajectory", "newmark_step", "simulate", "sweep",
    "steady_state",
    "FourierSolution", "HbConfig", "hb_solve", "hb_residual",
    "ContinuationConfig", "FrfBranch", "trace_frf", "classify_bifurcations", "floquet_multipliers",
    "natural_sweep", "refine_peak",
    "SnapshotMatrix", "PodBasis", "ReducedOrderModel", "assemble_snapshots", "compute_pod",
    "energy_spectrum", "project", "lift",
    "PlateOracle", "ElectroManifold", "sample_manifold", "fit_cubic", "eval_ef", "coupled_frf",
]

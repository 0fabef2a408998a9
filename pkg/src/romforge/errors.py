"""Exception hierarchy shared by every romforge module."""

from __future__ import annotations


class RomforgeError(Exception):
    """Base class for all romforge errors."""


class ContractError(RomforgeError, ValueError):
    """An argument violates a documented precondition (shape, range, sign)."""


class ModelError(RomforgeError):
    """A model fails its construction invariants (e.g. non-SPD mass matrix)."""


class ConfigError(RomforgeError):
    """Invalid or incomplete run configuration."""


class ConvergenceError(RomforgeError):
    """A Newton-type iteration did not converge.

    ``diagnostics`` carries whatever the failing solver knew at the time
    (iteration count, residual history, step index, ...).
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ElectroRangeError(RomforgeError):
    """Electrostatic manifold queried or sampled outside its admissible range."""


class PipelineError(RomforgeError):
    def __init__(self, stage: str, command: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}\n  reproduce with: {command}")
        self.stage = stage
        self.command = command
        self.cause = cause

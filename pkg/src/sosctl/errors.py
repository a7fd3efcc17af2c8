"""Exception types shared across the package."""

from __future__ import annotations


class SosctlError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SosctlError, ValueError):
    """Operands have incompatible variable counts or matrix shapes."""


class PolynomialParseError(SosctlError, ValueError):
    """A polynomial string does not match the documented grammar."""


class ConfigError(SosctlError, ValueError):
    """A configuration file is missing keys or holds malformed values."""


class SimulationDiverged(SosctlError, RuntimeError):
    """The integrator produced a non-finite state (closed loop blew up)."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class InsufficientSamplesError(SosctlError, ValueError):
    """Fewer samples than monomials: the data matrix cannot have full row rank."""


class RankDeficientDataError(SosctlError, ValueError):
    """The evaluated monomial data matrix does not have full row rank."""


class CompileError(SosctlError, ValueError):
    """The feasibility conditions could not be lowered to a semidefinite program."""


class InfeasibleProgramError(SosctlError, RuntimeError):
    """The solved program certifies no controller (slack margin below tolerance)."""

    def __init__(self, message: str, margin: float | None = None):
        super().__init__(message)
        self.margin = margin


class MarginalFeasibilityError(SosctlError, RuntimeError):
    """Solver output violates extraction tolerances; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

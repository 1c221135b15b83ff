"""Exception types raised across the package."""


class VoltVarError(Exception):
    """Base class for all package errors."""


class FeederError(VoltVarError, ValueError):
    """Invalid feeder description (topology, impedances, DER records)."""


class DimensionError(VoltVarError, ValueError):
    """Array shapes do not match the grid model."""


class RuleError(VoltVarError, ValueError):
    """Invalid rule parameters."""


class DivergenceError(VoltVarError, RuntimeError):
    """Fixed-point iteration failed to settle within its iteration cap."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class NonFiniteError(VoltVarError, FloatingPointError):
    """A gradient or objective evaluated to NaN/inf."""


class ProjectionInfeasible(VoltVarError, ValueError):
    """The transformed feasible set is empty."""


class ScenarioFormatError(VoltVarError, ValueError):
    """Malformed scenario file."""

    def __init__(self, message, row=None, field=None):
        super().__init__(message)
        self.row = row
        self.field = field


class PowerFlowError(VoltVarError, RuntimeError):
    """AC power flow did not converge or collapsed."""

    def __init__(self, message, mismatches=()):
        super().__init__(message)
        self.mismatches = list(mismatches)

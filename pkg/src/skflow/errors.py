"""Exception types raised across the package."""


class SkflowError(Exception):
    pass


class DomainError(SkflowError, ValueError):
    """A time or parameter lies outside the admissible range."""


class ShapeError(SkflowError, ValueError):
    """Paths or matrices with incompatible shapes or horizons were combined."""


class InvalidWarpError(SkflowError, ValueError):
    pass


class UnsupportedInputError(SkflowError, ValueError):
    """Input is outside the scope of an exact routine (use the bound variant)."""


class NotCadlagError(SkflowError, ValueError):
    pass


class InvalidCoefficientError(SkflowError, ValueError):
    pass


class AssumptionViolation(SkflowError, ValueError):
    pass


class DecompositionUnavailableError(SkflowError, ValueError):
    pass


class OracleUnsupportedError(SkflowError, ValueError):
    pass


class ConfigError(SkflowError, ValueError):
    pass


class FlaggedDerivativeError(SkflowError, RuntimeError):
    """Raised when one of the two solves behind a Malliavin difference did not converge."""

    def __init__(self, message, base_diagnostics=None, shifted_diagnostics=None):
        super().__init__(message)
        self.base_diagnostics = base_diagnostics
        self.shifted_diagnostics = shifted_diagnostics

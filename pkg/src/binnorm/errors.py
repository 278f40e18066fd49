"""Exception types shared across the package."""


class BinnormError(Exception):
    """Base class for every error raised by this library."""


class InvalidShapeError(BinnormError, ValueError):
    """A tensor has the wrong rank, a zero dimension, or a mismatched shape."""


class GateRangeError(BinnormError, ValueError):
    """A gate vector violates the [0, 1] range contract."""


class ConfigError(BinnormError, ValueError):
    """Invalid or inconsistent configuration (hyperparameters, CLI options)."""


class OracleError(BinnormError, RuntimeError):
    """The finite-difference oracle evaluated a non-finite function value."""

"""Exception types shared across the package."""


class SgklError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SgklError, ValueError):
    """Invalid configuration value or unparsable config file."""


class DataFormatError(SgklError, ValueError):
    """Malformed input file (graph CSV, signal CSV, checkpoint)."""


class NumericalError(SgklError, RuntimeError):
    """Numerical failure: blow-up, non-finite objective, failed factorization.

    ``payload`` optionally carries the offending state (e.g. the kernel
    parameter vector at which the objective became non-finite).
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload

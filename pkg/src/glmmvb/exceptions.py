"""Exception types shared across the package."""


class GlmmVbError(Exception):
    """Base class for all package errors."""


class NotPositiveDefiniteError(GlmmVbError):
    """A matrix required to be symmetric positive definite is not."""


class OverflowGuardError(GlmmVbError):
    """A linear predictor exceeded the overflow guard (divergent state)."""


class ModeSearchFailedError(GlmmVbError):
    """Newton-Raphson mode search did not converge."""


class DivergedError(GlmmVbError):
    """The stochastic optimizer hit unrecoverable numerical failure."""


class IrlsDivergedError(GlmmVbError):
    """IRLS for the pooled GLM failed to converge."""


class RankDeficientError(GlmmVbError):
    """Design matrix is rank deficient."""


class DomainError(GlmmVbError):
    """Argument outside the mathematical domain of a special function."""


class ZeroSdError(GlmmVbError):
    """A standard deviation that must be positive is zero."""


class InvalidVError(GlmmVbError):
    """Invalid number of data shards."""


class ConfigError(GlmmVbError):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(GlmmVbError):
    """Invalid input data (CLI exit code 3)."""


class ParseError(DataError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingColumnError(DataError):
    def __init__(self, column):
        super().__init__(f"column {column!r} not found in input")
        self.column = column


class InvalidResponseError(DataError):
    def __init__(self, family, line, message):
        super().__init__(f"invalid {family} response at line {line}: {message}")
        self.family = family
        self.line = line

"""Exception types shared across the package."""


class SsmError(Exception):
    """Base class for all errors raised by ssmkit."""


class CapacityError(SsmError):
    """An enumeration or allocation would exceed a configured capacity."""


class ModelError(SsmError):
    """A mechanical model violates its construction contract."""


class EigenSolveError(SsmError):
    """The generalized eigensolver failed or returned unusable modes."""


class DefectiveModeError(EigenSolveError):
    """An eigenpair is defective or too ill-conditioned to binormalize."""


class MissingCoefficientError(SsmError):
    """A lower-order coefficient was requested before it was computed.

    This always indicates an internal ordering bug, never bad user input.
    """


class HomologicalSolveError(SsmError):
    """A homological system could not be solved reliably."""


class ContinuationError(SsmError):
    """Path continuation failed; carries the last good point if available."""

    def __init__(self, message, last_point=None):
        super().__init__(message)
        self.last_point = last_point


class ConfigError(SsmError):
    """A run configuration failed validation."""


class ProtocolError(SsmError):
    """Malformed traffic on the external black-box protocol."""

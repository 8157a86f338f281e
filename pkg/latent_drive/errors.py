"""
Exception types raised across the package.

Every error derives from LatentDriveError so the CLI can turn any of them
into a one-line diagnostic.
"""


class LatentDriveError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LatentDriveError, ValueError):
    """Bad config key/value, shape or width mismatch, incompatible action space."""


class UsageError(LatentDriveError, ValueError):
    """An operation was called outside its contract."""


class EmptyReplayError(LatentDriveError, LookupError):
    """The replay queue holds no episode long enough to sample from."""


class DiagnosticError(LatentDriveError, FloatingPointError):
    """A loss, gradient or parameter became non-finite."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class CheckpointError(LatentDriveError, IOError):
    """A checkpoint or episode container could not be read or applied."""


class NumericError(LatentDriveError, ArithmeticError):
    """A linear-algebra routine failed to converge."""

"""Exception types shared across the package."""


class FsnidsError(Exception):
    """Base class for package errors."""


class ConfigurationError(FsnidsError):
    """Invalid configuration, missing column, or malformed schedule."""


class ParseError(FsnidsError):
    """Malformed input data (CSV row, flag string, cache file)."""


class PreconditionError(FsnidsError):
    """An operation's documented precondition does not hold."""


class NumericalFaultError(FsnidsError):
    """A non-finite value appeared in an activation or gradient."""


class CheckpointCorruptError(FsnidsError):
    """Checkpoint failed its checksum or is truncated."""


class IncompatibilityError(FsnidsError):
    """Artifact does not match the expected vocabulary digest or profile."""

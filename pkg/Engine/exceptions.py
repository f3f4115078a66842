"""
exceptions.py
-------------
Exception hierarchy for StreamPoint.

Every error kind raised by the library derives from StreamPointError and from
the closest builtin, so callers may catch either.
"""


class StreamPointError(Exception):
    """Base class for all library errors."""


class DimensionError(StreamPointError, ValueError):
    """Shapes do not agree."""


class ContractError(StreamPointError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(StreamPointError, ValueError):
    """A configuration value is invalid."""


class DegenerateError(StreamPointError, ValueError):
    """Input is geometrically or statistically degenerate."""


class GenerationError(StreamPointError, RuntimeError):
    """A synthetic scene could not be generated."""


class FormatError(StreamPointError, ValueError):
    """A file does not follow its on-disk format."""


class ConsistencyError(FormatError):
    """Files are individually valid but disagree with each other."""


class ChecksumError(FormatError):
    """A stored checksum does not match the file contents."""


class SessionError(StreamPointError, RuntimeError):
    """A streaming session was used after it was finalized."""


class TrainingError(StreamPointError, RuntimeError):
    """Training hit a non-finite loss or an inconsistent setup."""

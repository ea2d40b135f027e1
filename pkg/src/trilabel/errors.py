"""Exception hierarchy shared by the engine, service and CLI.

Every error carries a stable ``category`` string so callers (the HTTP layer
and the CLI) can report machine-readable failure classes without matching on
exception types or message text.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class DomainError(EngineError):
    """A numeric argument is outside the operation's domain (zero-norm
    vector, non-positive temperature, NaN input, shape mismatch)."""

    category = "domain"


class ConfigurationError(EngineError):
    """A configuration value or combination of values is invalid."""

    category = "config"


class DataFormatError(EngineError):
    """A binary file does not conform to the expected layout."""

    category = "format"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BufferStateError(EngineError):
    """An operation was attempted on a buffer in an unusable state."""

    category = "state"


class SampleLookupError(EngineError):
    """A sample id was not found, or refers to an entry that cannot be
    modified this way."""

    category = "lookup"

"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class ArvoxError(Exception):
    """Base class for all arvox errors."""


class InvalidArgumentError(ArvoxError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class ConfigError(ArvoxError):
    """A run configuration is inconsistent or incomplete (CLI exit code 2)."""


class DataIOError(ArvoxError):
    """A tensor or weight file is missing, malformed, or truncated (exit code 3)."""

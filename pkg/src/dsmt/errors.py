"""Exception hierarchy shared by every dsmt module."""


class DsmtError(Exception):
    """Base class for all dsmt errors."""


class ContractError(DsmtError, ValueError):
    """An operation was called with inputs that violate its contract."""


class DataError(DsmtError):
    """Problem with input triple files."""


class ParseError(DataError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class ValidationError(DataError):
    pass


class NumericError(DsmtError, FloatingPointError):
    """A non-finite value appeared in a computation."""


class CheckpointError(DsmtError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    def __init__(self, path, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{path}: truncated checkpoint, expected {expected} bytes, got {actual}"
        )


class ConfigError(DsmtError):
    pass

"""Exception hierarchy shared by the pipeline stages.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
anything else -> 4.
"""


class FirstOccurError(Exception):
    """Base class for all package errors."""


class ConfigError(FirstOccurError, ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DataError(FirstOccurError, ValueError):
    """Malformed, inconsistent or missing input data."""


class ParseError(DataError):
    """A problem at a specific line of an input file."""

    def __init__(self, message: str, path: str, line: int):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ModelFormatError(DataError):
    """A serialized artifact does not match the expected structure."""

    def __init__(self, message: str, path: str = "$"):
        self.path = path
        super().__init__(f"{path}: {message}")

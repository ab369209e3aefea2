class EmdMotionError(Exception):
    """Base class of all errors raised by the emdmotion package."""


class ValidationError(EmdMotionError):
    """Raised when a domain value violates its invariants."""


class ConfigurationError(ValidationError):
    """Raised when a configuration value is invalid.

    Args:
        message: Human readable description
        key: Dotted configuration key, when known
    """

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class MalformedInputError(EmdMotionError):
    """Raised when an input file or record cannot be parsed.

    Args:
        message: Human readable description
        offset: Byte offset of the malformed data
        field_index: Index of the unparsable field within a record
        line_number: One-based line number within a text file
    """

    def __init__(
        self,
        message: str,
        offset: int | None = None,
        field_index: int | None = None,
        line_number: int | None = None,
    ) -> None:
        super().__init__(message)
        self.offset = offset
        self.field_index = field_index
        self.line_number = line_number


class InternalConsistencyError(EmdMotionError):
    """Raised when an internal invariant does not hold."""

"""Exception types shared across the package."""


class RotorError(ValueError):
    """Base class for all package-specific errors."""


class ShapeError(RotorError):
    """Operand shapes are inconsistent (e.g. matmul inner dimensions)."""


class DomainError(RotorError):
    """Input is outside an operation's domain (empty input, bad index, ...)."""


class ConfigError(RotorError):
    """A configuration constraint is violated (odd head_dim, position overflow)."""


class PromptFormatError(RotorError):
    """A prompt file does not conform to the schema. Carries the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"prompt field {field!r}: {message}")
        self.field = field


class WeightFormatError(RotorError):
    """A weight file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset

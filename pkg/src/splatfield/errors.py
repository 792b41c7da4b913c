"""Exception types shared across the package."""


class SplatfieldError(Exception):
    """Base class for all package errors."""


class ValidationError(SplatfieldError):
    """An input violates a documented precondition or type invariant."""


class FormatError(SplatfieldError):
    """A file is not a valid splatfield artifact (bad magic, version, tag...)."""


class TruncatedFileError(FormatError):
    """A file ended before a complete record; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ResourceLimitError(SplatfieldError):
    """A render was rejected up front because its buffer would exceed the budget."""


class TrainingError(SplatfieldError):
    """Training failed (non-finite forward/gradient, or divergence)."""

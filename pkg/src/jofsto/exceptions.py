"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or schedule; raised before any work starts."""


class TrainingAbort(RuntimeError):
    """Training hit a non-finite loss or gradient and cannot continue."""


class FormatError(OSError):
    """A file on disk does not match its declared binary or text layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(FormatError):
    """Stored checksum does not match the payload."""

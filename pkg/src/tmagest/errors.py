"""Exception hierarchy shared across the package."""


class TmagestError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TmagestError):
    """Invalid configuration or parameter outside its legal domain."""


class StructuralError(TmagestError):
    """Shape, ordering, or sizing violation in streamed data."""


class NotReadyError(TmagestError):
    """An operation was requested before enough data accumulated."""


class CalibrationError(TmagestError):
    """Threshold calibration received unusable input."""


class TrainingError(TmagestError):
    """Training dataset or settings cannot produce a valid model."""


class UsageError(TmagestError):
    """An object was used before it was ready (e.g. predict on a bare model)."""


class RecordingParseError(TmagestError):
    """A recording or annotation file failed to parse.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelIOError(TmagestError):
    """Base class for model-file serialization failures."""


class ModelFormatError(ModelIOError):
    """File does not start with the expected magic bytes."""


class ModelVersionError(ModelIOError):
    """Container version is not supported by this build."""


class ModelTruncatedError(ModelIOError):
    """File ended before all declared payload bytes were read."""

class PolySearchError(Exception):
    """Base class for polysearch errors."""


class ArgumentError(PolySearchError, ValueError):
    """An argument is outside the domain an operation accepts."""


class FormatError(PolySearchError, ValueError):
    """A file or payload does not match its expected layout."""

    def __init__(self, message: str, offset: int | str | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at {offset})"
        super().__init__(message)


class UndefinedClassError(PolySearchError, ValueError):
    """A per-class quantity is undefined because the class has no samples."""

    def __init__(self, class_index: int, class_name: str | None = None):
        self.class_index = class_index
        self.class_name = class_name
        label = f"{class_index} ({class_name})" if class_name else str(class_index)
        super().__init__(f"Class {label} has no samples")


class EvaluationError(PolySearchError, RuntimeError):
    """A fitness evaluation could not produce a finite score."""


class ConfigError(PolySearchError):
    """The run configuration cannot be loaded or is inconsistent."""


class CheckFailedError(PolySearchError):
    """A check command missed its acceptance threshold."""

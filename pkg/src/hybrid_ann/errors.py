"""Exception types raised across the package."""


class HybridAnnError(Exception):
    pass


class DimensionError(HybridAnnError, ValueError):
    pass


class ConfigError(HybridAnnError, ValueError):
    pass


class CalibrationError(HybridAnnError, ValueError):
    pass


class StateError(HybridAnnError, RuntimeError):
    pass


class BuildError(HybridAnnError, ValueError):
    pass


class FormatError(HybridAnnError, ValueError):
    """A file failed validation; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)

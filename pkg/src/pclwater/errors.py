"""Exception types. Every validation failure derives from ``PCLError``."""


class PCLError(ValueError):
    """Base class for input validation errors (CLI exit code 2)."""


class AlignmentError(PCLError):
    """A raster dimension is not divisible by a rate, tile or stride."""


class GeometryError(PCLError):
    """A rectangle or tile falls outside its source, or layout is invalid."""


class ShapeError(PCLError):
    pass


class ParameterError(PCLError):
    pass


class FormatError(PCLError):
    """Malformed file. ``offset`` is the byte offset of the problem, if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CoverageError(PCLError):
    pass


class ManifestError(PCLError):
    pass

"""Exception types raised across the package."""


class HetskelError(Exception):
    """Base class for all package errors."""


class ShapeError(HetskelError, ValueError):
    pass


class DegenerateBatchError(HetskelError, ValueError):
    """A batch statistic was requested on fewer than two samples."""


class NonFiniteError(HetskelError, FloatingPointError):
    pass


class TopologyError(HetskelError, ValueError):
    pass


class ConsistencyError(HetskelError, ValueError):
    """Slot occupancy or provenance does not match the declared stream."""


class ProjectionError(HetskelError, ValueError):
    pass


class FormatError(HetskelError, ValueError):
    """Malformed binary container; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmbeddingParseError(HetskelError, ValueError):
    pass


class VocabularyError(HetskelError, ValueError):
    pass


class ConfigError(HetskelError, ValueError):
    pass

"""Exception hierarchy shared by the library, the service and the CLI."""


class TrajSearchError(Exception):
    """Base class for all errors raised by trajsearch."""


class GeometryError(TrajSearchError):
    """Non-finite intermediate value while computing an interaction."""


class DatasetFormatError(TrajSearchError):
    """A dataset file or record stream is malformed.

    ``record`` is the zero-based record index (CSV data line or binary
    segment) at which the problem was detected, when known.
    """

    def __init__(self, message: str, record: int | None = None):
        self.record = record
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)


class ConfigurationError(TrajSearchError):
    """Index or scenario parameters are invalid for the given data."""


class CapacityError(TrajSearchError):
    """A single query cannot fit in a buffer even when processed alone."""

    def __init__(self, message: str, query_id: int, count: int):
        self.query_id = query_id
        self.count = count
        super().__init__(message)


class IntegrityError(TrajSearchError):
    """Duplicate result records disagree, which signals nondeterminism."""

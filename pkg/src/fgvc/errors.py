class FGVCError(Exception):
    """Base class for all errors raised by this package."""


class InvalidShapeError(FGVCError, ValueError):
    pass


class InvalidLabelError(FGVCError, ValueError):
    pass


class InvalidInputError(FGVCError, ValueError):
    pass


class EmptyDomainError(FGVCError, ValueError):
    pass


class UnbalancedDomainError(FGVCError, ValueError):
    pass


class IngestionError(FGVCError, OSError):
    """Raised when a file on disk cannot be decoded into the expected data."""

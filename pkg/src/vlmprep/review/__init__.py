from .store import (
    EnqueueResult,
    NotFoundError,
    NothingToExportError,
    ReviewError,
    ReviewItem,
    ReviewStore,
    ValidationError,
    VersionConflictError,
)

__all__ = [
    "EnqueueResult",
    "NotFoundError",
    "NothingToExportError",
    "ReviewError",
    "ReviewItem",
    "ReviewStore",
    "ValidationError",
    "VersionConflictError",
]

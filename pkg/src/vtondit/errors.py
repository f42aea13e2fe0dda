"""Exception hierarchy shared by all modules."""


class VtonError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(VtonError):
    """Tensor extents incompatible with the requested operation."""


class ConfigError(VtonError):
    """Invalid configuration value (kernel sizes, schedule bounds, model dims)."""


class ContractError(VtonError):
    """A documented precondition or invariant was violated by the caller."""


class PlanError(VtonError):
    """Clip planning / stitching inconsistency (uncovered frames, length mismatch)."""


class ParseError(VtonError):
    """Malformed file content; message carries the byte offset where known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

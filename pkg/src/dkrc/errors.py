"""Exception hierarchy shared by every dkrc module."""


class DKRCError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DKRCError, ValueError):
    pass


class LengthMismatchError(DKRCError, ValueError):
    pass


class EmptyDatasetError(DKRCError, ValueError):
    pass


class InsufficientDataError(DKRCError, ValueError):
    pass


class DegenerateFilterError(DKRCError, ValueError):
    pass


class InvalidRangeError(DKRCError, ValueError):
    pass


class DimensionError(DKRCError, ValueError):
    pass


class NetworkStateError(DKRCError, RuntimeError):
    """Raised when backward() is called without a cached forward pass."""


class NumericError(DKRCError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")


class ConfigError(DKRCError, ValueError):
    pass

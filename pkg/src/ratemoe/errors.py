"""Exception types shared across the package."""


class RatemoeError(Exception):
    """Base class for all package errors."""


class ShapeError(RatemoeError):
    """Tensor shapes are incompatible with the requested operation."""


class RateError(RatemoeError):
    """Sequence length is not compatible with a pathway rate."""


class ContractError(RatemoeError):
    """A documented precondition or invariant was violated by the caller."""


class ConfigError(RatemoeError):
    """A configuration value is missing, mistyped, or out of range."""


class PathwayCompatError(RatemoeError):
    """Pathway lengths or rates cannot be aligned for an exchange."""


class FormatError(RatemoeError):
    """A feature file does not follow the expected binary layout."""


class CorruptionError(FormatError):
    """A feature file ends or breaks mid-record.

    ``offset`` is the byte position at which the reader gave up.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DataInconsistencyError(RatemoeError):
    """Records within one dataset disagree on a shared property."""


class GradCheckError(RatemoeError):
    """Gradient verification hit a non-finite value; names the parameter."""


class DivergenceError(RatemoeError):
    """Training produced a non-finite loss.

    ``checkpoint_path`` points at the last finite-state checkpoint, when one
    was written.
    """

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path

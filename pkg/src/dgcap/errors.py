"""Exception hierarchy shared across the package."""


class DgcapError(Exception):
    """Base class for all package errors."""


class ShapeError(DgcapError, ValueError):
    pass


class ContractError(DgcapError, ValueError):
    """A precondition on an operation's arguments was violated."""


class NumericError(DgcapError, ArithmeticError):
    """NaN/Inf encountered where finite values are required."""


class TrainingError(NumericError):
    pass


class DataError(DgcapError):
    """Problems with data files: feature bundles, corpora, checkpoints."""


class BadMagicError(DataError):
    pass


class LengthMismatchError(DataError):
    pass


class StreamShapeError(DataError, ShapeError):
    pass


class NonFiniteDataError(DataError, NumericError):
    pass


class IncompatibleCheckpointError(DataError):
    pass


class EmptyCaptionError(DataError):
    """Raised when a caption has no tokens left after cleaning; callers skip the record."""

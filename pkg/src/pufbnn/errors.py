"""Exception types shared across the package."""


class PufBnnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PufBnnError, ValueError):
    """Shapes of two operands do not line up."""

    def __init__(self, what: str, expected: int, got: int):
        super().__init__(f"{what}: expected length {expected}, got {got}")
        self.expected = expected
        self.got = got


class ParityError(PufBnnError, ValueError):
    """An integer that must be even is odd (signals a mis-folded threshold)."""


class DegenerateChannelError(PufBnnError, ValueError):
    """A batch-norm channel has gamma == 0 and cannot be folded."""


class EmptyDatasetError(PufBnnError, ValueError):
    """An operation that averages over samples received no samples."""


class FormatError(PufBnnError, ValueError):
    """A file does not conform to its declared container format."""


class BadMagicError(FormatError):
    """File starts with the wrong magic bytes."""


class TruncatedFileError(FormatError):
    """File ends before the declared payload is complete."""


class CountMismatchError(FormatError):
    """Image and label files declare different sample counts."""


class RoundingGapWarning(UserWarning):
    """Threshold rounding placed an attainable even y between the real
    batch-norm boundary and its integer rounding, so that single y value
    decides differently than real-valued batch norm would."""

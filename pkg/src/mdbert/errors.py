class MdbertError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(MdbertError, ValueError):
    pass


class EmptyGroupError(MdbertError, ValueError):
    """A pooling or softmax group had no unmasked member."""


class DataError(MdbertError, ValueError):
    """Malformed or inconsistent input data."""


class NumericError(MdbertError, FloatingPointError):
    """A non-finite value appeared where training cannot continue."""


class UsageError(MdbertError):
    pass

"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class DomainError(ValueError):
    """Input lies outside an operation's mathematical domain."""


class DataError(ValueError):
    """Malformed or incompatible on-disk data (corpus, checkpoint, model files)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values and was aborted."""

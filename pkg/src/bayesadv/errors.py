"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file does not match the expected on-disk layout."""


class DimensionError(ValueError):
    """Array shapes disagree (feature width, row count, parameter shapes)."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class ConstraintError(ValueError):
    """A problem-space transform would violate a program constraint."""

"""Exception types shared across the package.

All validation failures derive from ``ValidationError`` (a ``ValueError``) so the
CLI can map them to a single exit code.
"""


class ValidationError(ValueError):
    pass


class InvalidConfigError(ValidationError):
    pass


class InvalidParamsError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class TruncationError(ValidationError):
    """Requested amplitude or grid would reach into the truncation guard band."""


class NonFiniteError(ValidationError):
    pass


class NonlinearityError(ValidationError):
    """Modulation amplitude outside the modeled linear range of the link."""


class GridMismatchError(ValidationError):
    pass


class FitError(ValidationError):
    pass


class StepSizeError(RuntimeError):
    """Fixed-step integration lost trace; the step is too coarse for the generator."""


class ConvergenceError(RuntimeError):
    pass

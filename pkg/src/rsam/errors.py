"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the requested operation."""


class RankError(ValueError):
    """A matrix that must have full column rank does not."""


class CapacityError(ValueError):
    """Problem size exceeds a solver's dimension guard."""


class DegenerateGradientError(ValueError):
    """Gradient (after metric weighting) is numerically zero; no ascent
    direction exists."""


class BatchCompositionError(ValueError):
    """A batch violates the structural requirements of a loss (e.g. an
    anchor with no positives in a multiview batch)."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""

"""Exception hierarchy shared by all toruslab modules."""


class ToruslabError(Exception):
    """Base class for every error raised by the package."""


class InvalidSpecError(ToruslabError, ValueError):
    """A minor index selection is malformed or out of range."""


class ComplexityError(ToruslabError):
    """A brute-force routine was asked to enumerate too many permutations."""


class ConvexityError(ToruslabError):
    """The x-Hessian of a potential is not positive definite."""


class DomainError(ToruslabError, ValueError):
    """A point lies outside the working domain or the admissible moment image."""


class SolverError(ToruslabError):
    """Newton iteration failed to converge."""


class TruncationError(ToruslabError):
    """A quadrature grid cuts off too much mass."""


class DegenerateDensityError(ToruslabError):
    """A density has zero mass or flat cumulative segments."""


class ConfigError(ToruslabError, ValueError):
    """A run configuration could not be parsed or validated."""


class ConsistencyError(ToruslabError):
    """Two routes to the same quantity disagree beyond tolerance."""

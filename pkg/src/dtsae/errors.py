"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class SingularDesignError(ValueError):
    """A design matrix is rank deficient."""


class UnderdeterminedError(ValueError):
    """Fewer areas than regression coefficients."""


class UsageError(ValueError):
    """An operation was called with inputs that violate its contract."""


class ConfigError(ValueError):
    """An experiment configuration is inconsistent or infeasible."""


class NumericalFailureError(RuntimeError):
    """A sampler produced a non-finite value."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ParseError(ValueError):
    """A malformed input file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientSpectrumError(ValueError):
    """More basis vectors requested than positive eigenvalues exist."""

    def __init__(self, requested, available):
        super().__init__(
            f"requested {requested} basis vectors but only {available} "
            "positive eigenvalues are available"
        )
        self.requested = requested
        self.available = available


class InsufficientSampleError(ValueError):
    """Some areas have too few sampled units for a direct estimate."""

    def __init__(self, areas, minimum=2):
        super().__init__(
            f"{len(areas)} area(s) have fewer than {minimum} sampled units: "
            + ", ".join(str(a) for a in areas)
        )
        self.areas = list(areas)

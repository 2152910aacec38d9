"""Exception types raised by the toolkit."""


class DomainError(ValueError):
    """A point lies outside (or too close to the edge of) a field's domain box,
    or a density is not strictly positive where it must be."""


class DegenerateStructureError(ArithmeticError):
    """The mixed Hessian of the cost is singular at a point, so the symplectic
    form and both metrics are undefined there."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class MapRecoveryError(RuntimeError):
    """Newton iteration for the transport map did not converge."""


class ConfigError(ValueError):
    """Invalid run configuration."""

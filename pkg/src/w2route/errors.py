"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, QuadratureError and
ExplosionError -> 3, InfeasibleError -> 4.
"""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration input."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge within budget.

    Carries ``partial`` (best estimate so far) and ``residual`` (last error
    estimate) so callers can report how far off the integral is.
    """

    def __init__(self, message, partial=float("nan"), residual=float("nan")):
        super().__init__(message)
        self.partial = partial
        self.residual = residual


class ExplosionError(RuntimeError):
    """A simulated trajectory left the sane range; reduce the step size."""


class InfeasibleError(RuntimeError):
    """No admissible switch (or an inadmissible one was requested)."""


class GridAlignmentError(ValueError):
    """Requested switch time does not sit on the discretization grid."""

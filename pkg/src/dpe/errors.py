"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in dpe.cli; library code raises these
and never calls sys.exit.
"""


class DpeError(Exception):
    """Base class for all package errors."""


class DimensionError(DpeError):
    """Shapes of planes/operators/kernels do not line up."""


class ConfigError(DpeError):
    """Invalid configuration key, value, or constraint violation."""


class FormatError(DpeError):
    """Malformed external file (image, kernel, weight, manifest)."""


class SolverError(DpeError):
    """Iterative solver failed to converge.

    Carries the final relative residual so callers can report it.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class MonitorViolation(DpeError):
    """A convergence-monitor check failed (raised only under --strict)."""

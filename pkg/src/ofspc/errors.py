"""Exception hierarchy shared across the package."""


class OfspcError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OfspcError):
    """Malformed or dimensionally inconsistent problem data."""


class AssumptionError(OfspcError):
    """A standing assumption on the system fails."""


class NumericalError(OfspcError):
    """A numerical operation failed (singular factorization, non-finite data)."""


class DivergenceError(NumericalError):
    """An iterative procedure did not converge within its budget."""


class DecompositionError(OfspcError):
    """The orthogonal/Schur split of the system matrix cannot be built."""


class UnreachableOrthogonalPartError(DecompositionError):
    """The orthogonal subsystem is not reachable; no bounded controller can stabilize it."""


class CacheError(OfspcError):
    """Moment cache file is corrupt or stale with respect to its inputs."""


class InternalContradictionError(OfspcError):
    """A condition that theory guarantees cannot happen was observed."""

"""Exception types shared across the package."""


class CopcError(Exception):
    """Base class for every error raised on purpose by this package."""


class InputError(CopcError, ValueError):
    """Malformed user input: bad CSV cells, bad flags, inconsistent tiers."""


class GraphError(CopcError, ValueError):
    """A graph violates the structural contract of the operation."""


class NumericalError(CopcError, ArithmeticError):
    """A numerical routine could not produce a usable result."""

"""Exception types raised across the package."""


class HyranError(Exception):
    """Base class for all package errors."""


class InvalidArgument(HyranError, ValueError):
    pass


class UnsupportedConfiguration(HyranError, ValueError):
    pass


class ContractViolation(HyranError, RuntimeError):
    pass


class NumericError(HyranError, ArithmeticError):
    pass


class InsufficientData(HyranError, ValueError):
    pass


class InternalInvariantError(HyranError, RuntimeError):
    pass


class FactorizationWarning(RuntimeWarning):
    """A Cholesky factorization failed and a least-squares solve was used instead."""

"""Exception hierarchy shared by every module."""


class MpwSynthError(Exception):
    """Base class for all package errors."""


class ValidationError(MpwSynthError, ValueError):
    """Inputs violate a documented precondition (shapes, weights, schema)."""


class ShapeError(ValidationError):
    """Array dimensions are incompatible."""


class NumericError(MpwSynthError, ArithmeticError):
    """A non-finite value appeared during computation."""


class ContractError(MpwSynthError, RuntimeError):
    """An API was used out of order, e.g. a stale forward cache."""

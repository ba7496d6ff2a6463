"""Shared exception types.

Every module raises one of these instead of bare ValueError so callers
can tell contract violations apart from numeric failures.
"""


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class ContractError(RuntimeError):
    """A documented precondition or postcondition was violated."""


class NumericsError(ArithmeticError):
    """A computation produced non-finite values."""


class RangeError(ValueError):
    """A scalar argument is outside its documented interval."""


class IdError(ValueError):
    """A content or style id is outside the configured range."""


class ConfigError(ValueError):
    """Configuration fields are inconsistent with each other."""

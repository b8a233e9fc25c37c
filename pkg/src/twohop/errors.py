"""Exception hierarchy shared by every module."""


class TwoHopError(Exception):
    """Base class for library errors."""


class ShapeError(TwoHopError, ValueError):
    """Axes, alphabets or table shapes do not line up."""


class DomainError(TwoHopError, ValueError):
    """A parameter is outside the region where the quantity is defined."""


class BudgetError(TwoHopError):
    """Exact enumeration would exceed the configured cell/encoder budget."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at its iteration cap."""

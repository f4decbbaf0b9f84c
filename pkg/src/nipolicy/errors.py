"""Exception hierarchy shared across the package.

Two families matter for exit-code mapping in the CLI: ``DataError`` for
malformed inputs and contract violations caught at the boundary, and
``NumericalError`` for solver or training failures on well-formed data.
"""


class DataError(ValueError):
    """Input data violates a documented contract."""


class BudgetViolationError(DataError):
    """An action vector assigns some action to more arms than its budget."""


class NumericalError(RuntimeError):
    """A numerical routine failed (solver breakdown, divergence, NaN)."""


class DegenerateChainError(NumericalError):
    """Stationary distribution of a policy-induced chain is not unique."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite."""

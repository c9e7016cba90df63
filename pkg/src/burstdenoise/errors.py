"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, DataError
(and its subclasses) exit 2, NumericalError exit 3.
"""


class ShapeError(ValueError):
    """An operand has an incompatible shape; the message names the offending dimension."""


class DataError(Exception):
    """A file or dataset is missing, malformed, truncated, or inconsistent."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value or failed a numerical check."""


class GraphError(RuntimeError):
    """Misuse of the autodiff tape (stale graph, repeated backward, detached loss)."""

"""Exception types raised by the solvers and oracles."""


class StockLoanError(Exception):
    """Base class for all package errors."""


class DomainError(StockLoanError, ValueError):
    """Parameters or states outside the admissible domain."""


class GridError(StockLoanError, ValueError):
    """Invalid grid, or a grid too small for the requested problem."""


class ConvergenceError(StockLoanError, RuntimeError):
    """Penalty iteration did not settle within its cap."""


class StabilityError(StockLoanError, RuntimeError):
    """The assembled discrete operator is not monotone."""


class RegressionError(StockLoanError, RuntimeError):
    """Degenerate least-squares design matrix."""


class AllocationError(StockLoanError, MemoryError):
    """Requested arrays are unreasonably large."""

"""
Equity Collectivity Errors

Every error carries its context as attributes and the process exit code the CLI maps
it to: 1 for usage/configuration errors, 2 for data errors and 3 for numerical
failures.
"""

from typing import Any, Optional


class CollectivityError(Exception):
    """Base class for all package errors."""

    exit_code: int = 1

    def __init__(self, message: str, **context: Any):
        self.context = {k: v for k, v in context.items() if v is not None}
        super().__init__(message)

    def with_context(self, **context: Any) -> "CollectivityError":
        """Attach extra context (e.g. the scope or grid cell) and return self."""
        self.context.update({k: v for k, v in context.items() if v is not None})
        return self

    def __str__(self) -> str:
        msg = super().__str__()
        if self.context:
            ctx = ", ".join(f"{k}={v}" for k, v in self.context.items())
            msg = f"{msg} ({ctx})"
        return msg

    def __reduce__(self):
        # Subclass signatures differ from args, rebuild from state for worker pools
        return (_rebuild, (type(self), self.args, self.__dict__))


def _rebuild(cls: type, args: tuple, state: dict) -> CollectivityError:
    err = cls.__new__(cls)
    Exception.__init__(err, *args)
    err.__dict__.update(state)
    return err


# =====================================================================================
# Usage / configuration errors
# =====================================================================================
class UsageError(CollectivityError):
    """Invalid arguments or configuration."""

    exit_code = 1


class OutOfRangeWindow(UsageError):
    def __init__(self, tau: int, end_index: Optional[int], length: int):
        self.tau = tau
        self.end_index = end_index
        self.length = length
        super().__init__(
            f"Window of length tau={tau} ending at t={end_index} is outside the "
            f"valid range tau <= t <= T={length} (requires 2 <= tau <= T)",
            tau=tau,
            t=end_index,
            T=length,
        )


class SizeMismatch(UsageError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(
            f"Group sizes sum to {got} but the graph has {expected} vertices",
            expected=expected,
            got=got,
        )


class BadK(UsageError):
    def __init__(self, k: int, n_items: int):
        self.k = k
        self.n_items = n_items
        super().__init__(f"Cluster count k={k} must satisfy 1 <= k <= {n_items}")


class EmptyInput(UsageError):
    def __init__(self, what: str = "values"):
        super().__init__(f"Cannot compute a percentile of empty {what}")


class AntiRequiresTwo(UsageError):
    def __init__(self, n: int):
        self.n = n
        super().__init__(f"An anti-correlated market requires N=2, got N={n}")


class InsufficientSectors(UsageError):
    def __init__(self, m: int, eligible_count: int, n: Optional[int] = None):
        self.m = m
        self.eligible_count = eligible_count
        super().__init__(
            f"Cannot draw m={m} sectors, only {eligible_count} sectors are eligible",
            m=m,
            n=n,
            eligible=eligible_count,
        )


class InsufficientEquities(UsageError):
    def __init__(self, sector: str, n: int, available: int):
        self.sector = sector
        self.n = n
        self.available = available
        super().__init__(
            f"Sector '{sector}' holds {available} equities, cannot draw n={n}",
            sector=sector,
        )


class IncompleteTable(UsageError):
    def __init__(self, cell: tuple[int, int]):
        self.cell = cell
        super().__init__(f"Grid table has no value for cell {cell}", cell=cell)


class GridMismatch(UsageError):
    def __init__(self, a: Any, b: Any):
        super().__init__("Percentile curves do not share the same t grid", a=a, b=b)


# =====================================================================================
# Data errors
# =====================================================================================
class DataError(CollectivityError):
    """Invalid or unusable input data."""

    exit_code = 2


class MissingSector(DataError):
    def __init__(self, ticker: str):
        self.ticker = ticker
        super().__init__(f"Ticker '{ticker}' has no sector", ticker=ticker)


class NonPositivePrice(DataError):
    def __init__(self, ticker: str, date: Any, price: float):
        self.ticker = ticker
        self.date = date
        super().__init__(
            f"Non-positive close {price} for '{ticker}' on {date}",
            ticker=ticker,
            date=date,
        )


class NonFinitePrice(DataError):
    def __init__(self, ticker: str, date: Any, price: float):
        self.ticker = ticker
        self.date = date
        super().__init__(
            f"Non-finite close {price} for '{ticker}' on {date}",
            ticker=ticker,
            date=date,
        )


class UnparsableDate(DataError):
    def __init__(self, row: int, value: Any):
        self.row = row
        self.value = value
        super().__init__(f"Cannot parse date '{value}' in row {row}", row=row)


class TooManyGaps(DataError):
    def __init__(self, ticker: str, reason: str):
        self.ticker = ticker
        self.reason = reason
        super().__init__(
            f"Ticker '{ticker}' violates the cleaning policy: {reason}",
            ticker=ticker,
        )


class EmptyPanel(DataError):
    def __init__(self, message: str = "All tickers were removed while cleaning"):
        super().__init__(message)


class ZeroVarianceWindow(DataError):
    def __init__(self, ticker: str, t: int):
        self.ticker = ticker
        self.t = t
        super().__init__(
            f"Return series of '{ticker}' is constant in the window ending at t={t}",
            ticker=ticker,
            t=t,
        )


class EmptyGraph(DataError):
    def __init__(self):
        super().__init__("Graph has zero total edge weight, modularity is undefined")


# =====================================================================================
# Numerical errors
# =====================================================================================
class NumericalError(CollectivityError):
    """Numerical failure."""

    exit_code = 3


class NoConvergence(NumericalError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Power iteration did not converge after {iterations} iterations "
            f"(residual {residual:.3e})",
        )


class EigenFailure(NumericalError):
    def __init__(self, reason: str):
        super().__init__(f"Dense eigen-decomposition failed: {reason}")

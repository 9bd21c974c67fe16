"""
Spectral Collectivity

Leading eigenpair of window correlation matrices, the normalised leading
eigenvalue lambda1 / N and the uniformity h = |sum(v1)| / sqrt(N) of the leading
eigenvector.

The solver is power iteration from the normalised all-ones direction (slightly
perturbed by a fixed vector so a start orthogonal to the market mode cannot
stall). Matrices where it does not converge fall back to a dense symmetric
eigen-decomposition.
"""

from datetime import date
from functools import lru_cache
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import Field, field_validator, model_validator
from pydantic_numpy.typing import Np1DArray

from rompy.logging import get_logger

from equity_collectivity.base import CollectivityBaseModel, as_float_array
from equity_collectivity.corr import (
    REFRESH_EVERY,
    TAU,
    CorrMatrix,
    RollingCorrelation,
    window_chunks,
)
from equity_collectivity.errors import (
    CollectivityError,
    EigenFailure,
    NoConvergence,
    UsageError,
    ZeroVarianceWindow,
)
from equity_collectivity.ingest import LabelledPanel, ReturnPanel
from equity_collectivity.parallel import run_parallel
from equity_collectivity.types import SolverMethod

logger = get_logger(__name__)

TOL = 1e-10
MAX_ITER = 100_000
# Iteration budget of the batched solver before the dense fallback
BATCH_MAX_ITER = 2_000
DEGENERACY_TOL = 1e-8
PERTURBATION = 0.1
START_SEED = 20_230_101
# Residual contraction above which the iteration is treated as stalled
STALL_RATIO = 1.0 - 1e-5
STALL_AFTER = 1_000
BOUND_ATOL = 1e-9
# Converging within this many iterations takes the gap from the dense spectrum
FAST_CONVERGENCE = 3

MARKET = "market"


class EigenResult(CollectivityBaseModel):
    """Leading eigenpair of a correlation matrix."""

    lambda1: float = Field(ge=0.0, description="Leading eigenvalue")
    v1: Np1DArray = Field(description="Unit-norm leading eigenvector, sum(v1) >= 0")
    normalized_lambda1: float = Field(description="lambda1 divided by the dimension")
    iterations: int = Field(ge=0, description="Solver iterations, 0 for dense")
    residual: float = Field(ge=0.0, description="Norm of Av1 - lambda1 v1")
    gap: float = Field(description="Estimated lambda1 - lambda2")
    degenerate: bool = Field(
        default=False, description="The leading eigenspace is (numerically) degenerate"
    )
    method: SolverMethod = Field(description="Solver that produced the pair")

    @field_validator("v1", mode="before")
    @classmethod
    def float_vector(cls, v):
        return as_float_array(v, ndim=1)

    @model_validator(mode="after")
    def bounds(self) -> "EigenResult":
        n = self.v1.size
        if not 1.0 / n - BOUND_ATOL <= self.normalized_lambda1 <= 1.0 + BOUND_ATOL:
            raise ValueError(
                f"Normalised eigenvalue {self.normalized_lambda1} outside [1/N, 1]"
            )
        return self

    @property
    def uniformity(self) -> float:
        return uniformity(self.v1)


@lru_cache(maxsize=256)
def _start_vector(n: int) -> np.ndarray:
    ones = np.full(n, 1.0 / np.sqrt(n))
    offset = np.random.default_rng(START_SEED).standard_normal(n) / np.sqrt(n)
    start = ones + PERTURBATION * offset
    start /= np.linalg.norm(start)
    start.setflags(write=False)
    return start


def sign_convention(v: np.ndarray) -> np.ndarray:
    """Flip v so that sum(v) >= 0, or its first nonzero entry is positive."""
    total = v.sum()
    if abs(total) > 1e-12:
        return v if total > 0 else -v
    nonzero = np.flatnonzero(np.abs(v) > 1e-12)
    if nonzero.size and v[nonzero[0]] < 0:
        return -v
    return v


def _entries(m: Union[CorrMatrix, np.ndarray]) -> np.ndarray:
    return m.entries if isinstance(m, CorrMatrix) else np.asarray(m, dtype=np.float64)


def dense_eigenpair(m: Union[CorrMatrix, np.ndarray]) -> EigenResult:
    """Leading eigenpair from a dense symmetric eigen-decomposition."""
    a = _entries(m)
    try:
        values, vectors = np.linalg.eigh(a)
    except np.linalg.LinAlgError as err:
        raise EigenFailure(str(err)) from err
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(vectors))):
        raise EigenFailure("non-finite eigenvalues")
    n = a.shape[0]
    lam = float(values[-1])
    v = sign_convention(vectors[:, -1])
    gap = float(values[-1] - values[-2]) if n > 1 else lam
    return EigenResult(
        lambda1=max(lam, 0.0),
        v1=v,
        normalized_lambda1=lam / n,
        iterations=0,
        residual=float(np.linalg.norm(a @ v - lam * v)),
        gap=gap,
        degenerate=n > 1 and gap <= DEGENERACY_TOL,
        method=SolverMethod.DENSE,
    )


def _dense_gap(a: np.ndarray) -> float:
    if a.shape[0] < 2:
        return float(a[0, 0])
    values = np.linalg.eigvalsh(a)
    return float(values[-1] - values[-2])


def power_iteration(
    m: Union[CorrMatrix, np.ndarray], tol: float = TOL, max_iter: int = MAX_ITER
) -> EigenResult:
    """Leading eigenpair by power iteration.

    Iterates until the residual ||Av - lambda v|| drops to tol * lambda, with lambda
    the Rayleigh quotient. The gap is estimated from the contraction of successive
    residuals, which tends to lambda2 / lambda1.

    Raises
    ------
    NoConvergence
        The residual did not reach the tolerance within max_iter iterations, the
        iteration stalled or Av vanished.

    """
    a = _entries(m)
    n = a.shape[0]
    v = _start_vector(n).copy()
    previous = np.nan
    ratio = 0.0
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        w = a @ v
        lam = float(v @ w)
        residual = float(np.linalg.norm(w - lam * v))
        if np.isfinite(previous) and previous > 0:
            ratio = min(max(residual / previous, 0.0), 1.0)
        if residual <= tol * abs(lam) and lam > 0:
            if iteration <= FAST_CONVERGENCE:
                # Too few residuals for a contraction estimate
                gap = _dense_gap(a)
            else:
                gap = lam * (1.0 - ratio)
            return EigenResult(
                lambda1=lam,
                v1=sign_convention(v),
                normalized_lambda1=lam / n,
                iterations=iteration,
                residual=residual,
                gap=gap,
                degenerate=n > 1 and gap <= DEGENERACY_TOL,
                method=SolverMethod.POWER,
            )
        norm = np.linalg.norm(w)
        if norm <= np.finfo(float).tiny or not np.isfinite(norm):
            raise NoConvergence(iteration, residual)
        if iteration >= STALL_AFTER and ratio > STALL_RATIO:
            raise NoConvergence(iteration, residual)
        v = w / norm
        previous = residual
    raise NoConvergence(max_iter, residual)


def leading_eigenpair(
    m: Union[CorrMatrix, np.ndarray], tol: float = TOL, max_iter: int = MAX_ITER
) -> EigenResult:
    """Dominant eigenpair of a correlation matrix.

    Parameters
    ----------
    m: CorrMatrix | np.ndarray
        Symmetric correlation matrix.
    tol: float
        Relative residual tolerance of the power iteration.
    max_iter: int
        Iteration budget before the dense fallback.

    Returns
    -------
    result: EigenResult
        Leading eigenpair with sign(sum(v1)) >= 0, the gap estimate and the
        degeneracy flag.

    Raises
    ------
    EigenFailure
        Both the power iteration and the dense fallback failed.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        import numpy as np
        from equity_collectivity.spectral import leading_eigenpair
        result = leading_eigenpair(np.ones((3, 3)))
        result.normalized_lambda1, result.uniformity

    """
    try:
        result = power_iteration(m, tol=tol, max_iter=max_iter)
    except NoConvergence as err:
        logger.debug(f"{err}, falling back to the dense solver")
        result = dense_eigenpair(m)
    if result.degenerate:
        label = f" at t={m.end_index}" if isinstance(m, CorrMatrix) else ""
        logger.info(f"Degenerate leading eigenspace{label} (gap {result.gap:.2e})")
    return result


def leading_eigenvalues(
    stack: np.ndarray, tol: float = TOL, max_iter: int = BATCH_MAX_ITER
) -> np.ndarray:
    """Leading eigenvalues of a stack of symmetric matrices.

    Batched power iteration over the (D, k, k) stack with the same start vector
    and stopping rule as `power_iteration`. Matrices still unconverged after
    max_iter iterations are solved densely.

    """
    stack = np.asarray(stack, dtype=np.float64)
    count, k, _ = stack.shape
    values = np.full(count, np.nan)
    active = np.arange(count)
    v = np.tile(_start_vector(k), (count, 1))
    for _ in range(max_iter):
        w = np.matmul(stack[active], v[:, :, None])[:, :, 0]
        lam = np.einsum("di,di->d", v, w)
        residual = np.linalg.norm(w - lam[:, None] * v, axis=1)
        done = (residual <= tol * np.abs(lam)) & (lam > 0)
        values[active[done]] = lam[done]
        keep = ~done
        norms = np.linalg.norm(w[keep], axis=1)
        valid = norms > np.finfo(float).tiny
        active = active[keep][valid]
        v = w[keep][valid] / norms[valid, None]
        if not active.size:
            break
    pending = np.setdiff1d(np.arange(count), np.flatnonzero(~np.isnan(values)))
    if active.size or pending.size:
        rest = np.union1d(active, pending)
        logger.debug(f"Dense fallback for {rest.size} of {count} matrices")
        try:
            values[rest] = np.linalg.eigvalsh(stack[rest])[:, -1]
        except np.linalg.LinAlgError as err:
            raise EigenFailure(str(err)) from err
    return values


def uniformity(v1: np.ndarray) -> float:
    """Uniformity h = |sum(v1)| / sqrt(N) of a unit eigenvector.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        import numpy as np
        from equity_collectivity.spectral import uniformity
        uniformity(np.ones(4) / 2)
        uniformity(np.array([1.0, 0.0, 0.0]))

    """
    v1 = np.asarray(v1, dtype=np.float64)
    if v1.ndim != 1 or not v1.size:
        raise UsageError("The eigenvector must be a non-empty 1-D array")
    if abs(np.linalg.norm(v1) - 1.0) > 1e-8:
        raise UsageError(
            f"The eigenvector must have unit norm, got {np.linalg.norm(v1)}"
        )
    return float(min(abs(v1.sum()) / np.sqrt(v1.size), 1.0))


def _label(value) -> Union[str, int]:
    return value.isoformat() if isinstance(value, date) else value


class CollectivitySeries(CollectivityBaseModel):
    """Normalised leading eigenvalue and uniformity over rolling windows."""

    scope: str = Field(description="Market, sector name or portfolio id")
    end_indices: list[int] = Field(description="Window end indices t = tau ... T")
    dates: list[date] = Field(default_factory=list, description="Date of every t")
    lambda1_norm: Np1DArray = Field(description="lambda1 / N per window")
    uniformity: Np1DArray = Field(description="Uniformity h per window")
    degenerate: list[bool] = Field(
        default_factory=list, description="Degenerate leading eigenspace per window"
    )

    @field_validator("lambda1_norm", "uniformity", mode="before")
    @classmethod
    def float_series(cls, v):
        return as_float_array(v, ndim=1)

    @model_validator(mode="after")
    def consistent(self) -> "CollectivitySeries":
        size = len(self.end_indices)
        lengths = {self.lambda1_norm.size, self.uniformity.size}
        if self.dates:
            lengths.add(len(self.dates))
        if self.degenerate:
            lengths.add(len(self.degenerate))
        if lengths != {size}:
            raise ValueError("Series lengths differ")
        if np.any(self.lambda1_norm <= 0) or np.any(
            self.lambda1_norm > 1 + BOUND_ATOL
        ):
            raise ValueError("Normalised eigenvalues must lie in (0, 1]")
        if np.any(self.uniformity < 0) or np.any(self.uniformity > 1):
            raise ValueError("Uniformity must lie in [0, 1]")
        return self

    def to_frame(self) -> pd.DataFrame:
        """Frame with columns `date,lambda1_norm,uniformity`."""
        index = self.dates if self.dates else self.end_indices
        return pd.DataFrame(
            {
                "date": [_label(d) for d in index],
                "lambda1_norm": self.lambda1_norm,
                "uniformity": self.uniformity,
            }
        )


def market_and_sector_scopes(panel: LabelledPanel) -> dict[str, list[str]]:
    """The market scope plus one scope per sector."""
    scopes = {MARKET: list(panel.tickers)}
    for sector in panel.sector_names:
        scopes[sector] = panel.sector_members(sector)
    return scopes


def _named_scopes(
    scopes: Union[Mapping[str, Sequence[str]], Sequence[Sequence[str]]],
) -> dict[str, list[str]]:
    if isinstance(scopes, Mapping):
        named = {str(name): list(tickers) for name, tickers in scopes.items()}
    else:
        named = {f"scope_{i}": list(tickers) for i, tickers in enumerate(scopes)}
    if not named:
        raise UsageError("At least one scope is required")
    for name, tickers in named.items():
        if not tickers:
            raise UsageError(f"Scope '{name}' is empty")
    return named


def _collectivity_chunk(
    returns: np.ndarray,
    labels: list[str],
    tau: int,
    start: int,
    stop: int,
    scope_rows: list[np.ndarray],
    tol: float,
    max_iter: int,
    refresh_every: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve every scope over the windows start..stop of one refresh chunk."""
    width = stop - start + 1
    lam = np.empty((len(scope_rows), width))
    h = np.empty_like(lam)
    flags = np.zeros(lam.shape, dtype=bool)
    stream = RollingCorrelation(
        returns, tau, labels, start=start, stop=stop, refresh_every=refresh_every
    )
    for w, (t, corr) in enumerate(stream):
        for s, rows in enumerate(scope_rows):
            sub = corr.entries[np.ix_(rows, rows)]
            try:
                result = leading_eigenpair(sub, tol=tol, max_iter=max_iter)
            except CollectivityError as err:
                raise err.with_context(scope_index=s, t=t)
            lam[s, w] = result.normalized_lambda1
            h[s, w] = result.uniformity
            flags[s, w] = result.degenerate
    return lam, h, flags


def collectivity_series(
    panel: ReturnPanel,
    tau: int = TAU,
    scopes: Optional[
        Union[Mapping[str, Sequence[str]], Sequence[Sequence[str]]]
    ] = None,
    threads: int = 1,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    refresh_every: int = REFRESH_EVERY,
) -> list[CollectivitySeries]:
    """Normalised leading eigenvalue and uniformity of every scope over t = tau ... T.

    All scopes are solved on sub-matrices of one correlation stream over the union
    of their tickers. Refresh-aligned chunks of windows run in parallel and are
    reassembled in t order.

    Parameters
    ----------
    panel: ReturnPanel
        Log returns.
    tau: int
        Window length.
    scopes: Mapping[str, Sequence[str]] | Sequence[Sequence[str]], optional
        Named ticker subsets, the market and every sector by default.
    threads: int
        Worker pool width.
    tol: float
        Power-iteration tolerance.
    max_iter: int
        Power-iteration budget.
    refresh_every: int
        Windows between full recomputations of the rolling sums.

    Returns
    -------
    series: list[CollectivitySeries]
        One series per scope, in scope order.

    """
    if scopes is None:
        scopes = market_and_sector_scopes(panel)
    named = _named_scopes(scopes)
    wanted = set().union(*named.values())
    union = [t for t in panel.tickers if t in wanted]
    missing = wanted - set(panel.tickers)
    if missing:
        raise UsageError(f"Scope tickers not in the panel: {sorted(missing)}")
    position = {t: i for i, t in enumerate(union)}
    scope_rows = [
        np.array([position[t] for t in tickers]) for tickers in named.values()
    ]
    returns = panel.returns[panel.indices(union)]
    chunks = window_chunks(tau, panel.length, refresh_every)
    logger.info(
        f"Collectivity of {len(named)} scopes over {panel.length - tau + 1} windows "
        f"(tau={tau}, {len(chunks)} chunks)"
    )
    names = list(named)
    try:
        parts = run_parallel(
            _collectivity_chunk,
            [
                (returns, union, tau, start, stop, scope_rows)
                + (tol, max_iter, refresh_every)
                for start, stop in chunks
            ],
            threads=threads,
        )
    except ZeroVarianceWindow as err:
        owners = [name for name, tickers in named.items() if err.ticker in tickers]
        raise err.with_context(scope=owners[0] if owners else None)
    except CollectivityError as err:
        index = err.context.pop("scope_index", None)
        raise err.with_context(scope=names[index] if index is not None else None)
    lam = np.concatenate([p[0] for p in parts], axis=1)
    h = np.concatenate([p[1] for p in parts], axis=1)
    flags = np.concatenate([p[2] for p in parts], axis=1)
    end_indices = list(range(tau, panel.length + 1))
    dates = [panel.dates[t - 1] for t in end_indices]
    series = []
    for s, name in enumerate(names):
        if flags[s].any():
            logger.warning(
                f"Scope {name}: {int(flags[s].sum())} windows with a degenerate "
                "leading eigenspace, their uniformity is not unique"
            )
        series.append(
            CollectivitySeries(
                scope=name,
                end_indices=end_indices,
                dates=dates,
                lambda1_norm=lam[s],
                uniformity=h[s],
                degenerate=flags[s].tolist(),
            )
        )
    return series

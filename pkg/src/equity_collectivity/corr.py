"""
Rolling Correlation

Pearson cross-correlation matrices of log returns over rolling windows of tau
observations. Window t covers return indices t-tau+1 ... t (1-based), so the
valid end indices run from tau to T.

The stream keeps rolling sums of the shifted returns and their outer products,
updated in O(N^2) per step and recomputed from scratch every `refresh_every`
windows. The refresh schedule is anchored at t = tau so a stream started on any
anchor point reproduces the full stream bit for bit.
"""

from datetime import date
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import Field, field_validator, model_validator
from pydantic_numpy.typing import Np2DArray

from rompy.logging import get_logger

from equity_collectivity.base import ATOL, CollectivityBaseModel, as_float_array
from equity_collectivity.errors import OutOfRangeWindow, UsageError, ZeroVarianceWindow
from equity_collectivity.ingest import ReturnPanel
from equity_collectivity.output import write_csv

logger = get_logger(__name__)

TAU = 120
REFRESH_EVERY = 512
# Relative size of a centred sum of squares below which the window is re-checked
ZERO_VARIANCE_RTOL = 1e-10
# Squared mean drift, relative to the centred sum of squares, that forces a recentre
RECENTRE_RATIO = 1.0
PSD_ATOL = 1e-9


def check_window(tau: int, end_index: int, length: int) -> None:
    """Raise OutOfRangeWindow unless 2 <= tau <= T and tau <= t <= T."""
    if tau < 2 or tau > length or end_index < tau or end_index > length:
        raise OutOfRangeWindow(tau, end_index, length)


class WindowSpec(CollectivityBaseModel):
    """Rolling window of tau return observations ending at end_index."""

    tau: int = Field(default=TAU, description="Window length in trading days")
    end_index: int = Field(description="1-based index t of the last return")

    def check(self, length: int) -> "WindowSpec":
        check_window(self.tau, self.end_index, length)
        return self

    @property
    def columns(self) -> slice:
        """Return-matrix columns covered by the window."""
        return slice(self.end_index - self.tau, self.end_index)


class CorrMatrix(CollectivityBaseModel):
    """Symmetric correlation matrix of one rolling window."""

    labels: list[str] = Field(description="Ordered ticker subset")
    end_index: int = Field(description="1-based index t of the window's last return")
    entries: Np2DArray = Field(description="Correlation matrix")
    window_date: Optional[date] = Field(
        default=None, description="Date of the window's last return"
    )

    @field_validator("entries", mode="before")
    @classmethod
    def float_entries(cls, v):
        return as_float_array(v, ndim=2)

    @model_validator(mode="after")
    def square(self) -> "CorrMatrix":
        size = len(self.labels)
        if self.entries.shape != (size, size):
            raise ValueError(
                f"Entries have shape {self.entries.shape}, expected ({size}, {size})"
            )
        return self

    @classmethod
    def trusted(
        cls,
        labels: list[str],
        end_index: int,
        entries: np.ndarray,
        window_date: Optional[date] = None,
    ) -> "CorrMatrix":
        """Build without validation, for matrices produced by this module."""
        return cls.model_construct(
            labels=labels,
            end_index=end_index,
            entries=entries,
            window_date=window_date,
        )

    @property
    def size(self) -> int:
        return len(self.labels)

    def submatrix(self, tickers: Sequence[str]) -> "CorrMatrix":
        lookup = {t: i for i, t in enumerate(self.labels)}
        idx = np.array([lookup[t] for t in tickers], dtype=int)
        return CorrMatrix.trusted(
            list(tickers),
            self.end_index,
            self.entries[np.ix_(idx, idx)],
            self.window_date,
        )

    def check_invariants(self) -> "CorrMatrix":
        """Verify unit diagonal, symmetry, range, trace and positive semi-definiteness.

        Raises
        ------
        ValueError
            Listing every violated invariant.

        """
        a = self.entries
        failures = []
        if not np.allclose(np.diag(a), 1.0, rtol=0, atol=ATOL):
            failures.append("diagonal is not 1")
        if not np.allclose(a, a.T, rtol=0, atol=ATOL):
            failures.append("matrix is not symmetric")
        if np.any(np.abs(a) > 1 + ATOL):
            failures.append("entries outside [-1, 1]")
        if abs(np.trace(a) - self.size) > PSD_ATOL:
            failures.append("trace differs from the dimension")
        if np.linalg.eigvalsh(a).min() < -PSD_ATOL:
            failures.append("matrix is not positive semi-definite")
        if failures:
            raise ValueError(
                f"Correlation matrix at t={self.end_index} violates: "
                + ", ".join(failures)
            )
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.entries, index=self.labels, columns=self.labels)


def _finalise(corr: np.ndarray) -> np.ndarray:
    """Clip to [-1, 1], symmetrise and set the diagonal to exactly 1."""
    corr = np.clip(corr, -1.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def pearson_window(x: np.ndarray, labels: Sequence[str], end_index: int) -> np.ndarray:
    """Two-pass Pearson correlation of the rows of x (one window)."""
    spread = np.ptp(x, axis=1)
    constant = np.flatnonzero(spread == 0)
    if constant.size:
        raise ZeroVarianceWindow(labels[constant[0]], end_index)
    centred = x - x.mean(axis=1, keepdims=True)
    sxx = np.einsum("it,it->i", centred, centred)
    sxy = np.einsum("it,jt->ij", centred, centred)
    return _finalise(sxy / np.sqrt(np.outer(sxx, sxx)))


def _subset_rows(panel: ReturnPanel, subset: Optional[Sequence[str]]):
    if subset is None:
        subset = panel.tickers
    subset = list(subset)
    if not subset:
        raise UsageError("The ticker subset must not be empty")
    return subset, panel.indices(subset)


def window_correlation(
    panel: ReturnPanel, spec: WindowSpec, subset: Optional[Sequence[str]] = None
) -> CorrMatrix:
    """Correlation matrix of subset over one window.

    Parameters
    ----------
    panel: ReturnPanel
        Log returns.
    spec: WindowSpec
        Window length and end index.
    subset: Sequence[str], optional
        Tickers in matrix order, all tickers by default.

    Returns
    -------
    corr: CorrMatrix
        Pearson correlations over the tau observations ending at t.

    Raises
    ------
    OutOfRangeWindow
        The window does not fit in the panel.
    ZeroVarianceWindow
        A series is constant over the window.

    """
    spec.check(panel.length)
    subset, idx = _subset_rows(panel, subset)
    x = panel.returns[idx, spec.columns]
    entries = pearson_window(x, subset, spec.end_index)
    return CorrMatrix.trusted(
        subset, spec.end_index, entries, panel.dates[spec.end_index - 1]
    )


def window_chunks(
    tau: int, length: int, chunk: int = REFRESH_EVERY
) -> list[tuple[int, int]]:
    """Split end indices tau..T into refresh-aligned inclusive (start, stop) ranges."""
    check_window(tau, tau, length)
    return [
        (start, min(start + chunk - 1, length))
        for start in range(tau, length + 1, chunk)
    ]


class RollingCorrelation:
    """Incremental stream of window correlation matrices over a return matrix.

    Parameters
    ----------
    returns: np.ndarray
        N x T return matrix, rows in label order.
    tau: int
        Window length.
    labels: Sequence[str]
        Row labels.
    dates: Sequence[date], optional
        Date of every return column.
    start: int, optional
        First end index, tau by default.
    stop: int, optional
        Last end index (inclusive), T by default.
    refresh_every: int
        Number of windows between full recomputations of the rolling sums. A window
        mean that drifts far from the last shift forces an early recomputation.
    dump_dir: Path, optional
        Write every emitted matrix to `corr_<t>.csv` in this directory.

    """

    def __init__(
        self,
        returns: np.ndarray,
        tau: int,
        labels: Sequence[str],
        dates: Optional[Sequence[date]] = None,
        start: Optional[int] = None,
        stop: Optional[int] = None,
        refresh_every: int = REFRESH_EVERY,
        dump_dir: Optional[Union[str, Path]] = None,
    ):
        self.returns = np.asarray(returns, dtype=np.float64)
        self.labels = list(labels)
        self.tau = tau
        self.length = self.returns.shape[1]
        self.start = tau if start is None else start
        self.stop = self.length if stop is None else stop
        check_window(tau, self.start, self.length)
        check_window(tau, self.stop, self.length)
        if refresh_every < 1:
            raise UsageError(f"refresh_every must be >= 1, got {refresh_every}")
        self.refresh_every = refresh_every
        self.dates = list(dates) if dates is not None else None
        self.dump_dir = Path(dump_dir) if dump_dir is not None else None
        self._shift = np.zeros(self.returns.shape[0])
        self._s1 = None
        self._s2 = None
        self._mass = None

    def __len__(self) -> int:
        return max(self.stop - self.start + 1, 0)

    def _window(self, t: int) -> np.ndarray:
        return self.returns[:, t - self.tau : t]

    def _recompute(self, t: int) -> None:
        x = self._window(t)
        self._shift = x.mean(axis=1)
        shifted = x - self._shift[:, None]
        self._s1 = shifted.sum(axis=1)
        self._s2 = np.einsum("it,jt->ij", shifted, shifted)
        self._mass = np.diag(self._s2).copy()

    def _advance(self, t: int) -> None:
        new = self.returns[:, t - 1] - self._shift
        old = self.returns[:, t - 1 - self.tau] - self._shift
        self._s1 += new - old
        self._s2 += np.outer(new, new) - np.outer(old, old)
        self._mass += new**2 + old**2

    def _drifted(self) -> bool:
        """Whether a window mean has moved far from the shift of the last refresh."""
        drift = self._s1**2 / self.tau
        sxx = np.diag(self._s2) - drift
        return bool(np.any(drift > RECENTRE_RATIO * np.maximum(sxx, 0.0)))

    def _correlation(self, t: int) -> np.ndarray:
        sxy = self._s2 - np.outer(self._s1, self._s1) / self.tau
        sxx = np.diag(sxy).copy()
        # _mass bounds the rounding error accumulated on the diagonal since refresh
        if np.any(sxx <= ZERO_VARIANCE_RTOL * self._mass):
            # Near-constant series: settle it on the exact window
            return pearson_window(self._window(t), self.labels, t)
        return _finalise(sxy / np.sqrt(np.outer(sxx, sxx)))

    def __iter__(self) -> Iterator[tuple[int, CorrMatrix]]:
        for t in range(self.start, self.stop + 1):
            if t == self.start or (t - self.tau) % self.refresh_every == 0:
                self._recompute(t)
            else:
                self._advance(t)
                if self._drifted():
                    self._recompute(t)
            try:
                entries = self._correlation(t)
            except ZeroVarianceWindow as err:
                logger.error(f"Zero-variance window at t={t}: {err}")
                raise
            day = self.dates[t - 1] if self.dates is not None else None
            corr = CorrMatrix.trusted(self.labels, t, entries, day)
            if self.dump_dir is not None:
                write_csv(corr.to_frame(), self.dump_dir / f"corr_{t}.csv", index=True)
            yield t, corr


def correlation_series(
    panel: ReturnPanel,
    tau: int = TAU,
    subset: Optional[Sequence[str]] = None,
    refresh_every: int = REFRESH_EVERY,
    dump_dir: Optional[Union[str, Path]] = None,
) -> Iterator[tuple[int, CorrMatrix]]:
    """Stream (t, CorrMatrix) for t = tau ... T.

    Parameters
    ----------
    panel: ReturnPanel
        Log returns.
    tau: int
        Window length.
    subset: Sequence[str], optional
        Tickers in matrix order, all tickers by default.
    refresh_every: int
        Windows between full recomputations of the rolling sums.
    dump_dir: Path, optional
        Debug dump directory for per-window CSV files.

    Returns
    -------
    stream: Iterator[tuple[int, CorrMatrix]]
        Exactly T - tau + 1 matrices with strictly increasing end index.

    """
    check_window(tau, tau, panel.length)
    subset, idx = _subset_rows(panel, subset)
    logger.debug(
        f"Streaming {panel.length - tau + 1} windows of tau={tau} over "
        f"{len(subset)} tickers"
    )
    return iter(
        RollingCorrelation(
            panel.returns[idx],
            tau,
            subset,
            dates=panel.dates,
            refresh_every=refresh_every,
            dump_dir=dump_dir,
        )
    )

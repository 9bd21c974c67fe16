"""
Price Ingest

This module loads daily close prices and the sector classification from delimited
text files, aligns and cleans the panel and computes log returns.

File formats
------------
* prices.csv: `date,TICK1,TICK2,...`, one row per trading day with ISO-8601 dates,
  an empty cell is a missing close.
* sectors.csv: `ticker,sector`, one row per ticker.

"""

from datetime import date
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_numpy.typing import Np2DArray

from rompy.logging import get_logger

from equity_collectivity.base import CollectivityBaseModel, as_float_array
from equity_collectivity.errors import (
    DataError,
    EmptyPanel,
    MissingSector,
    NonFinitePrice,
    NonPositivePrice,
    TooManyGaps,
    UnparsableDate,
    UsageError,
)
from equity_collectivity.output import write_csv, write_json
from equity_collectivity.types import RemovalReason

logger = get_logger(__name__)

GAP_LIMIT = 5
DROP_FRACTION = 0.1

PathLike = Union[str, Path]


class Removal(CollectivityBaseModel):
    """A ticker removed while cleaning the raw panel."""

    ticker: str = Field(description="Removed ticker")
    reason: RemovalReason = Field(description="Cleaning rule the ticker violated")


class LabelledPanel(CollectivityBaseModel):
    """Base class for panels of per-ticker series sharing labels and a sector map.

    This class is not intended to be used directly, but to be subclassed by the
    price and return panels which add the data matrix.

    """

    tickers: list[str] = Field(description="Equity identifiers, one per matrix row")
    sectors: dict[str, str] = Field(description="Sector of every ticker")
    dates: list[date] = Field(description="Strictly increasing trading dates")

    @field_validator("tickers")
    @classmethod
    def unique_tickers(cls, v: list[str]) -> list[str]:
        if len(set(v)) != len(v):
            raise ValueError("Tickers must be unique")
        if not v:
            raise ValueError("A panel needs at least one ticker")
        return v

    @field_validator("dates")
    @classmethod
    def increasing_dates(cls, v: list[date]) -> list[date]:
        if any(b <= a for a, b in zip(v[:-1], v[1:])):
            raise ValueError("Dates must be strictly increasing without duplicates")
        return v

    @model_validator(mode="after")
    def sector_map_matches_tickers(self) -> "LabelledPanel":
        missing = [t for t in self.tickers if t not in self.sectors]
        if missing:
            raise ValueError(f"Tickers without a sector: {missing}")
        extra = set(self.sectors) - set(self.tickers)
        if extra:
            raise ValueError(
                f"Sector map has tickers outside the panel: {sorted(extra)}"
            )
        return self

    @property
    def n_tickers(self) -> int:
        return len(self.tickers)

    @property
    def sector_names(self) -> list[str]:
        """Sorted distinct sector names."""
        return sorted(set(self.sectors.values()))

    def sector_members(self, sector: str) -> list[str]:
        """Tickers of sector in panel order."""
        members = [t for t in self.tickers if self.sectors[t] == sector]
        if not members:
            raise UsageError(f"Unknown sector '{sector}'")
        return members

    def indices(self, tickers: Sequence[str]) -> np.ndarray:
        """Row indices of tickers."""
        lookup = {t: i for i, t in enumerate(self.tickers)}
        try:
            return np.array([lookup[t] for t in tickers], dtype=int)
        except KeyError as err:
            raise UsageError(f"Ticker {err} is not in the panel") from err


class PricePanel(LabelledPanel):
    """Aligned daily close prices for N equities over T+1 dates.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from datetime import date
        from equity_collectivity.ingest import PricePanel
        panel = PricePanel(
            tickers=["A", "B"],
            sectors={"A": "Tech", "B": "Energy"},
            dates=[date(2020, 1, 2), date(2020, 1, 3)],
            prices=[[100.0, 110.0], [50.0, 25.0]],
        )
        panel.length

    """

    prices: Np2DArray = Field(description="N x (T+1) matrix of positive closes")
    removals: list[Removal] = Field(
        default_factory=list, description="Tickers removed while cleaning"
    )

    @field_validator("prices", mode="before")
    @classmethod
    def float_prices(cls, v):
        return as_float_array(v, ndim=2)

    @model_validator(mode="after")
    def valid_prices(self) -> "PricePanel":
        if self.prices.shape != (len(self.tickers), len(self.dates)):
            raise ValueError(
                f"Prices have shape {self.prices.shape}, expected "
                f"({len(self.tickers)}, {len(self.dates)})"
            )
        if not np.all(np.isfinite(self.prices)):
            raise ValueError("Prices must not have missing cells")
        if np.any(self.prices <= 0):
            raise ValueError("Prices must be strictly positive")
        return self

    @property
    def length(self) -> int:
        """Number of return observations T."""
        return len(self.dates) - 1

    def subset(self, tickers: Sequence[str]) -> "PricePanel":
        """Panel restricted to tickers, in the given order."""
        idx = self.indices(tickers)
        return PricePanel(
            tickers=list(tickers),
            sectors={t: self.sectors[t] for t in tickers},
            dates=self.dates,
            prices=self.prices[idx],
        )

    def to_frame(self) -> pd.DataFrame:
        """Prices as a frame indexed by date with one column per ticker."""
        return pd.DataFrame(
            self.prices.T,
            index=pd.DatetimeIndex(pd.to_datetime(self.dates), name="date"),
            columns=self.tickers,
        )


class ReturnPanel(LabelledPanel):
    """N x T matrix of log returns sharing the price panel labels.

    `dates[t]` is the date of the close ending return t.

    """

    returns: Np2DArray = Field(description="N x T matrix of log returns")

    @field_validator("returns", mode="before")
    @classmethod
    def float_returns(cls, v):
        return as_float_array(v, ndim=2)

    @model_validator(mode="after")
    def valid_returns(self) -> "ReturnPanel":
        if self.returns.shape != (len(self.tickers), len(self.dates)):
            raise ValueError(
                f"Returns have shape {self.returns.shape}, expected "
                f"({len(self.tickers)}, {len(self.dates)})"
            )
        if not np.all(np.isfinite(self.returns)):
            raise ValueError("Returns must be finite")
        return self

    @property
    def length(self) -> int:
        """Number of return observations T."""
        return len(self.dates)

    def subset(self, tickers: Sequence[str]) -> "ReturnPanel":
        """Panel restricted to tickers, in the given order."""
        idx = self.indices(tickers)
        return ReturnPanel(
            tickers=list(tickers),
            sectors={t: self.sectors[t] for t in tickers},
            dates=self.dates,
            returns=self.returns[idx],
        )


def log_returns(panel: PricePanel) -> ReturnPanel:
    """Log returns r_i(t) = ln(c_i(t) / c_i(t-1)) of every ticker.

    Parameters
    ----------
    panel: PricePanel
        Validated price panel with T+1 dates.

    Returns
    -------
    returns: ReturnPanel
        N x T log returns, dates drop the first price date.

    """
    prices = panel.prices
    returns = np.log(prices[:, 1:] / prices[:, :-1])
    return ReturnPanel(
        tickers=panel.tickers,
        sectors=panel.sectors,
        dates=panel.dates[1:],
        returns=returns,
    )


def _longest_gap(series: pd.Series) -> int:
    """Longest run of consecutive missing values in series."""
    missing = series.isna()
    if not missing.any():
        return 0
    runs = missing.groupby((~missing).cumsum()).sum()
    return int(runs.max())


def align_and_clean(
    raw: Union[pd.DataFrame, PricePanel],
    sectors: Optional[dict[str, str]] = None,
    gap_limit: int = GAP_LIMIT,
    drop_fraction: float = DROP_FRACTION,
    strict: bool = False,
) -> PricePanel:
    """Align a raw price panel with gaps onto a rectangular validated panel.

    Cleaning runs in this order:

    1. Tickers missing more than `drop_fraction` of all dates are removed.
    2. Dates are restricted to the intersection of the available ranges of the
       retained tickers, and tickers with an interior run of more than
       `gap_limit` consecutive missing closes are removed. This step repeats until
       no ticker is removed.
    3. The remaining gaps are forward-filled with the last prior close.

    Parameters
    ----------
    raw: pd.DataFrame | PricePanel
        Prices indexed by date with one column per ticker (NaN = missing), or an
        already clean panel.
    sectors: dict[str, str], optional
        Sector of every ticker, required when raw is a frame.
    gap_limit: int
        Longest run of consecutive missing closes that is forward-filled.
    drop_fraction: float
        Largest tolerated fraction of missing dates per ticker.
    strict: bool
        Raise `TooManyGaps` on the first violation instead of dropping.

    Returns
    -------
    panel: PricePanel
        Clean panel with the removal report attached.

    """
    removals: list[Removal] = []
    if isinstance(raw, PricePanel):
        removals = list(raw.removals)
        sectors = raw.sectors
        frame = raw.to_frame()
    else:
        if sectors is None:
            raise UsageError("A sector map is required to clean a raw price frame")
        frame = raw.sort_index()
    frame = frame.astype(float)

    def _remove(tickers: list[str], reason: RemovalReason) -> None:
        for ticker in tickers:
            if strict:
                raise TooManyGaps(ticker, reason.value)
            logger.warning(f"Removing ticker {ticker}: {reason.value}")
            removals.append(Removal(ticker=ticker, reason=reason))

    if len(frame.index):
        fraction = frame.isna().mean(axis=0)
        dropped = [t for t in frame.columns if fraction[t] > drop_fraction]
        empty = [t for t in frame.columns if t not in dropped and fraction[t] >= 1.0]
        _remove(dropped + empty, RemovalReason.MISSING_FRACTION)
        frame = frame.drop(columns=dropped + empty)

    while True:
        if frame.shape[1] == 0 or frame.shape[0] == 0:
            raise EmptyPanel()
        first = max(frame[t].first_valid_index() for t in frame.columns)
        last = min(frame[t].last_valid_index() for t in frame.columns)
        if first > last:
            raise EmptyPanel("Ticker date ranges do not overlap")
        frame = frame.loc[first:last]
        gaps = {t: _longest_gap(frame[t]) for t in frame.columns}
        dropped = [t for t in frame.columns if gaps[t] > gap_limit]
        if not dropped:
            break
        _remove(dropped, RemovalReason.TOO_MANY_GAPS)
        frame = frame.drop(columns=dropped)

    frame = frame.ffill()
    tickers = [str(t) for t in frame.columns]
    return PricePanel(
        tickers=tickers,
        sectors={t: sectors[t] for t in tickers},
        dates=[pd.Timestamp(d).date() for d in frame.index],
        prices=frame.to_numpy().T,
        removals=removals,
    )


def _read_sectors(sector_source: PathLike) -> dict[str, str]:
    table = pd.read_csv(sector_source, dtype=str, skipinitialspace=True)
    table.columns = [str(c).strip().lower() for c in table.columns]
    if not {"ticker", "sector"} <= set(table.columns):
        raise DataError(
            f"Sector file {sector_source} needs 'ticker' and 'sector' columns"
        )
    table = table.dropna(subset=["ticker"])
    sectors: dict[str, str] = {}
    for ticker, sector in zip(table["ticker"].str.strip(), table["sector"]):
        if pd.isna(sector) or not str(sector).strip():
            continue
        sector = str(sector).strip()
        if sectors.setdefault(ticker, sector) != sector:
            raise DataError(
                f"Ticker '{ticker}' is mapped to two sectors", ticker=ticker
            )
    return sectors


def _read_prices(price_source: PathLike) -> pd.DataFrame:
    table = pd.read_csv(price_source, dtype=str, skipinitialspace=True)
    columns = [str(c).strip() for c in table.columns]
    table.columns = columns
    date_column = "date" if "date" in columns else columns[0]
    dates = pd.to_datetime(table[date_column], format="ISO8601", errors="coerce")
    bad = np.flatnonzero(dates.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise UnparsableDate(row + 1, table[date_column].iloc[row])
    if dates.duplicated().any():
        dup = dates[dates.duplicated()].iloc[0]
        raise DataError(f"Duplicate date {dup.date()} in {price_source}")
    values = table.drop(columns=[date_column])
    try:
        values = values.astype(np.float64)
    except (ValueError, TypeError) as err:
        raise DataError(f"Non-numeric close in {price_source}: {err}") from err
    values.index = pd.DatetimeIndex(dates, name="date")
    return values.sort_index()


def load_price_panel(
    price_source: PathLike,
    sector_source: PathLike,
    gap_limit: int = GAP_LIMIT,
    drop_fraction: float = DROP_FRACTION,
    strict: bool = False,
) -> PricePanel:
    """Load and validate a price panel from prices.csv and sectors.csv files.

    Parameters
    ----------
    price_source: str | Path
        Price file with a date column plus one column per ticker.
    sector_source: str | Path
        Sector file mapping ticker to sector, extra tickers are ignored.
    gap_limit: int
        Longest forward-filled run of missing closes.
    drop_fraction: float
        Largest tolerated fraction of missing dates per ticker.
    strict: bool
        Raise instead of dropping tickers that violate the cleaning policy.

    Returns
    -------
    panel: PricePanel
        Clean validated panel with its removal report.

    Raises
    ------
    MissingSector
        A price ticker is absent from the sector map.
    NonFinitePrice
        A close is infinite.
    NonPositivePrice
        A close is zero or negative.
    UnparsableDate
        A date cannot be parsed, `row` is the 1-based data row.
    TooManyGaps
        Strict mode only, a ticker violates the cleaning policy.

    """
    logger.info(f"Loading prices from {price_source} and sectors from {sector_source}")
    sectors = _read_sectors(sector_source)
    frame = _read_prices(price_source)
    for ticker in frame.columns:
        if ticker not in sectors:
            raise MissingSector(ticker)
    values = frame.to_numpy()
    bad = np.argwhere(np.isinf(values))
    if bad.size:
        row, col = bad[0]
        raise NonFinitePrice(
            frame.columns[col], frame.index[row].date(), float(values[row, col])
        )
    bad = np.argwhere(values <= 0)
    if bad.size:
        row, col = bad[0]
        raise NonPositivePrice(
            frame.columns[col], frame.index[row].date(), float(values[row, col])
        )
    try:
        panel = align_and_clean(
            frame,
            sectors={t: sectors[t] for t in frame.columns},
            gap_limit=gap_limit,
            drop_fraction=drop_fraction,
            strict=strict,
        )
    except ValidationError as err:
        raise DataError(f"Invalid price panel from {price_source}: {err}") from err
    logger.info(
        f"Loaded {panel.n_tickers} tickers in {len(panel.sector_names)} sectors "
        f"over {len(panel.dates)} dates ({len(panel.removals)} removed)"
    )
    return panel


def write_price_panel(panel: PricePanel, directory: PathLike) -> dict[str, Path]:
    """Emit prices.csv, sectors.csv and removals.json in the ingest formats."""
    directory = Path(directory)
    sectors = pd.DataFrame(
        {"ticker": panel.tickers, "sector": [panel.sectors[t] for t in panel.tickers]}
    )
    prices = panel.to_frame()
    prices.index = [d.isoformat() for d in panel.dates]
    prices.index.name = "date"
    return {
        "prices": write_csv(prices, directory / "prices.csv", index=True),
        "sectors": write_csv(sectors, directory / "sectors.csv"),
        "removals": write_json(
            [r.model_dump(mode="json") for r in panel.removals],
            directory / "removals.json",
        ),
    }

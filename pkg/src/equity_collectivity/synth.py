"""
Synthetic Markets

Seeded sector factor markets and degenerate markets used as ground truth for every
downstream diagnostic. Each series draws from its own counter-based stream keyed by
(seed, stream domain, index), so generation order never changes the output.
"""

from datetime import date
from typing import Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import Field, field_validator, model_validator

from rompy.logging import get_logger

from equity_collectivity.base import CollectivityBaseModel
from equity_collectivity.errors import AntiRequiresTwo, UsageError
from equity_collectivity.ingest import PricePanel
from equity_collectivity.parallel import MAX_SEED, rng_for
from equity_collectivity.types import DegenerateKind, RandomStream

logger = get_logger(__name__)

BASE_PRICE = 100.0
START_DATE = date(2000, 1, 3)

DEFAULT_SECTORS = 11
DEFAULT_SECTOR_SIZE = 10
# Daily return scale of degenerate markets
DEGENERATE_VOLATILITY = 0.01


def sector_name(index: int) -> str:
    return f"SECTOR_{index:02d}"


def ticker_name(sector: int, equity: int) -> str:
    return f"S{sector:02d}_E{equity:03d}"


class SynthConfig(CollectivityBaseModel):
    """Sector factor model r_i(t) = v (b_m f(t) + b_s g_s(i)(t) + s e_i(t)).

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.synth import SynthConfig
        config = SynthConfig(n_sectors=3, equities_per_sector=4, length=250)
        config.equities_per_sector
        SynthConfig.from_sector_sizes([2, 5], length=100).n_sectors

    """

    model_type: Literal["synth", "SYNTH"] = Field(
        default="synth", description="Model type discriminator"
    )
    n_sectors: int = Field(
        default=DEFAULT_SECTORS, ge=1, description="Number of sectors"
    )
    equities_per_sector: list[int] = Field(
        default=[DEFAULT_SECTOR_SIZE] * DEFAULT_SECTORS,
        description=(
            "Equities in each sector, a single integer is repeated for every sector"
        ),
    )
    length: int = Field(
        default=1000, ge=1, description="Number of return observations T"
    )
    beta_market: float = Field(default=0.4, ge=0.0, description="Market loading")
    beta_sector: float = Field(default=0.5, ge=0.0, description="Sector loading")
    sigma_idio: float = Field(
        default=0.77, ge=0.0, description="Idiosyncratic volatility"
    )
    volatility: float = Field(
        default=0.01,
        gt=0.0,
        description="Daily return scale applied to the standardised factor model",
    )
    seed: int = Field(default=0, ge=0, le=MAX_SEED, description="64-bit seed")
    start_date: date = Field(
        default=START_DATE, description="First date of the business-day calendar"
    )

    @model_validator(mode="before")
    @classmethod
    def broadcast_sizes(cls, data):
        if isinstance(data, dict):
            sizes = data.get("equities_per_sector")
            n_sectors = data.get("n_sectors", DEFAULT_SECTORS)
            if isinstance(sizes, int):
                data = {**data, "equities_per_sector": [sizes] * n_sectors}
            elif sizes is None and "n_sectors" in data:
                sizes = [DEFAULT_SECTOR_SIZE] * n_sectors
                data = {**data, "equities_per_sector": sizes}
        return data

    @field_validator("equities_per_sector")
    @classmethod
    def positive_sizes(cls, v: list[int]) -> list[int]:
        if any(size < 1 for size in v):
            raise ValueError(f"Sector sizes must be >= 1, got {v}")
        return v

    @model_validator(mode="after")
    def consistent(self) -> "SynthConfig":
        if len(self.equities_per_sector) != self.n_sectors:
            raise ValueError(
                f"{len(self.equities_per_sector)} sector sizes given for "
                f"{self.n_sectors} sectors"
            )
        if self.beta_market**2 + self.beta_sector**2 + self.sigma_idio**2 <= 0:
            raise ValueError("At least one of the loadings must be positive")
        return self

    @classmethod
    def from_sector_sizes(cls, sizes: Sequence[int], **kwargs) -> "SynthConfig":
        """Config with one sector per entry of sizes."""
        return cls(n_sectors=len(sizes), equities_per_sector=list(sizes), **kwargs)

    @property
    def n_tickers(self) -> int:
        return sum(self.equities_per_sector)

    def membership(self) -> np.ndarray:
        """Sector index of every ticker in panel order."""
        return np.repeat(np.arange(self.n_sectors), self.equities_per_sector)


def _calendar(start: date, periods: int) -> list[date]:
    return [d.date() for d in pd.bdate_range(start=start, periods=periods)]


def _prices_from_returns(returns: np.ndarray) -> np.ndarray:
    """Prices 100 exp(cumsum r) with a first close of exactly 100."""
    n = returns.shape[0]
    log_prices = np.concatenate([np.zeros((n, 1)), np.cumsum(returns, axis=1)], axis=1)
    return BASE_PRICE * np.exp(log_prices)


def _standard_normal(
    seed: int, stream: RandomStream, index: int, length: int
) -> np.ndarray:
    return rng_for(seed, stream, index).standard_normal(length)


def factor_returns(config: SynthConfig) -> np.ndarray:
    """N x T return matrix of the factor model."""
    seed, length = config.seed, config.length
    market = _standard_normal(seed, RandomStream.MARKET_FACTOR, 0, length)
    sector = np.stack(
        [
            _standard_normal(seed, RandomStream.SECTOR_FACTOR, s, length)
            for s in range(config.n_sectors)
        ]
    )
    idio = np.stack(
        [
            _standard_normal(seed, RandomStream.IDIOSYNCRATIC, i, length)
            for i in range(config.n_tickers)
        ]
    )
    membership = config.membership()
    return config.volatility * (
        config.beta_market * market[None, :]
        + config.beta_sector * sector[membership]
        + config.sigma_idio * idio
    )


def generate_factor_market(config: SynthConfig) -> PricePanel:
    """Generate a seeded sector factor market.

    Parameters
    ----------
    config: SynthConfig
        Factor model configuration, the same config always yields the same panel.

    Returns
    -------
    panel: PricePanel
        Prices 100 exp(cumsum r) over T+1 business days.

    """
    logger.info(
        f"Generating factor market: {config.n_sectors} sectors, "
        f"{config.n_tickers} equities, T={config.length}, seed={config.seed}"
    )
    tickers, sectors = [], {}
    for s, size in enumerate(config.equities_per_sector):
        for e in range(size):
            ticker = ticker_name(s, e)
            tickers.append(ticker)
            sectors[ticker] = sector_name(s)
    return PricePanel(
        tickers=tickers,
        sectors=sectors,
        dates=_calendar(config.start_date, config.length + 1),
        prices=_prices_from_returns(factor_returns(config)),
    )


def population_correlation(config: SynthConfig) -> np.ndarray:
    """Population correlation matrix implied by the factor model.

    Within a sector the correlation is (b_m^2 + b_s^2) / v and across sectors
    b_m^2 / v, with v = b_m^2 + b_s^2 + s^2.

    """
    variance = config.beta_market**2 + config.beta_sector**2 + config.sigma_idio**2
    membership = config.membership()
    same = membership[:, None] == membership[None, :]
    corr = (config.beta_market**2 + config.beta_sector**2 * same) / variance
    np.fill_diagonal(corr, 1.0)
    return corr


def generate_degenerate_market(
    kind: DegenerateKind,
    n: int,
    length: int,
    seed: int = 0,
    start_date: Optional[date] = None,
) -> PricePanel:
    """Generate a degenerate market with a known correlation structure.

    Parameters
    ----------
    kind: DegenerateKind
        `identical` repeats one series, `independent` draws i.i.d. Gaussian returns
        and `anti` negates the first of two series.
    n: int
        Number of equities, at least 2 (exactly 2 for `anti`).
    length: int
        Number of return observations T.
    seed: int
        64-bit seed.
    start_date: date, optional
        First calendar date.

    Returns
    -------
    panel: PricePanel
        All tickers in a single sector.

    """
    kind = DegenerateKind(kind)
    if kind == DegenerateKind.ANTI and n != 2:
        raise AntiRequiresTwo(n)
    if n < 2:
        raise UsageError(f"A degenerate market needs N >= 2, got N={n}")
    if length < 1:
        raise UsageError(f"A degenerate market needs T >= 1, got T={length}")
    logger.info(f"Generating {kind.value} market: N={n}, T={length}, seed={seed}")
    if kind == DegenerateKind.IDENTICAL:
        base = _standard_normal(seed, RandomStream.IDIOSYNCRATIC, 0, length)
        returns = np.tile(base, (n, 1))
    elif kind == DegenerateKind.INDEPENDENT:
        stream = RandomStream.IDIOSYNCRATIC
        returns = np.stack(
            [_standard_normal(seed, stream, i, length) for i in range(n)]
        )
    else:
        base = _standard_normal(seed, RandomStream.IDIOSYNCRATIC, 0, length)
        returns = np.stack([base, -base])
    returns = DEGENERATE_VOLATILITY * returns
    tickers = [ticker_name(0, e) for e in range(n)]
    return PricePanel(
        tickers=tickers,
        sectors={t: sector_name(0) for t in tickers},
        dates=_calendar(start_date or START_DATE, length + 1),
        prices=_prices_from_returns(returns),
    )

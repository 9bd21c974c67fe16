"""
Portfolio Sampling

Monte-Carlo sampling of (m sectors, n equities) portfolios. For every grid cell D
portfolios are drawn, the normalised leading eigenvalue of each portfolio's
mn x mn correlation matrix is tracked over the rolling windows, and the pointwise
5th, 50th and 95th percentiles across draws summarise the cell:

* mu_{m,n} is the temporal mean of the median curve
* sigma_{m,n} is the temporal mean of the 5-95 percentile spread

Draw d of cell (m, n) uses the portfolio stream keyed by (seed, m, n, d) so results
never depend on scheduling.
"""

from datetime import date
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import Field, field_validator, model_validator
from pydantic_numpy.typing import Np1DArray, Np2DArray

from rompy.logging import get_logger

from equity_collectivity.base import CollectivityBaseModel, as_float_array, log_summary
from equity_collectivity.corr import (
    REFRESH_EVERY,
    TAU,
    RollingCorrelation,
    check_window,
)
from equity_collectivity.errors import (
    CollectivityError,
    EmptyInput,
    IncompleteTable,
    InsufficientEquities,
    InsufficientSectors,
    UsageError,
)
from equity_collectivity.ingest import LabelledPanel, ReturnPanel
from equity_collectivity.parallel import MAX_SEED, rng_for, run_parallel
from equity_collectivity.spectral import (
    BOUND_ATOL,
    CollectivitySeries,
    collectivity_series,
    leading_eigenvalues,
)
from equity_collectivity.types import GreedyMetric, RandomStream

logger = get_logger(__name__)

DRAWS = 500
M_RANGE = (2, 10)
N_RANGE = (2, 9)
PERCENTILES = (0.05, 0.50, 0.95)

Cell = tuple[int, int]


# =====================================================================================
# Percentiles
# =====================================================================================
def percentile(values: Sequence[float], p: float) -> float:
    """Linear-interpolation quantile of values.

    The rank is p (D - 1) and the result interpolates between the order
    statistics at floor and ceil of the rank.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.sampler import percentile
        percentile([1, 2, 3], 0.5)
        percentile([0, 10], 0.05)

    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInput()
    if not 0.0 <= p <= 1.0:
        raise UsageError(f"Percentile p={p} outside [0, 1]")
    return float(np.quantile(values, p, method="linear"))


def percentile_curves(values: np.ndarray, ps: Sequence[float]) -> np.ndarray:
    """Pointwise percentiles of a (D, W) matrix across its D rows.

    Returns
    -------
    curves: np.ndarray
        (len(ps), W) percentile curves.

    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] == 0:
        raise EmptyInput("draws")
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise UsageError(f"Percentile p={p} outside [0, 1]")
    return np.quantile(values, list(ps), axis=0, method="linear")


# =====================================================================================
# Portfolios
# =====================================================================================
class PortfolioSpec(CollectivityBaseModel):
    """A drawn (m, n) portfolio."""

    m: int = Field(ge=1, description="Number of sectors")
    n: int = Field(ge=1, description="Equities per sector")
    chosen: dict[str, list[str]] = Field(description="Chosen tickers per sector")
    draw_index: int = Field(ge=0, description="Draw index d")
    seed_lineage: tuple[int, int, int, int] = Field(
        description="(master seed, m, n, draw index)"
    )

    @model_validator(mode="after")
    def shape(self) -> "PortfolioSpec":
        if len(self.chosen) != self.m:
            raise ValueError(f"{len(self.chosen)} sectors chosen, expected {self.m}")
        for sector, tickers in self.chosen.items():
            if len(set(tickers)) != self.n or len(tickers) != self.n:
                raise ValueError(f"Sector {sector} needs {self.n} distinct tickers")
        return self

    @property
    def tickers(self) -> list[str]:
        """All tickers, sector by sector."""
        return [t for tickers in self.chosen.values() for t in tickers]

    @property
    def portfolio_id(self) -> str:
        return f"portfolio_{self.m}_{self.n}_{self.draw_index}"


def _sector_members(
    sector_map: Union[Mapping[str, str], LabelledPanel],
) -> dict[str, list[str]]:
    if isinstance(sector_map, LabelledPanel):
        sector_map = sector_map.sectors
    members: dict[str, list[str]] = {}
    for ticker in sorted(sector_map):
        members.setdefault(sector_map[ticker], []).append(ticker)
    return {sector: members[sector] for sector in sorted(members)}


def eligible_sectors(
    members: Mapping[str, Sequence[str]], m: int, n: int
) -> list[str]:
    """Sorted sectors holding at least n tickers.

    Raises
    ------
    InsufficientEquities
        No sector holds n tickers.
    InsufficientSectors
        Fewer than m sectors hold n tickers.

    """
    eligible = [sector for sector, tickers in members.items() if len(tickers) >= n]
    if not eligible and members:
        largest = max(members, key=lambda s: len(members[s]))
        raise InsufficientEquities(largest, n, len(members[largest]))
    if len(eligible) < m:
        raise InsufficientSectors(m, len(eligible), n)
    return eligible


def draw_portfolio(
    m: int,
    n: int,
    sector_map: Union[Mapping[str, str], LabelledPanel],
    seed_lineage: tuple[int, int, int, int],
) -> PortfolioSpec:
    """Draw m eligible sectors, then n tickers in each, uniformly without replacement.

    Parameters
    ----------
    m: int
        Number of sectors.
    n: int
        Equities per sector, sectors with fewer tickers are not eligible.
    sector_map: Mapping[str, str] | LabelledPanel
        Sector of every ticker.
    seed_lineage: tuple[int, int, int, int]
        (master seed, m, n, draw index), the draw is fully determined by it.

    Returns
    -------
    spec: PortfolioSpec
        Sectors and tickers in sorted order.

    """
    members = _sector_members(sector_map)
    eligible = eligible_sectors(members, m, n)
    return _draw(m, n, members, eligible, _lineage_rng(seed_lineage), seed_lineage)


def _lineage_rng(seed_lineage: tuple[int, ...]) -> np.random.Generator:
    seed, *coords = seed_lineage
    return rng_for(seed, RandomStream.PORTFOLIO, *coords)


def _draw(m, n, members, eligible, rng, seed_lineage) -> PortfolioSpec:
    picked = sorted(rng.choice(len(eligible), size=m, replace=False))
    chosen = {}
    for s in picked:
        sector = eligible[s]
        tickers = members[sector]
        rows = rng.choice(len(tickers), size=n, replace=False)
        chosen[sector] = sorted(tickers[i] for i in rows)
    return PortfolioSpec(
        m=m,
        n=n,
        chosen=chosen,
        draw_index=seed_lineage[3],
        seed_lineage=seed_lineage,
    )


def portfolio_lambda_series(
    spec: PortfolioSpec, panel: ReturnPanel, tau: int = TAU
) -> CollectivitySeries:
    """Normalised leading eigenvalue of the portfolio over t = tau ... T.

    Returns
    -------
    series: CollectivitySeries
        The collectivity series of the portfolio's tickers.

    """
    return collectivity_series(panel, tau, {spec.portfolio_id: spec.tickers})[0]


# =====================================================================================
# Grid sampling
# =====================================================================================
class PercentileCurves(CollectivityBaseModel):
    """Pointwise percentiles of the normalised leading eigenvalue across draws."""

    cell: tuple[int, int] = Field(description="Grid cell (m, n)")
    end_indices: list[int] = Field(description="Window end indices t = tau ... T")
    dates: list[date] = Field(default_factory=list, description="Date of every t")
    p05: Np1DArray = Field(description="5th percentile curve")
    p50: Np1DArray = Field(description="Median curve")
    p95: Np1DArray = Field(description="95th percentile curve")

    @field_validator("p05", "p50", "p95", mode="before")
    @classmethod
    def float_curves(cls, v):
        return as_float_array(v, ndim=1)

    @model_validator(mode="after")
    def ordered(self) -> "PercentileCurves":
        size = len(self.end_indices)
        if {self.p05.size, self.p50.size, self.p95.size} != {size}:
            raise ValueError("Curve lengths differ from the number of windows")
        if self.dates and len(self.dates) != size:
            raise ValueError("One date is required per window")
        if np.any(self.p05 > self.p50) or np.any(self.p50 > self.p95):
            raise ValueError("Percentile curves must satisfy p05 <= p50 <= p95")
        return self

    @property
    def mu(self) -> float:
        return float(np.mean(self.p50))

    @property
    def sigma(self) -> float:
        return float(np.mean(self.p95 - self.p05))

    def to_frame(self) -> pd.DataFrame:
        """Frame with columns `date,p05,p50,p95`."""
        if self.dates:
            index = [d.isoformat() for d in self.dates]
        else:
            index = list(self.end_indices)
        return pd.DataFrame(
            {"date": index, "p05": self.p05, "p50": self.p50, "p95": self.p95}
        )


class InfeasibleCell(CollectivityBaseModel):
    m: int
    n: int
    reason: str


class GridSummary(CollectivityBaseModel):
    """mu and sigma tables over the (m, n) grid, NaN for infeasible cells.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.sampler import reference_summary
        summary = reference_summary()
        summary.value((2, 2)), summary.value((10, 9), "sigma")

    """

    m_values: list[int] = Field(description="Sector counts, table rows")
    n_values: list[int] = Field(description="Equities per sector, table columns")
    mu: Np2DArray = Field(description="Temporal mean of the median curve")
    sigma: Np2DArray = Field(description="Temporal mean of the 5-95 spread")
    draws: Optional[int] = Field(default=None, description="Draws per cell D")
    master_seed: Optional[int] = Field(default=None, description="Master seed")
    tau: Optional[int] = Field(default=None, description="Window length")
    infeasible: list[InfeasibleCell] = Field(
        default_factory=list, description="Skipped cells with reasons"
    )

    @field_validator("mu", "sigma", mode="before")
    @classmethod
    def float_tables(cls, v):
        return as_float_array(v, ndim=2)

    @model_validator(mode="after")
    def consistent(self) -> "GridSummary":
        shape = (len(self.m_values), len(self.n_values))
        if self.mu.shape != shape or self.sigma.shape != shape:
            raise ValueError(f"Tables must have shape {shape}")
        mu = self.mu[~np.isnan(self.mu)]
        if np.any(mu <= 0) or np.any(mu > 1 + BOUND_ATOL):
            raise ValueError("mu values must lie in (0, 1]")
        if np.any(self.sigma[~np.isnan(self.sigma)] < 0):
            raise ValueError("sigma values must be nonnegative")
        return self

    @property
    def cells(self) -> list[Cell]:
        return [(m, n) for m in self.m_values for n in self.n_values]

    def table(self, metric: Union[GreedyMetric, str] = GreedyMetric.MU) -> np.ndarray:
        return self.mu if GreedyMetric(metric) == GreedyMetric.MU else self.sigma

    def value(
        self, cell: Cell, metric: Union[GreedyMetric, str] = GreedyMetric.MU
    ) -> float:
        """Table value at cell.

        Raises
        ------
        IncompleteTable
            The cell is outside the table or has no value.

        """
        m, n = cell
        if m not in self.m_values or n not in self.n_values:
            raise IncompleteTable(cell)
        value = self.table(metric)[self.m_values.index(m), self.n_values.index(n)]
        if np.isnan(value):
            raise IncompleteTable(cell)
        return float(value)

    def complete(self, start: Cell, end: Cell) -> bool:
        """Whether every cell between start and end has a mu and a sigma value."""
        (m0, n0), (m1, n1) = start, end
        for m in range(m0, m1 + 1):
            for n in range(n0, n1 + 1):
                if m not in self.m_values or n not in self.n_values:
                    return False
                i, j = self.m_values.index(m), self.n_values.index(n)
                if np.isnan(self.mu[i, j]) or np.isnan(self.sigma[i, j]):
                    return False
        return True

    def complete_corner(self, start: Cell, end: Cell) -> Cell:
        """Largest end, shrinking m first and then n, whose rectangle is complete.

        Raises
        ------
        IncompleteTable
            Not even the start cell has a value.

        """
        m_end, n_end = end
        while m_end >= start[0] and not self.complete(start, (m_end, n_end)):
            m_end -= 1
        if m_end < start[0]:
            raise IncompleteTable(start)
        while n_end >= start[1] and not self.complete(start, (m_end, n_end)):
            n_end -= 1
        if n_end < start[1]:
            raise IncompleteTable(start)
        return m_end, n_end

    def to_frame(self, metric: Union[GreedyMetric, str] = GreedyMetric.MU):
        """Table laid out with one row per m and one column per n."""
        frame = pd.DataFrame(
            self.table(metric),
            index=pd.Index(self.m_values, name="m"),
            columns=[str(n) for n in self.n_values],
        )
        return frame

    @classmethod
    def from_frames(cls, mu: pd.DataFrame, sigma: pd.DataFrame, **kwargs):
        """Summary from m x n frames as written by `to_frame`."""
        return cls(
            m_values=[int(m) for m in mu.index],
            n_values=[int(n) for n in mu.columns],
            mu=mu.to_numpy(dtype=float),
            sigma=sigma.loc[mu.index, mu.columns].to_numpy(dtype=float),
            **kwargs,
        )


class SamplingResult(CollectivityBaseModel):
    """Percentile curves per feasible cell plus the grid summary."""

    curves: dict[str, PercentileCurves] = Field(
        description="Curves keyed by '<m>_<n>'"
    )
    summary: GridSummary = Field(description="mu and sigma tables")

    def cell_curves(self, cell: Cell) -> PercentileCurves:
        return self.curves[cell_key(cell)]


def cell_key(cell: Cell) -> str:
    return f"{cell[0]}_{cell[1]}"


def _sample_cell(
    returns: np.ndarray,
    labels: list[str],
    tau: int,
    rows: np.ndarray,
    refresh_every: int,
) -> np.ndarray:
    """Normalised leading eigenvalues of every draw of one cell.

    Parameters
    ----------
    returns: np.ndarray
        Returns of the union of the cell's tickers.
    rows: np.ndarray
        (D, mn) rows of each draw's tickers in returns.

    Returns
    -------
    values: np.ndarray
        (D, W) normalised leading eigenvalues.

    """
    size = rows.shape[1]
    out = []
    for _, corr in RollingCorrelation(
        returns, tau, labels, refresh_every=refresh_every
    ):
        stack = corr.entries[rows[:, :, None], rows[:, None, :]]
        out.append(leading_eigenvalues(stack) / size)
    return np.stack(out, axis=1)


def _cell_task(panel: ReturnPanel, specs: list[PortfolioSpec]):
    union = sorted({t for spec in specs for t in spec.tickers})
    position = {t: i for i, t in enumerate(union)}
    rows = np.array([[position[t] for t in spec.tickers] for spec in specs])
    return panel.returns[panel.indices(union)], union, rows


def sample_grid(
    panel: ReturnPanel,
    tau: int = TAU,
    m_range: tuple[int, int] = M_RANGE,
    n_range: tuple[int, int] = N_RANGE,
    draws: int = DRAWS,
    master_seed: int = 0,
    threads: int = 1,
    refresh_every: int = REFRESH_EVERY,
) -> SamplingResult:
    """Sample D portfolios in every cell of the (m, n) grid.

    Parameters
    ----------
    panel: ReturnPanel
        Log returns with the sector map.
    tau: int
        Window length.
    m_range: tuple[int, int]
        Inclusive range of sector counts.
    n_range: tuple[int, int]
        Inclusive range of equities per sector.
    draws: int
        Draws per cell D.
    master_seed: int
        Master seed of every draw.
    threads: int
        Worker pool width, cells run in parallel.
    refresh_every: int
        Windows between full recomputations of the rolling sums.

    Returns
    -------
    result: SamplingResult
        Percentile curves of the feasible cells and the summary tables, infeasible
        cells are reported and skipped.

    """
    if draws < 1:
        raise UsageError(f"At least one draw per cell is required, got {draws}")
    if not 0 <= master_seed <= MAX_SEED:
        raise UsageError(f"Master seed {master_seed} outside [0, 2**64 - 1]")
    m_values = list(range(m_range[0], m_range[1] + 1))
    n_values = list(range(n_range[0], n_range[1] + 1))
    if not m_values or not n_values or m_values[0] < 1 or n_values[0] < 1:
        raise UsageError(f"Invalid grid m={m_range}, n={n_range}")
    check_window(tau, tau, panel.length)

    log_summary(
        "PORTFOLIO SAMPLING",
        [
            f"Grid: m={m_range[0]}..{m_range[1]}, n={n_range[0]}..{n_range[1]}",
            f"Draws per cell: {draws}",
            f"Window: tau={tau}",
            f"Master seed: {master_seed}",
        ],
        logger,
    )
    members = _sector_members(panel)
    feasible: list[Cell] = []
    infeasible: list[InfeasibleCell] = []
    tasks = []
    for m in m_values:
        for n in n_values:
            try:
                eligible = eligible_sectors(members, m, n)
            except CollectivityError as err:
                logger.warning(f"Skipping cell ({m}, {n}): {err}")
                infeasible.append(InfeasibleCell(m=m, n=n, reason=str(err)))
                continue
            specs = [
                _draw(m, n, members, eligible, _lineage_rng(lineage), lineage)
                for lineage in ((master_seed, m, n, d) for d in range(draws))
            ]
            feasible.append((m, n))
            returns, union, rows = _cell_task(panel, specs)
            tasks.append((returns, union, tau, rows, refresh_every))
    results = run_parallel(_sample_cell, tasks, threads=threads)

    end_indices = list(range(tau, panel.length + 1))
    dates = [panel.dates[t - 1] for t in end_indices]
    mu = np.full((len(m_values), len(n_values)), np.nan)
    sigma = np.full_like(mu, np.nan)
    curves = {}
    for cell, values in zip(feasible, results):
        p05, p50, p95 = percentile_curves(values, PERCENTILES)
        cell_curves = PercentileCurves(
            cell=cell, end_indices=end_indices, dates=dates, p05=p05, p50=p50, p95=p95
        )
        curves[cell_key(cell)] = cell_curves
        i, j = m_values.index(cell[0]), n_values.index(cell[1])
        mu[i, j] = cell_curves.mu
        sigma[i, j] = cell_curves.sigma
        logger.info(
            f"Cell ({cell[0]}, {cell[1]}): mu={mu[i, j]:.4f} sigma={sigma[i, j]:.4f}"
        )
    summary = GridSummary(
        m_values=m_values,
        n_values=n_values,
        mu=mu,
        sigma=sigma,
        draws=draws,
        master_seed=master_seed,
        tau=tau,
        infeasible=infeasible,
    )
    return SamplingResult(curves=curves, summary=summary)


# =====================================================================================
# Greedy path
# =====================================================================================
def greedy_path(
    summary: GridSummary,
    start: Cell = (2, 2),
    end: Cell = (10, 9),
    metric: Union[GreedyMetric, str] = GreedyMetric.MU,
) -> list[Cell]:
    """Greedy size-growth path from start to end.

    From each cell the path steps to (m+1, n) or (m, n+1), whichever has the smaller
    table value, preferring (m+1, n) on ties. Once m (or n) reaches its end value
    only the other coordinate grows.

    Parameters
    ----------
    summary: GridSummary
        Tables covering the rectangle between start and end.
    start: tuple[int, int]
        First cell.
    end: tuple[int, int]
        Last cell.
    metric: GreedyMetric | str
        Table followed by the path, `mu` or `sigma`.

    Returns
    -------
    path: list[tuple[int, int]]
        Ordered cells from start to end.

    Raises
    ------
    IncompleteTable
        A cell of the rectangle has no value.

    """
    metric = GreedyMetric(metric)
    (m, n), (m_end, n_end) = start, end
    if m > m_end or n > n_end:
        raise UsageError(f"Greedy path end {end} is not reachable from {start}")
    for mm in range(m, m_end + 1):
        for nn in range(n, n_end + 1):
            summary.value((mm, nn), metric)
    path = [(m, n)]
    while (m, n) != (m_end, n_end):
        if m == m_end:
            n += 1
        elif n == n_end:
            m += 1
        elif summary.value((m + 1, n), metric) <= summary.value((m, n + 1), metric):
            m += 1
        else:
            n += 1
        path.append((m, n))
    return path


def path_records(summary: GridSummary, path: Sequence[Cell]) -> list[dict]:
    """Path cells with their mu and sigma, for `greedy_path.json`."""
    return [
        {
            "m": m,
            "n": n,
            "mu": summary.value((m, n), GreedyMetric.MU),
            "sigma": summary.value((m, n), GreedyMetric.SIGMA),
        }
        for m, n in path
    ]


# =====================================================================================
# Published real-market tables (339 US equities, tau=120, D=500)
# =====================================================================================
REFERENCE_M = list(range(2, 11))
REFERENCE_N = list(range(2, 10))

REFERENCE_MU_TABLE = pd.DataFrame(
    [
        [0.520, 0.480, 0.460, 0.450, 0.440, 0.430, 0.420, 0.440],
        [0.450, 0.420, 0.410, 0.406, 0.397, 0.396, 0.388, 0.390],
        [0.420, 0.399, 0.393, 0.386, 0.378, 0.375, 0.373, 0.373],
        [0.400, 0.384, 0.376, 0.369, 0.368, 0.365, 0.363, 0.362],
        [0.389, 0.373, 0.368, 0.363, 0.360, 0.359, 0.356, 0.354],
        [0.379, 0.367, 0.362, 0.358, 0.355, 0.352, 0.351, 0.351],
        [0.373, 0.362, 0.357, 0.354, 0.351, 0.350, 0.348, 0.348],
        [0.368, 0.358, 0.353, 0.349, 0.348, 0.347, 0.345, 0.345],
        [0.364, 0.355, 0.350, 0.348, 0.346, 0.345, 0.344, 0.343],
    ],
    index=pd.Index(REFERENCE_M, name="m"),
    columns=[str(n) for n in REFERENCE_N],
)

REFERENCE_SIGMA_TABLE = pd.DataFrame(
    [
        [0.217, 0.210, 0.203, 0.202, 0.199, 0.195, 0.154, 0.155],
        [0.183, 0.169, 0.159, 0.157, 0.151, 0.150, 0.147, 0.148],
        [0.156, 0.144, 0.138, 0.132, 0.125, 0.127, 0.121, 0.124],
        [0.140, 0.127, 0.118, 0.114, 0.109, 0.106, 0.106, 0.100],
        [0.125, 0.112, 0.104, 0.101, 0.097, 0.093, 0.090, 0.087],
        [0.116, 0.100, 0.095, 0.087, 0.083, 0.079, 0.078, 0.076],
        [0.102, 0.089, 0.081, 0.076, 0.071, 0.069, 0.068, 0.065],
        [0.094, 0.078, 0.070, 0.066, 0.062, 0.059, 0.057, 0.054],
        [0.085, 0.070, 0.062, 0.056, 0.052, 0.048, 0.045, 0.043],
    ],
    index=pd.Index(REFERENCE_M, name="m"),
    columns=[str(n) for n in REFERENCE_N],
)


def reference_summary() -> GridSummary:
    """Published mu and sigma tables as a summary."""
    return GridSummary.from_frames(
        REFERENCE_MU_TABLE, REFERENCE_SIGMA_TABLE, draws=DRAWS, tau=TAU
    )

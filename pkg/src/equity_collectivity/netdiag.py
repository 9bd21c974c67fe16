"""
Network Diagnostics

Each window correlation matrix is read as a weighted graph with adjacency
A_ij = |Psi_ij| (self-loops retained unless `zero_diagonal`). The module computes
the modularity Q of the a-priori sector partition,

    Q = 1/(2e) sum_m sum_{i,j in S_m} (A_ij - k_i k_j / (2e)),

over ordered pairs including i = j, and a baseline of random allocations with the
same group sizes.
"""

from datetime import date
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import Field, field_validator, model_validator
from pydantic_numpy.typing import Np1DArray, Np2DArray

from rompy.logging import get_logger

from equity_collectivity.base import CollectivityBaseModel, as_float_array
from equity_collectivity.corr import (
    REFRESH_EVERY,
    TAU,
    CorrMatrix,
    RollingCorrelation,
    window_chunks,
)
from equity_collectivity.errors import EmptyGraph, SizeMismatch, UsageError
from equity_collectivity.ingest import ReturnPanel
from equity_collectivity.parallel import rng_for, run_parallel
from equity_collectivity.sampler import percentile_curves
from equity_collectivity.types import RandomStream

logger = get_logger(__name__)

BASELINE_DRAWS = 500
BASELINE_PERCENTILES = (0.05, 0.95)


class WeightedGraph(CollectivityBaseModel):
    """Weighted graph of one correlation window."""

    labels: list[str] = Field(description="Vertex labels")
    adjacency: Np2DArray = Field(description="Symmetric adjacency |Psi_ij|")
    degrees: Np1DArray = Field(description="Row sums k_i of the adjacency")
    total_weight: float = Field(description="Total edge weight e = sum(k) / 2")

    @field_validator("adjacency", mode="before")
    @classmethod
    def float_adjacency(cls, v):
        return as_float_array(v, ndim=2)

    @field_validator("degrees", mode="before")
    @classmethod
    def float_degrees(cls, v):
        return as_float_array(v, ndim=1)

    @model_validator(mode="after")
    def consistent(self) -> "WeightedGraph":
        size = len(self.labels)
        if self.adjacency.shape != (size, size) or self.degrees.shape != (size,):
            raise ValueError("Adjacency and degrees do not match the labels")
        if np.any(self.adjacency < 0) or np.any(self.adjacency > 1):
            raise ValueError("Adjacency entries must lie in [0, 1]")
        if not np.array_equal(self.adjacency, self.adjacency.T):
            raise ValueError("Adjacency must be symmetric")
        return self

    @classmethod
    def from_adjacency(
        cls, labels: Sequence[str], adjacency: np.ndarray
    ) -> "WeightedGraph":
        degrees = adjacency.sum(axis=1)
        return cls(
            labels=list(labels),
            adjacency=adjacency,
            degrees=degrees,
            total_weight=float(adjacency.sum()) / 2.0,
        )


def adjacency_from_correlation(
    m: CorrMatrix, zero_diagonal: bool = False
) -> WeightedGraph:
    """Weighted graph with A_ij = |Psi_ij|.

    Parameters
    ----------
    m: CorrMatrix
        Window correlation matrix.
    zero_diagonal: bool
        Drop the self-loops A_ii = 1.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.corr import CorrMatrix
        from equity_collectivity.netdiag import adjacency_from_correlation
        m = CorrMatrix(labels=["a", "b"], end_index=2, entries=[[1, -0.5], [-0.5, 1]])
        graph = adjacency_from_correlation(m)
        graph.degrees, graph.total_weight

    """
    adjacency = np.abs(m.entries)
    if zero_diagonal:
        np.fill_diagonal(adjacency, 0.0)
    return WeightedGraph.from_adjacency(m.labels, adjacency)


class Partition(CollectivityBaseModel):
    """Disjoint nonempty groups of vertex labels."""

    groups: list[list[str]] = Field(description="Disjoint label groups")
    names: Optional[list[str]] = Field(default=None, description="Group names")

    @model_validator(mode="after")
    def disjoint(self) -> "Partition":
        if not self.groups:
            raise ValueError("A partition needs at least one group")
        if any(not group for group in self.groups):
            raise ValueError("Partition groups must be nonempty")
        labels = [label for group in self.groups for label in group]
        if len(set(labels)) != len(labels):
            raise ValueError("Partition groups must be disjoint")
        if self.names is not None and len(self.names) != len(self.groups):
            raise ValueError("One name is required per group")
        return self

    @classmethod
    def from_sectors(
        cls, sectors: Mapping[str, str], tickers: Optional[Sequence[str]] = None
    ) -> "Partition":
        """One group per sector in sorted sector order, members in ticker order."""
        tickers = list(tickers) if tickers is not None else list(sectors)
        names = sorted({sectors[t] for t in tickers})
        groups = [[t for t in tickers if sectors[t] == name] for name in names]
        return cls(groups=groups, names=names)

    @property
    def labels(self) -> list[str]:
        return [label for group in self.groups for label in group]

    @property
    def sizes(self) -> list[int]:
        return [len(group) for group in self.groups]

    def membership(self, labels: Sequence[str]) -> np.ndarray:
        """Group index of every label, the partition must cover labels exactly."""
        lookup = {label: g for g, group in enumerate(self.groups) for label in group}
        if set(lookup) != set(labels) or len(lookup) != len(labels):
            raise UsageError("Partition labels differ from the graph labels")
        return np.array([lookup[label] for label in labels], dtype=int)


def _one_hot(membership: np.ndarray, n_groups: int) -> np.ndarray:
    return np.eye(n_groups)[membership]


def _modularity(
    adjacency: np.ndarray, degrees: np.ndarray, total: float, onehot: np.ndarray
) -> Union[float, np.ndarray]:
    """Modularity for one (N, G) or a stack of (K, N, G) one-hot memberships."""
    if total <= 0:
        raise EmptyGraph()
    within = np.einsum("...ig,...ig->...g", onehot, np.matmul(adjacency, onehot))
    group_degree = np.einsum("...ig,i->...g", onehot, degrees)
    two_e = 2.0 * total
    return (within - group_degree**2 / two_e).sum(axis=-1) / two_e


def modularity(g: WeightedGraph, p: Partition) -> float:
    """Modularity Q of partition p on graph g.

    Raises
    ------
    EmptyGraph
        The graph has zero total edge weight.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        import numpy as np
        from equity_collectivity.netdiag import Partition, WeightedGraph, modularity
        a = np.kron(np.eye(2), np.ones((2, 2)))
        graph = WeightedGraph.from_adjacency(["a", "b", "c", "d"], a)
        modularity(graph, Partition(groups=[["a", "b"], ["c", "d"]]))

    """
    membership = p.membership(g.labels)
    onehot = _one_hot(membership, len(p.groups))
    return float(_modularity(g.adjacency, g.degrees, g.total_weight, onehot))


class ModularitySeries(CollectivityBaseModel):
    """Modularity of a fixed partition over rolling windows."""

    end_indices: list[int] = Field(description="Window end indices t = tau ... T")
    dates: list[date] = Field(default_factory=list, description="Date of every t")
    q: Np1DArray = Field(description="Modularity per window")

    @field_validator("q", mode="before")
    @classmethod
    def float_q(cls, v):
        return as_float_array(v, ndim=1)

    def to_frame(self) -> pd.DataFrame:
        """Frame with columns `date,Q`."""
        return pd.DataFrame({"date": _labels(self), "Q": self.q})


class BaselineResult(CollectivityBaseModel):
    """Modularity of random allocations with the sector size profile."""

    end_indices: list[int] = Field(description="Window end indices t = tau ... T")
    dates: list[date] = Field(default_factory=list, description="Date of every t")
    draws: int = Field(description="Number of random allocations K")
    seed: int = Field(description="Master seed")
    mean: Np1DArray = Field(description="Mean random-allocation Q per window")
    p05: Np1DArray = Field(description="5th percentile per window")
    p95: Np1DArray = Field(description="95th percentile per window")
    values: Np2DArray = Field(description="K x W random-allocation Q")

    def to_frame(self) -> pd.DataFrame:
        """Frame with columns `date,Q_random_mean,Q_random_p05,Q_random_p95`."""
        return pd.DataFrame(
            {
                "date": _labels(self),
                "Q_random_mean": self.mean,
                "Q_random_p05": self.p05,
                "Q_random_p95": self.p95,
            }
        )


def _labels(series) -> list:
    if series.dates:
        return [d.isoformat() for d in series.dates]
    return list(series.end_indices)


def _partition_for(panel: ReturnPanel, p: Optional[Partition]) -> Partition:
    p = p if p is not None else Partition.from_sectors(panel.sectors, panel.tickers)
    missing = set(p.labels) - set(panel.tickers)
    if missing:
        raise UsageError(f"Partition tickers not in the panel: {sorted(missing)}")
    return p


def _modularity_chunk(
    returns: np.ndarray,
    labels: list[str],
    tau: int,
    start: int,
    stop: int,
    onehot: np.ndarray,
    zero_diagonal: bool,
    refresh_every: int,
) -> np.ndarray:
    """Modularity of one (N, G) or (K, N, G) membership over one refresh chunk."""
    stream = RollingCorrelation(
        returns, tau, labels, start=start, stop=stop, refresh_every=refresh_every
    )
    out = []
    for t, corr in stream:
        adjacency = np.abs(corr.entries)
        if zero_diagonal:
            np.fill_diagonal(adjacency, 0.0)
        degrees = adjacency.sum(axis=1)
        try:
            out.append(_modularity(adjacency, degrees, degrees.sum() / 2.0, onehot))
        except EmptyGraph as err:
            raise err.with_context(t=t)
    return np.stack(out, axis=-1)


def _stream_modularity(
    panel: ReturnPanel,
    tau: int,
    labels: list[str],
    onehot: np.ndarray,
    zero_diagonal: bool,
    threads: int,
    refresh_every: int,
) -> np.ndarray:
    returns = panel.returns[panel.indices(labels)]
    chunks = window_chunks(tau, panel.length, refresh_every)
    parts = run_parallel(
        _modularity_chunk,
        [
            (returns, labels, tau, start, stop, onehot, zero_diagonal, refresh_every)
            for start, stop in chunks
        ],
        threads=threads,
    )
    return np.concatenate(parts, axis=-1)


def modularity_series(
    panel: ReturnPanel,
    tau: int = TAU,
    p: Optional[Partition] = None,
    zero_diagonal: bool = False,
    threads: int = 1,
    refresh_every: int = REFRESH_EVERY,
) -> ModularitySeries:
    """Modularity Q(t) of the fixed partition p for t = tau ... T.

    Parameters
    ----------
    panel: ReturnPanel
        Log returns.
    tau: int
        Window length.
    p: Partition, optional
        Fixed partition, the sectors of the panel by default.
    zero_diagonal: bool
        Drop the self-loops.
    threads: int
        Worker pool width.
    refresh_every: int
        Windows between full recomputations of the rolling sums.

    """
    p = _partition_for(panel, p)
    labels = p.labels
    onehot = _one_hot(p.membership(labels), len(p.groups))
    logger.info(
        f"Modularity of {len(p.groups)} groups over {panel.length - tau + 1} windows"
    )
    q = _stream_modularity(
        panel, tau, labels, onehot, zero_diagonal, threads, refresh_every
    )
    end_indices = list(range(tau, panel.length + 1))
    return ModularitySeries(
        end_indices=end_indices,
        dates=[panel.dates[t - 1] for t in end_indices],
        q=q,
    )


def _canonical(membership: np.ndarray) -> tuple:
    """Membership relabelled by first occurrence, equal for equal groupings."""
    relabel: dict[int, int] = {}
    return tuple(relabel.setdefault(int(g), len(relabel)) for g in membership)


def random_allocations(
    sizes: Sequence[int], draws: int, seed: int, truth: Optional[np.ndarray] = None
) -> np.ndarray:
    """K random memberships with the given group sizes.

    Draw d uses the baseline stream keyed by (seed, d). A draw reproducing the
    grouping in truth is redrawn from the same stream.

    Returns
    -------
    memberships: np.ndarray
        (K, N) group index of every vertex.

    """
    base = np.repeat(np.arange(len(sizes)), sizes)
    # Only one grouping exists with a single group or only singletons
    unique = len(sizes) == 1 or max(sizes) == 1
    target = _canonical(truth) if truth is not None and not unique else None
    out = np.empty((draws, base.size), dtype=int)
    for d in range(draws):
        rng = rng_for(seed, RandomStream.BASELINE, d)
        membership = rng.permutation(base)
        while target is not None and _canonical(membership) == target:
            membership = rng.permutation(base)
        out[d] = membership
    return out


def random_partition_baseline(
    panel: ReturnPanel,
    tau: int = TAU,
    p: Optional[Partition] = None,
    draws: int = BASELINE_DRAWS,
    seed: int = 0,
    zero_diagonal: bool = False,
    threads: int = 1,
    refresh_every: int = REFRESH_EVERY,
    sizes: Optional[Sequence[int]] = None,
) -> BaselineResult:
    """Modularity of K random allocations with the size profile of p.

    Parameters
    ----------
    panel: ReturnPanel
        Log returns.
    tau: int
        Window length.
    p: Partition, optional
        Partition whose size profile is reproduced, the sectors by default.
    draws: int
        Number of random allocations K.
    seed: int
        Master seed, draw d uses the baseline stream (seed, d).
    zero_diagonal: bool
        Drop the self-loops.
    threads: int
        Worker pool width.
    refresh_every: int
        Windows between full recomputations of the rolling sums.
    sizes: Sequence[int], optional
        Explicit group sizes, they must sum to the number of vertices.

    Raises
    ------
    SizeMismatch
        The group sizes do not sum to the number of vertices.

    """
    if draws < 1:
        raise UsageError(f"The baseline needs at least one draw, got {draws}")
    p = _partition_for(panel, p)
    labels = p.labels
    sizes = list(sizes) if sizes is not None else p.sizes
    if sum(sizes) != len(labels):
        raise SizeMismatch(len(labels), sum(sizes))
    truth = p.membership(labels) if sizes == p.sizes else None
    memberships = random_allocations(sizes, draws, seed, truth=truth)
    onehot = _one_hot(memberships, len(sizes))
    logger.info(f"Random-allocation baseline with K={draws} draws (seed={seed})")
    values = _stream_modularity(
        panel, tau, labels, onehot, zero_diagonal, threads, refresh_every
    )
    p05, p95 = percentile_curves(values, BASELINE_PERCENTILES)
    end_indices = list(range(tau, panel.length + 1))
    return BaselineResult(
        end_indices=end_indices,
        dates=[panel.dates[t - 1] for t in end_indices],
        draws=draws,
        seed=seed,
        mean=values.mean(axis=0),
        p05=p05,
        p95=p95,
        values=values,
    )

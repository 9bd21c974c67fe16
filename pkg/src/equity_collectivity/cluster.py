"""
Portfolio Shape Clustering

Grid cells are compared by the mean absolute difference of their median
normalised-eigenvalue curves and grouped by unweighted average linkage (UPGMA).
Merges always join the closest pair of clusters, ties go to the lexicographically
smallest pair of cluster ids. Leaves have ids 0 ... K-1 and merge s creates id K+s.
"""

from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import Field, field_validator, model_validator
from pydantic_numpy.typing import Np2DArray

from rompy.logging import get_logger

from equity_collectivity.base import ATOL, CollectivityBaseModel, as_float_array
from equity_collectivity.errors import BadK, GridMismatch, UsageError
from equity_collectivity.sampler import (
    Cell,
    GridSummary,
    PercentileCurves,
    SamplingResult,
    cell_key,
)

logger = get_logger(__name__)

# Relative slack on non-decreasing merge heights
HEIGHT_RTOL = 1e-9


class DistanceMatrix(CollectivityBaseModel):
    """Symmetric nonnegative distances between grid cells with a zero diagonal."""

    items: list[tuple[int, int]] = Field(description="Grid cells (m, n)")
    entries: Np2DArray = Field(description="Pairwise distances")

    @field_validator("entries", mode="before")
    @classmethod
    def float_entries(cls, v):
        return as_float_array(v, ndim=2)

    @model_validator(mode="after")
    def metric_like(self) -> "DistanceMatrix":
        size = len(self.items)
        d = self.entries
        if d.shape != (size, size):
            raise ValueError(f"Entries have shape {d.shape}, expected ({size}, {size})")
        if not np.allclose(d, d.T, rtol=0, atol=ATOL):
            raise ValueError("Distance matrix must be symmetric")
        if np.any(np.diag(d) != 0):
            raise ValueError("Distance matrix must have a zero diagonal")
        if np.any(d < 0):
            raise ValueError("Distances must be nonnegative")
        return self

    def to_frame(self) -> pd.DataFrame:
        labels = [cell_key(cell) for cell in self.items]
        return pd.DataFrame(self.entries, index=labels, columns=labels)


class Merge(CollectivityBaseModel):
    """One agglomeration step."""

    child_a: int = Field(description="Smaller child cluster id")
    child_b: int = Field(description="Larger child cluster id")
    height: float = Field(ge=0.0, description="Average-linkage distance")
    size: int = Field(ge=2, description="Number of items in the merged cluster")


class Dendrogram(CollectivityBaseModel):
    """Ordered merge list of an agglomerative clustering."""

    n_items: int = Field(ge=1, description="Number of leaves K")
    merges: list[Merge] = Field(description="K-1 merges in order")

    @model_validator(mode="after")
    def valid_tree(self) -> "Dendrogram":
        k = self.n_items
        if len(self.merges) != k - 1:
            raise ValueError(f"{len(self.merges)} merges for {k} items")
        children = [c for m in self.merges for c in (m.child_a, m.child_b)]
        if sorted(children) != list(range(2 * k - 2)):
            raise ValueError("Every id but the root must be merged exactly once")
        for step, merge in enumerate(self.merges):
            if max(merge.child_a, merge.child_b) >= k + step:
                raise ValueError(f"Merge {step} uses a cluster created later")
        heights = np.array([m.height for m in self.merges])
        slack = HEIGHT_RTOL * max(float(heights.max(initial=0.0)), 1.0)
        if np.any(np.diff(heights) < -slack):
            raise ValueError("Merge heights must be non-decreasing")
        return self

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    def to_linkage(self) -> np.ndarray:
        """Linkage matrix with rows (child_a, child_b, height, size).

        The layout is the one `scipy.cluster.hierarchy.dendrogram` consumes.

        """
        return np.array(
            [[m.child_a, m.child_b, m.height, m.size] for m in self.merges],
            dtype=float,
        ).reshape(-1, 4)

    def to_frame(self) -> pd.DataFrame:
        """Frame with columns `child_a,child_b,height`."""
        return pd.DataFrame(
            {
                "child_a": [m.child_a for m in self.merges],
                "child_b": [m.child_b for m in self.merges],
                "height": [m.height for m in self.merges],
            }
        )


def median_distance(a: PercentileCurves, b: PercentileCurves) -> float:
    """Mean absolute difference of the median curves over the shared windows.

    Raises
    ------
    GridMismatch
        The curves do not share the same windows.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.cluster import median_distance
        from equity_collectivity.sampler import PercentileCurves
        a = PercentileCurves(cell=(2, 2), end_indices=[1, 2], p05=[0.4] * 2,
                             p50=[0.4] * 2, p95=[0.4] * 2)
        b = PercentileCurves(cell=(3, 2), end_indices=[1, 2], p05=[0.5] * 2,
                             p50=[0.5] * 2, p95=[0.5] * 2)
        median_distance(a, b)

    """
    if a.end_indices != b.end_indices:
        raise GridMismatch(a.cell, b.cell)
    return float(np.mean(np.abs(a.p50 - b.p50)))


def _curve_list(
    result: Union[SamplingResult, Mapping[Cell, PercentileCurves]],
    cells: Optional[Sequence[Cell]],
) -> list[PercentileCurves]:
    if isinstance(result, SamplingResult):
        by_cell = {curves.cell: curves for curves in result.curves.values()}
    else:
        by_cell = dict(result)
    if cells is None:
        cells = sorted(by_cell)
    missing = [cell for cell in cells if cell not in by_cell]
    if missing:
        raise UsageError(f"No percentile curves for cells {missing}")
    return [by_cell[cell] for cell in cells]


def distance_matrix(
    result: Union[SamplingResult, Mapping[Cell, PercentileCurves]],
    cells: Optional[Sequence[Cell]] = None,
) -> DistanceMatrix:
    """Pairwise median distances between cells.

    Parameters
    ----------
    result: SamplingResult | Mapping[Cell, PercentileCurves]
        Percentile curves per cell.
    cells: Sequence[Cell], optional
        Cells in matrix order, all cells sorted by (m, n) by default.

    Returns
    -------
    dm: DistanceMatrix
        K x K distance matrix.

    """
    curves = _curve_list(result, cells)
    if not curves:
        raise UsageError("At least one cell is required")
    first = curves[0]
    for other in curves[1:]:
        if other.end_indices != first.end_indices:
            raise GridMismatch(first.cell, other.cell)
    medians = np.stack([c.p50 for c in curves])
    entries = np.abs(medians[:, None, :] - medians[None, :, :]).mean(axis=2)
    logger.info(f"Distance matrix over {len(curves)} cells")
    return DistanceMatrix(items=[c.cell for c in curves], entries=entries)


def average_linkage(dm: DistanceMatrix) -> Dendrogram:
    """Agglomerative clustering with unweighted average linkage (UPGMA).

    The distance between clusters is the mean of all cross-pair item distances,
    maintained with the size-weighted Lance-Williams update.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.cluster import DistanceMatrix, average_linkage
        dm = DistanceMatrix(
            items=[(2, 2), (2, 3), (2, 4)],
            entries=[[0, 1, 10], [1, 0, 10], [10, 10, 0]],
        )
        average_linkage(dm).to_frame()

    """
    k = len(dm.items)
    d = dm.entries.astype(float).copy()
    np.fill_diagonal(d, np.inf)
    ids = np.arange(k)
    sizes = np.ones(k, dtype=int)
    active = np.ones(k, dtype=bool)
    upper = np.triu(np.ones((k, k), dtype=bool), 1)
    merges = []
    for step in range(k - 1):
        mask = upper & active[:, None] & active[None, :]
        candidates = np.where(mask, d, np.inf)
        height = candidates.min()
        rows, cols = np.nonzero(candidates == height)
        pairs = sorted(
            (min(ids[i], ids[j]), max(ids[i], ids[j]), i, j) for i, j in zip(rows, cols)
        )
        id_a, id_b, i, j = pairs[0]
        i, j = min(i, j), max(i, j)
        size = sizes[i] + sizes[j]
        merged = (sizes[i] * d[i] + sizes[j] * d[j]) / size
        d[i, :] = merged
        d[:, i] = merged
        d[i, i] = np.inf
        d[j, :] = np.inf
        d[:, j] = np.inf
        active[j] = False
        sizes[i] = size
        ids[i] = k + step
        merges.append(
            Merge(child_a=int(id_a), child_b=int(id_b), height=float(height), size=size)
        )
    return Dendrogram(n_items=k, merges=merges)


def cut_clusters(dendrogram: Dendrogram, k: int) -> np.ndarray:
    """Flat assignment with k clusters, undoing the last k-1 merges.

    Clusters are numbered 0 ... k-1 in order of their smallest item.

    Raises
    ------
    BadK
        k is outside 1 ... K.

    """
    n_items = dendrogram.n_items
    if not 1 <= k <= n_items:
        raise BadK(k, n_items)
    parent = list(range(2 * n_items - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step, merge in enumerate(dendrogram.merges[: n_items - k]):
        node = n_items + step
        parent[find(merge.child_a)] = node
        parent[find(merge.child_b)] = node
    roots: dict[int, int] = {}
    return np.array(
        [roots.setdefault(find(item), len(roots)) for item in range(n_items)]
    )


def curves_from_summary(
    summary: GridSummary, cells: Optional[Sequence[Cell]] = None, length: int = 1
) -> dict[Cell, PercentileCurves]:
    """Constant curves with p05 = p50 = p95 = mu_{m,n} for every cell."""
    cells = list(cells) if cells is not None else summary.cells
    curves = {}
    for cell in cells:
        mu = np.full(length, summary.value(cell))
        curves[cell] = PercentileCurves(
            cell=cell,
            end_indices=list(range(1, length + 1)),
            p05=mu,
            p50=mu,
            p95=mu,
        )
    return curves


def cluster_table(dm: DistanceMatrix, labels: np.ndarray) -> pd.DataFrame:
    """Frame with columns `m,n,cluster`, for `clusters_k<k>.csv`."""
    return pd.DataFrame(
        {
            "m": [m for m, _ in dm.items],
            "n": [n for _, n in dm.items],
            "cluster": labels,
        }
    )

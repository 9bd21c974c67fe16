"""
Equity Collectivity Types

This module contains enumerations used throughout the package, including degenerate
market kinds, eigen-solver methods, random stream domains, greedy-path metrics and
CLI commands.
"""

from enum import Enum, IntEnum

from rompy.logging import get_logger

logger = get_logger(__name__)


class DegenerateKind(str, Enum):
    """Valid options for the degenerate synthetic market.

    Attributes
    ----------
    IDENTICAL: "identical"
        All return series are equal, every window correlation is all-ones.
    INDEPENDENT: "independent"
        Independent standard Gaussian returns.
    ANTI: "anti"
        Two series where the second is the negation of the first.

    """

    IDENTICAL = "identical"
    INDEPENDENT = "independent"
    ANTI = "anti"


class SolverMethod(str, Enum):
    """Eigen-solver used for a leading eigenpair.

    Attributes
    ----------
    POWER: "power"
        Power iteration from the normalised all-ones direction.
    DENSE: "dense"
        Dense symmetric eigen-decomposition (fallback).

    """

    POWER = "power"
    DENSE = "dense"


class RandomStream(IntEnum):
    """Domains of the keyed random streams.

    The domain is part of every stream key, so streams of different domains never
    coincide even when their coordinates do.

    Attributes
    ----------
    MARKET_FACTOR: 1
        Market factor of a synthetic market.
    SECTOR_FACTOR: 2
        Sector factors, keyed by sector index.
    IDIOSYNCRATIC: 3
        Idiosyncratic noise, keyed by ticker index.
    PORTFOLIO: 4
        Portfolio draws, keyed by (m, n, draw index).
    BASELINE: 5
        Random allocations of the modularity baseline, keyed by draw index.

    """

    MARKET_FACTOR = 1
    SECTOR_FACTOR = 2
    IDIOSYNCRATIC = 3
    PORTFOLIO = 4
    BASELINE = 5


class RemovalReason(str, Enum):
    """Reasons for removing a ticker while cleaning a raw price panel.

    Attributes
    ----------
    TOO_MANY_GAPS: "too_many_gaps"
        The ticker has a run of consecutive missing closes longer than the gap limit.
    MISSING_FRACTION: "missing_fraction"
        The ticker misses more than the allowed fraction of dates.

    """

    TOO_MANY_GAPS = "too_many_gaps"
    MISSING_FRACTION = "missing_fraction"


class GreedyMetric(str, Enum):
    """Grid table followed by the greedy size-growth path.

    Attributes
    ----------
    MU: "mu"
        Temporal mean of the median normalised leading eigenvalue.
    SIGMA: "sigma"
        Temporal mean of the 5-95 percentile spread.

    """

    MU = "mu"
    SIGMA = "sigma"


class Command(str, Enum):
    """Valid CLI commands.

    Attributes
    ----------
    SYNTH: "synth"
        Generate a synthetic factor market.
    COLLECTIVITY: "collectivity"
        Normalised leading eigenvalue and uniformity per scope.
    MODULARITY: "modularity"
        Sector-partition modularity and random-partition baseline.
    SAMPLE: "sample"
        Monte-Carlo sampling of the (m, n) portfolio grid.
    GREEDY: "greedy"
        Greedy size-growth path over the sampled tables.
    CLUSTER: "cluster"
        Average-linkage clustering of the median curves.
    PIPELINE: "pipeline"
        All of the above in order with a shared seed.

    """

    SYNTH = "synth"
    COLLECTIVITY = "collectivity"
    MODULARITY = "modularity"
    SAMPLE = "sample"
    GREEDY = "greedy"
    CLUSTER = "cluster"
    PIPELINE = "pipeline"

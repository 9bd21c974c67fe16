"""Test weighted graphs, sector modularity and the random-allocation baseline."""

import numpy as np
import pytest
from pydantic import ValidationError

from test_utils.logging import get_test_logger

from equity_collectivity.corr import CorrMatrix, WindowSpec, window_correlation
from equity_collectivity.errors import EmptyGraph, SizeMismatch, UsageError
from equity_collectivity.ingest import log_returns
from equity_collectivity.netdiag import (
    Partition,
    WeightedGraph,
    adjacency_from_correlation,
    modularity,
    modularity_series,
    random_allocations,
    random_partition_baseline,
)
from equity_collectivity.synth import (
    SynthConfig,
    generate_degenerate_market,
    generate_factor_market,
)

logger = get_test_logger(__name__)


def _brute_force(adjacency: np.ndarray, membership: np.ndarray) -> float:
    n = adjacency.shape[0]
    k = [sum(adjacency[i, j] for j in range(n)) for i in range(n)]
    two_e = sum(k)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if membership[i] == membership[j]:
                total += adjacency[i, j] - k[i] * k[j] / two_e
    return total / two_e


def _random_graph(n: int, rng: np.random.Generator) -> WeightedGraph:
    w = rng.uniform(0.0, 1.0, size=(n, n))
    return WeightedGraph.from_adjacency([f"v{i}" for i in range(n)], (w + w.T) / 2)


def _partition(labels: list[str], membership: np.ndarray) -> Partition:
    groups = [
        [label for label, g in zip(labels, membership) if g == group]
        for group in np.unique(membership)
    ]
    return Partition(groups=groups)


@pytest.fixture(scope="module")
def planted_returns():
    config = SynthConfig(n_sectors=4, equities_per_sector=5, length=360, seed=17)
    return log_returns(generate_factor_market(config))


# =====================================================================================
# adjacency_from_correlation
# =====================================================================================
def test_adjacency_example():
    m = CorrMatrix(labels=["a", "b"], end_index=2, entries=[[1, -0.5], [-0.5, 1]])
    graph = adjacency_from_correlation(m)
    np.testing.assert_array_equal(graph.adjacency, [[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(graph.degrees, [1.5, 1.5])
    assert graph.total_weight == 1.5


def test_adjacency_identity():
    m = CorrMatrix(labels=["a", "b", "c"], end_index=3, entries=np.eye(3))
    graph = adjacency_from_correlation(m)
    np.testing.assert_array_equal(graph.degrees, np.ones(3))
    assert graph.total_weight == 1.5


def test_adjacency_matches_naive(small_returns):
    corr = window_correlation(small_returns, WindowSpec(tau=100, end_index=250))
    graph = adjacency_from_correlation(corr.submatrix(small_returns.tickers[:6]))
    entries = corr.submatrix(small_returns.tickers[:6]).entries
    for i in range(6):
        assert graph.degrees[i] == pytest.approx(sum(abs(x) for x in entries[i]))
    assert graph.total_weight == pytest.approx(np.abs(entries).sum() / 2)
    np.testing.assert_array_equal(np.diag(graph.adjacency), 1.0)


def test_adjacency_zero_diagonal():
    m = CorrMatrix(labels=["a", "b"], end_index=2, entries=[[1, 0.2], [0.2, 1]])
    graph = adjacency_from_correlation(m, zero_diagonal=True)
    np.testing.assert_array_equal(graph.adjacency, [[0.0, 0.2], [0.2, 0.0]])
    assert graph.total_weight == pytest.approx(0.2)


def test_graph_validation():
    with pytest.raises(ValidationError):
        WeightedGraph.from_adjacency(["a", "b"], np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(ValidationError):
        WeightedGraph.from_adjacency(["a", "b"], np.array([[1.0, 2.0], [2.0, 1.0]]))


# =====================================================================================
# Partition
# =====================================================================================
@pytest.mark.parametrize(
    "groups",
    [[], [["a"], []], [["a", "b"], ["b"]]],
)
def test_partition_invalid(groups):
    with pytest.raises(ValidationError):
        Partition(groups=groups)


def test_partition_from_sectors():
    p = Partition.from_sectors({"a": "Y", "b": "X", "c": "Y"})
    assert p.names == ["X", "Y"]
    assert p.groups == [["b"], ["a", "c"]]
    assert p.sizes == [1, 2]
    np.testing.assert_array_equal(p.membership(["a", "b", "c"]), [1, 0, 1])


def test_partition_must_cover_labels():
    with pytest.raises(UsageError):
        Partition(groups=[["a"]]).membership(["a", "b"])


# =====================================================================================
# modularity
# =====================================================================================
def test_single_group_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(50):
        graph = _random_graph(int(rng.integers(1, 9)), rng)
        assert modularity(graph, Partition(groups=[graph.labels])) == pytest.approx(
            0.0, abs=1e-12
        )


def test_two_blocks():
    a = np.kron(np.eye(2), np.ones((2, 2)))
    graph = WeightedGraph.from_adjacency(["a", "b", "c", "d"], a)
    assert graph.total_weight == 4.0
    q = modularity(graph, Partition(groups=[["a", "b"], ["c", "d"]]))
    assert q == pytest.approx(0.5, abs=1e-15)


def test_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        graph = _random_graph(n, rng)
        membership = rng.integers(0, 3, size=n)
        q = modularity(graph, _partition(graph.labels, membership))
        assert q == pytest.approx(_brute_force(graph.adjacency, membership), abs=1e-12)
        assert -1.0 <= q <= 1.0


def test_invariant_under_relabelling():
    rng = np.random.default_rng(2)
    graph = _random_graph(8, rng)
    membership = np.array([0, 0, 1, 1, 2, 2, 2, 0])
    q = modularity(graph, _partition(graph.labels, membership))
    swapped = _partition(graph.labels, (membership + 1) % 3)
    assert modularity(graph, swapped) == pytest.approx(q, abs=1e-12)
    perm = rng.permutation(8)
    moved = WeightedGraph.from_adjacency(
        [graph.labels[i] for i in perm], graph.adjacency[np.ix_(perm, perm)]
    )
    assert modularity(moved, _partition(graph.labels, membership)) == pytest.approx(
        q, abs=1e-12
    )


def test_empty_graph():
    graph = WeightedGraph.from_adjacency(["a", "b"], np.zeros((2, 2)))
    with pytest.raises(EmptyGraph) as err:
        modularity(graph, Partition(groups=[["a"], ["b"]]))
    assert err.value.exit_code == 2


# =====================================================================================
# modularity_series
# =====================================================================================
def test_identical_market_has_zero_modularity():
    returns = log_returns(generate_degenerate_market("identical", 6, 40, seed=1))
    p = Partition(groups=[returns.tickers[:2], returns.tickers[2:]])
    series = modularity_series(returns, tau=20, p=p)
    assert series.end_indices == list(range(20, 41))
    np.testing.assert_allclose(series.q, 0.0, atol=1e-12)


def test_single_window():
    returns = log_returns(generate_degenerate_market("independent", 4, 30, seed=2))
    series = modularity_series(returns, tau=30)
    assert series.q.shape == (1,)
    assert list(series.to_frame().columns) == ["date", "Q"]


def test_series_matches_per_window(small_returns):
    series = modularity_series(small_returns, tau=80, refresh_every=50)
    p = Partition.from_sectors(small_returns.sectors, small_returns.tickers)
    for index in (0, 77, len(series.end_indices) - 1):
        t = series.end_indices[index]
        corr = window_correlation(small_returns, WindowSpec(tau=80, end_index=t))
        q = modularity(adjacency_from_correlation(corr), p)
        assert series.q[index] == pytest.approx(q, abs=1e-10)


def test_planted_sectors_are_modular(planted_returns):
    series = modularity_series(planted_returns, tau=120)
    assert np.all(series.q > 0)


def test_threads_do_not_change_modularity(small_returns):
    serial = modularity_series(small_returns, tau=40, refresh_every=64)
    parallel = modularity_series(small_returns, tau=40, refresh_every=64, threads=2)
    np.testing.assert_array_equal(serial.q, parallel.q)


# =====================================================================================
# random_partition_baseline
# =====================================================================================
def test_random_allocations_keep_sizes():
    memberships = random_allocations([2, 3, 1], draws=20, seed=4)
    assert memberships.shape == (20, 6)
    for row in memberships:
        assert np.bincount(row, minlength=3).tolist() == [2, 3, 1]


def test_random_allocations_avoid_truth():
    grouped = random_allocations([2, 2], draws=30, seed=1, truth=np.array([0, 0, 1, 1]))
    assert all(row[0] != row[1] for row in grouped)


def test_baseline_deterministic(small_returns):
    a = random_partition_baseline(small_returns, tau=150, draws=10, seed=9)
    b = random_partition_baseline(small_returns, tau=150, draws=10, seed=9)
    np.testing.assert_array_equal(a.values, b.values)
    c = random_partition_baseline(small_returns, tau=150, draws=10, seed=10)
    assert not np.array_equal(a.values, c.values)
    assert a.values.shape == (10, small_returns.length - 149)
    assert list(a.to_frame().columns) == [
        "date",
        "Q_random_mean",
        "Q_random_p05",
        "Q_random_p95",
    ]
    assert np.all(a.p05 <= a.mean + 1e-12)
    assert np.all(a.mean <= a.p95 + 1e-12)


def test_baseline_single_group_is_zero(small_returns):
    result = random_partition_baseline(
        small_returns, tau=200, draws=3, sizes=[small_returns.n_tickers]
    )
    np.testing.assert_allclose(result.values, 0.0, atol=1e-12)


def test_baseline_size_mismatch(small_returns):
    with pytest.raises(SizeMismatch):
        random_partition_baseline(small_returns, tau=200, draws=3, sizes=[3, 3])


def test_baseline_needs_draws(small_returns):
    with pytest.raises(UsageError):
        random_partition_baseline(small_returns, tau=200, draws=0)


def test_baseline_far_below_sector_modularity(planted_returns):
    truth = modularity_series(planted_returns, tau=120)
    baseline = random_partition_baseline(planted_returns, tau=120, draws=50, seed=3)
    assert np.all(baseline.mean <= truth.q / 3)


@pytest.mark.slow
def test_baseline_far_below_sector_modularity_on_full_market():
    config = SynthConfig(
        n_sectors=9,
        equities_per_sector=10,
        length=2000,
        beta_market=0.4,
        beta_sector=0.5,
        sigma_idio=0.77,
        seed=5,
    )
    returns = log_returns(generate_factor_market(config))
    truth = modularity_series(returns, tau=120, threads=4)
    baseline = random_partition_baseline(
        returns, tau=120, draws=100, seed=5, threads=4
    )
    assert np.mean(baseline.mean <= truth.q / 3) >= 0.95

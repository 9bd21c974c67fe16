"""Test the run directory writers and the worker pool helpers."""

from datetime import date

import numpy as np
import pandas as pd
import pytest

from test_utils.logging import get_test_logger

from equity_collectivity.output import (
    MANIFEST,
    checksums,
    read_json,
    sha256sum,
    write_csv,
    write_json,
)
from equity_collectivity.parallel import MAX_SEED, rng_for, run_parallel, seed_sequence
from equity_collectivity.types import GreedyMetric, RandomStream

logger = get_test_logger(__name__)


def _square(x: int, offset: int = 0) -> int:
    return x * x + offset


# =====================================================================================
# Writers
# =====================================================================================
def test_csv_floats_round_trip(tmp_path):
    values = np.random.default_rng(0).normal(size=20) / 3
    path = write_csv(pd.DataFrame({"x": values}), tmp_path / "a" / "x.csv")
    np.testing.assert_array_equal(pd.read_csv(path)["x"].to_numpy(), values)
    again = write_csv(pd.DataFrame({"x": values}), tmp_path / "b.csv")
    assert sha256sum(path) == sha256sum(again)


def test_json_conversions(tmp_path):
    path = write_json(
        {
            "day": date(2021, 1, 4),
            "cell": (2, 3),
            "array": np.arange(3),
            "scalar": np.float64(0.5),
            "metric": GreedyMetric.SIGMA,
            "where": tmp_path,
        },
        tmp_path / "x.json",
    )
    assert read_json(path) == {
        "array": [0, 1, 2],
        "cell": [2, 3],
        "day": "2021-01-04",
        "metric": "sigma",
        "scalar": 0.5,
        "where": str(tmp_path),
    }


def test_checksums_skip_manifest(tmp_path):
    write_json({"a": 1}, tmp_path / "sub" / "a.json")
    write_json({}, tmp_path / MANIFEST)
    sums = checksums(tmp_path)
    assert list(sums) == ["sub/a.json"]
    assert sums["sub/a.json"] == sha256sum(tmp_path / "sub" / "a.json")


# =====================================================================================
# Random streams and the worker pool
# =====================================================================================
def test_streams_are_keyed_by_coordinates():
    portfolio = RandomStream.PORTFOLIO
    a = rng_for(42, portfolio, 2, 3, 0).integers(1 << 30, size=5)
    b = rng_for(42, portfolio, 2, 3, 0).integers(1 << 30, size=5)
    c = rng_for(42, portfolio, 2, 3, 1).integers(1 << 30, size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    rng_for(MAX_SEED, RandomStream.BASELINE)


@pytest.mark.parametrize(
    "first, second",
    [
        # Baseline draw 0 against the market factor
        ((7, RandomStream.BASELINE, 0), (7, RandomStream.MARKET_FACTOR, 0)),
        # Portfolio (m=2, n=5, d=0) against the idiosyncratic noise of ticker 5
        ((7, RandomStream.PORTFOLIO, 2, 5, 0), (7, RandomStream.IDIOSYNCRATIC, 5)),
        # Same domain, trailing zero coordinates
        ((7, RandomStream.PORTFOLIO, 2, 0), (7, RandomStream.PORTFOLIO, 2, 0, 0)),
        ((7, RandomStream.SECTOR_FACTOR), (7, RandomStream.SECTOR_FACTOR, 0)),
        ((0, RandomStream.BASELINE, 1), (1, RandomStream.BASELINE, 0)),
    ],
)
def test_distinct_keys_give_distinct_streams(first, second):
    a = rng_for(*first).integers(1 << 62, size=4)
    b = rng_for(*second).integers(1 << 62, size=4)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize(
    "key",
    [
        (-1, RandomStream.PORTFOLIO),
        (MAX_SEED + 1, RandomStream.PORTFOLIO),
        (0, RandomStream.PORTFOLIO, -2),
        (0, 99),
    ],
)
def test_seed_sequence_invalid(key):
    with pytest.raises(ValueError):
        seed_sequence(*key)


@pytest.mark.parametrize("threads", [1, 3])
def test_run_parallel_keeps_order(threads):
    tasks = [(i, 1) for i in range(10)]
    results = run_parallel(_square, tasks, threads=threads)
    assert results == [i * i + 1 for i in range(10)]


def test_run_parallel_invalid_threads():
    with pytest.raises(ValueError):
        run_parallel(_square, [(1,)], threads=0)

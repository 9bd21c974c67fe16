import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

from test_utils.logging import configure_test_logging

from equity_collectivity.ingest import log_returns
from equity_collectivity.synth import SynthConfig, generate_factor_market


def pytest_addoption(parser):
    """Add command-line options for pytest."""
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run slow Monte-Carlo acceptance tests",
    )
    parser.addoption(
        "--rompy-log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Set the logging level for the tests",
    )


def pytest_configure(config):
    configure_test_logging(level=config.getoption("--rompy-log-level"))


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session", autouse=True)
def setup_logging():
    """Configure logging once per test session."""
    configure_test_logging()
    return configure_test_logging


@pytest.fixture(scope="module")
def small_config():
    """Four sectors of five equities over 300 observations."""
    return SynthConfig(n_sectors=4, equities_per_sector=5, length=300, seed=7)


@pytest.fixture(scope="module")
def small_prices(small_config):
    return generate_factor_market(small_config)


@pytest.fixture(scope="module")
def small_returns(small_prices):
    return log_returns(small_prices)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

"""Test leading eigenpairs, uniformity and collectivity series."""

import numpy as np
import pytest
from pydantic import ValidationError

from test_utils.logging import get_test_logger

from equity_collectivity.corr import WindowSpec, window_correlation
from equity_collectivity.errors import NoConvergence, UsageError, ZeroVarianceWindow
from equity_collectivity.ingest import log_returns
from equity_collectivity.spectral import (
    MARKET,
    CollectivitySeries,
    collectivity_series,
    EigenResult,
    dense_eigenpair,
    leading_eigenpair,
    leading_eigenvalues,
    market_and_sector_scopes,
    power_iteration,
    sign_convention,
    uniformity,
)
from equity_collectivity.synth import (
    SynthConfig,
    generate_degenerate_market,
    generate_factor_market,
)
from equity_collectivity.types import SolverMethod

logger = get_test_logger(__name__)


def _random_correlation(n: int, rng: np.random.Generator, length: int = 200):
    x = 0.5 * rng.normal(size=length) + rng.normal(size=(n, length))
    return np.corrcoef(x)


# =====================================================================================
# leading_eigenpair
# =====================================================================================
def test_all_ones():
    result = leading_eigenpair(np.ones((3, 3)))
    assert result.lambda1 == pytest.approx(3.0, abs=1e-9)
    assert result.normalized_lambda1 == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(result.v1, np.ones(3) / np.sqrt(3), atol=1e-9)
    assert result.uniformity == pytest.approx(1.0, abs=1e-9)
    assert not result.degenerate


def test_anti_correlated_pair():
    result = leading_eigenpair(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    assert result.lambda1 == pytest.approx(2.0, abs=1e-9)
    assert result.normalized_lambda1 == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(
        np.abs(result.v1), np.ones(2) / np.sqrt(2), rtol=0, atol=1e-9
    )
    assert result.v1[0] > 0
    assert result.uniformity == pytest.approx(0.0, abs=1e-9)


def test_invariants_on_random_matrix():
    rng = np.random.default_rng(8)
    m = _random_correlation(8, rng)
    result = leading_eigenpair(m)
    assert result.method == SolverMethod.POWER
    assert np.linalg.norm(result.v1) == pytest.approx(1.0, abs=1e-10)
    assert result.residual <= 1e-8
    assert result.v1.sum() >= 0
    assert result.lambda1 == pytest.approx(np.linalg.eigvalsh(m)[-1], abs=1e-9)
    assert 1 / 8 - 1e-9 <= result.normalized_lambda1 <= 1 + 1e-9


def test_power_matches_dense_on_many_matrices():
    rng = np.random.default_rng(100)
    for size in rng.integers(2, 91, size=100):
        m = _random_correlation(int(size), rng)
        result = leading_eigenpair(m)
        assert abs(result.lambda1 - np.linalg.eigvalsh(m)[-1]) <= 1e-8


def test_accepts_corr_matrix():
    panel = log_returns(
        generate_factor_market(SynthConfig(n_sectors=2, equities_per_sector=3))
    )
    corr = window_correlation(panel, WindowSpec(tau=120, end_index=300))
    result = leading_eigenpair(corr)
    assert result.lambda1 == pytest.approx(
        np.linalg.eigvalsh(corr.entries)[-1], abs=1e-9
    )


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    m = _random_correlation(12, rng)
    perm = rng.permutation(12)
    a = leading_eigenpair(m, tol=1e-13)
    b = leading_eigenpair(m[np.ix_(perm, perm)], tol=1e-13)
    assert b.normalized_lambda1 == pytest.approx(a.normalized_lambda1, abs=1e-12)
    assert b.uniformity == pytest.approx(a.uniformity, abs=1e-12)
    np.testing.assert_allclose(b.v1, a.v1[perm], rtol=0, atol=1e-12)


def test_identity_is_degenerate():
    result = leading_eigenpair(np.eye(4))
    assert result.lambda1 == pytest.approx(1.0)
    assert result.normalized_lambda1 == pytest.approx(0.25)
    assert result.degenerate


def test_equal_blocks_are_degenerate():
    m = np.kron(np.eye(2), np.ones((2, 2)))
    result = leading_eigenpair(m)
    assert result.lambda1 == pytest.approx(2.0, abs=1e-9)
    assert result.degenerate


def test_no_convergence_falls_back_to_dense():
    rng = np.random.default_rng(6)
    m = _random_correlation(10, rng)
    with pytest.raises(NoConvergence) as err:
        power_iteration(m, max_iter=1)
    assert err.value.exit_code == 3
    result = leading_eigenpair(m, max_iter=1)
    assert result.method == SolverMethod.DENSE
    assert result.lambda1 == pytest.approx(np.linalg.eigvalsh(m)[-1], abs=1e-12)


def test_dense_eigenpair_sign_and_gap():
    m = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]])
    result = dense_eigenpair(m)
    values = np.linalg.eigvalsh(m)
    assert result.gap == pytest.approx(values[-1] - values[-2])
    assert result.v1.sum() > 0
    assert result.iterations == 0


def test_eigen_result_bounds():
    with pytest.raises(ValidationError):
        EigenResult(
            lambda1=5.0,
            v1=np.ones(2) / np.sqrt(2),
            normalized_lambda1=2.5,
            iterations=1,
            residual=0.0,
            gap=1.0,
            method="power",
        )


def test_sign_convention():
    np.testing.assert_array_equal(sign_convention(np.array([-0.6, -0.8])), [0.6, 0.8])
    np.testing.assert_array_equal(sign_convention(np.array([-1.0, 1.0])), [1.0, -1.0])


def test_leading_eigenvalues_batch():
    rng = np.random.default_rng(9)
    stack = np.stack([_random_correlation(5, rng) for _ in range(20)])
    stack[3] = np.eye(5)
    stack[7] = np.ones((5, 5))
    values = leading_eigenvalues(stack)
    np.testing.assert_allclose(
        values, np.linalg.eigvalsh(stack)[:, -1], rtol=0, atol=1e-9
    )


def test_leading_eigenvalues_dense_fallback():
    rng = np.random.default_rng(10)
    stack = np.stack([_random_correlation(6, rng) for _ in range(4)])
    values = leading_eigenvalues(stack, max_iter=1)
    np.testing.assert_allclose(
        values, np.linalg.eigvalsh(stack)[:, -1], rtol=0, atol=1e-12
    )


# =====================================================================================
# uniformity
# =====================================================================================
@pytest.mark.parametrize(
    "v1,expected",
    [
        (np.ones(4) / 2, 1.0),
        (np.array([1.0, -1.0]) / np.sqrt(2), 0.0),
        (np.array([1.0, 0.0, 0.0]), 0.5773502691896258),
        (-np.ones(4) / 2, 1.0),
    ],
)
def test_uniformity_values(v1, expected):
    assert uniformity(v1) == pytest.approx(expected, abs=1e-12)


def test_uniformity_requires_unit_norm():
    with pytest.raises(UsageError):
        uniformity(np.ones(3))


# =====================================================================================
# collectivity_series
# =====================================================================================
def test_scopes(small_returns):
    scopes = market_and_sector_scopes(small_returns)
    assert list(scopes)[0] == MARKET
    assert scopes[MARKET] == small_returns.tickers
    assert len(scopes) == 5
    assert scopes["SECTOR_01"] == small_returns.sector_members("SECTOR_01")


def test_identical_market_is_fully_collective():
    returns = log_returns(generate_degenerate_market("identical", 4, 60, seed=3))
    series = collectivity_series(returns, tau=20)
    assert [s.scope for s in series] == [MARKET, "SECTOR_00"]
    for s in series:
        assert len(s.end_indices) == 41
        np.testing.assert_allclose(s.lambda1_norm, 1.0, atol=1e-9)
        np.testing.assert_allclose(s.uniformity, 1.0, atol=1e-9)


def test_anti_market():
    returns = log_returns(generate_degenerate_market("anti", 2, 50, seed=4))
    (series, _) = collectivity_series(returns, tau=25)
    np.testing.assert_allclose(series.lambda1_norm, 1.0, atol=1e-9)
    np.testing.assert_allclose(series.uniformity, 0.0, atol=1e-6)


def test_single_window():
    returns = log_returns(generate_degenerate_market("independent", 3, 30, seed=1))
    (series, _) = collectivity_series(returns, tau=30)
    assert series.end_indices == [30]
    assert series.dates == [returns.dates[-1]]


def test_series_matches_per_window(small_returns):
    scopes = {"pair": small_returns.tickers[:2], "all": small_returns.tickers}
    series = collectivity_series(small_returns, tau=100, scopes=scopes)
    for s in series:
        for t in s.end_indices[::37]:
            corr = window_correlation(
                small_returns, WindowSpec(tau=100, end_index=t), scopes[s.scope]
            )
            result = leading_eigenpair(corr)
            index = s.end_indices.index(t)
            assert s.lambda1_norm[index] == pytest.approx(
                result.normalized_lambda1, abs=1e-9
            )
            assert s.uniformity[index] == pytest.approx(result.uniformity, abs=1e-6)


def test_threads_do_not_change_results(small_returns):
    serial = collectivity_series(small_returns, tau=30, refresh_every=64)
    parallel = collectivity_series(
        small_returns, tau=30, refresh_every=64, threads=2
    )
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.lambda1_norm, b.lambda1_norm)
        np.testing.assert_array_equal(a.uniformity, b.uniformity)
        assert a.degenerate == b.degenerate


def test_sector_scopes_exceed_market():
    config = SynthConfig(
        n_sectors=3,
        equities_per_sector=5,
        length=600,
        beta_market=0.4,
        beta_sector=0.6,
        sigma_idio=0.6,
        seed=13,
    )
    series = collectivity_series(log_returns(generate_factor_market(config)), tau=120)
    market = series[0].lambda1_norm
    for sector in series[1:]:
        assert np.all(sector.lambda1_norm > market)


def test_zero_variance_names_scope():
    panel = log_returns(
        generate_factor_market(SynthConfig(n_sectors=2, equities_per_sector=2))
    )
    returns = panel.returns.copy()
    returns[3, 100:200] = 0.0
    panel = panel.model_copy(update={"returns": returns})
    with pytest.raises(ZeroVarianceWindow) as err:
        collectivity_series(panel, tau=50, scopes={"b": panel.tickers[2:]})
    assert err.value.ticker == panel.tickers[3]
    assert err.value.t == 150
    assert err.value.context["scope"] == "b"


def test_series_validation():
    with pytest.raises(ValidationError):
        CollectivitySeries(
            scope="x",
            end_indices=[1, 2],
            lambda1_norm=[0.5, 1.5],
            uniformity=[0.5, 0.5],
        )
    with pytest.raises(ValidationError):
        CollectivitySeries(
            scope="x", end_indices=[1], lambda1_norm=[0.5, 0.5], uniformity=[0.5]
        )


def test_random_window_spectra():
    rng = np.random.default_rng(200)
    for _ in range(200):
        size = int(rng.integers(2, 91))
        m = _random_correlation(size, rng, length=int(rng.integers(size + 2, 400)))
        values = np.linalg.eigvalsh(m)
        assert np.trace(m) == pytest.approx(size, abs=1e-9)
        assert values[0] >= -1e-9
        result = leading_eigenpair(m)
        assert 1 / size - 1e-9 <= result.normalized_lambda1 <= 1 + 1e-9
        assert abs(result.lambda1 - values[-1]) <= 1e-8

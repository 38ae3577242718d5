import numpy as np
import pytest

from utils.metrics_calculator import MetricsCalculator


@pytest.fixture
def metrics():
    return MetricsCalculator(tolerance=0.1)


def test_fit_slope(metrics):
    fit = metrics.fit_slope([1.0, 2.0, 3.0], [3.0, 5.0, 7.0])
    assert fit["slope"] == pytest.approx(2.0)
    assert fit["intercept"] == pytest.approx(1.0)
    assert fit["residual"] == pytest.approx(0.0, abs=1e-12)
    assert metrics.fit_slope([1.0], [2.0]) == {}
    assert metrics.fit_slope([1.0, 1.0], [2.0, 3.0]) == {}


def test_observed_order(metrics):
    h = np.array([0.25, 0.125, 0.0625])
    assert metrics.observed_order(h, 3.0 * h ** 2) == pytest.approx(2.0)
    assert metrics.observed_order(h, 0.5 * h ** 3) == pytest.approx(3.0)
    assert metrics.observed_order(h, [1.0, 0.0, 1.0]) is None
    assert metrics.observed_order([0.1], [1.0]) is None


def test_sweep_table_recovers_energy_slope(metrics):
    length = 2.0
    rows = [{"epsilon": eps, "weighted_length": length,
             "free_energy": np.pi * length * abs(np.log(eps)) + 0.7}
            for eps in (0.1, 0.2, 0.14)]
    table = metrics.sweep_table(rows)
    assert list(table["epsilon"]) == [0.2, 0.14, 0.1]
    assert table.attrs["slope"] == pytest.approx(2.0 * np.pi)
    assert table.attrs["target_slope"] == pytest.approx(2.0 * np.pi)
    assert table.attrs["slope_ok"] and table.attrs["sublinear"]
    np.testing.assert_allclose(table["residual"], 0.7)


def test_sweep_table_flags_wrong_slope(metrics):
    rows = [{"epsilon": eps, "weighted_length": 1.0, "free_energy": 2.0 * np.pi * abs(np.log(eps))}
            for eps in (0.2, 0.14, 0.1)]
    table = metrics.sweep_table(rows)
    assert table.attrs["slope_error"] == pytest.approx(1.0)
    assert not table.attrs["slope_ok"]
    assert metrics.sweep_table([]).empty


def test_slope_ratio(metrics):
    rows = lambda c: [{"epsilon": eps, "weighted_length": 1.0, "free_energy": c * abs(np.log(eps))}
                      for eps in (0.2, 0.1)]
    assert metrics.slope_ratio(metrics.sweep_table(rows(1.0)), metrics.sweep_table(rows(3.0))) == pytest.approx(3.0)
    assert metrics.relative_error(1.1, 1.0) == pytest.approx(0.1)

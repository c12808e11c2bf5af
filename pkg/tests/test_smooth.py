from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from perfsense.smooth import (
    SMOOTHERS,
    ScoreSeries,
    SmoothParams,
    hma,
    hull_windows,
    lag_and_smoothness,
    sma,
    smooth_all,
    to_series,
    wma,
    wma_corrected,
)

from oracles import hma_loop, sma_loop, wma_corrected_loop, wma_loop


def ramp_fixture(seed=0, n=150):
    t = np.arange(n)
    return np.interp(t, [0, 50, 100, n - 1], [30, 70, 35, 60]) + np.random.default_rng(seed).normal(0, 3, n)


def test_sma_examples():
    assert sma([1, 2, 3, 4], 2).tolist() == [1, 1.5, 2.5, 3.5]
    assert sma([7.0] * 5, 3).tolist() == [7.0] * 5


def test_wma_full_window():
    assert wma([1, 2, 3], 3)[-1] == pytest.approx(14 / 6)


@pytest.mark.parametrize("n", [2, 5, 9, 12, 21])
def test_ramp_steady_state_lags(n):
    t = np.arange(100, dtype=float)
    assert np.allclose(sma(t, n)[n:], t[n:] - (n - 1) / 2)
    assert np.allclose(wma(t, n)[n:], t[n:] - (n - 1) / 3)
    _, half, root = hull_windows(n)
    h_lag = (2 * (half - 1) - (n - 1) + (root - 1)) / 3
    steady = n + root
    assert np.allclose(hma(t, n)[steady:], t[steady:] - h_lag)
    assert h_lag < (n - 1) / 3 < (n - 1) / 2


def test_corrected_wma_examples():
    assert wma_corrected([5.0, 1.0, 2.0], 4)[0] == 5.0
    assert wma_corrected([3.0] * 10, 4).tolist() == [3.0] * 10
    x = [10.0] + [0.0] * 9
    assert wma_corrected(x, 4).tolist() == pytest.approx(wma_corrected_loop(x, 4), abs=0)
    # the plain warm-up gives the oldest point the largest relative pull
    assert wma(x, 4)[1] == pytest.approx(10 / 3)
    assert wma_corrected(x, 4)[1] == pytest.approx(30 / 7)


def test_hull_window_policy():
    assert hull_windows(1) == (1, 1, 1)
    assert hull_windows(9) == (9, 4, 3)
    assert hull_windows(6) == (6, 3, 2)  # sqrt(6) = 2.449
    assert hull_windows(7) == (7, 3, 3)  # sqrt(7) = 2.646
    assert hull_windows(2) == (2, 1, 1)


def test_hma_lookback_one_is_identity():
    x = np.random.default_rng(0).uniform(0, 100, 50)
    assert np.array_equal(hma(x, 1), x)


@pytest.mark.parametrize("n", [1, 2, 3, 9, 16, 64])
def test_hma_matches_loop_oracle(n):
    x = list(np.random.default_rng(n).uniform(0, 100, 200))
    assert np.max(np.abs(hma(x, n) - np.array(hma_loop(x, n)))) <= 1e-12


def test_series_wrapping_keeps_timestamps():
    s = to_series([50.0, 60.0, 55.0], "d", [10, 20, 30])
    out = hma(s, SmoothParams(2))
    assert isinstance(out, ScoreSeries) and out.timestamps.tolist() == [10, 20, 30] and out.device_id == "d"


def test_series_validation():
    with pytest.raises(ValueError):
        ScoreSeries("d", np.array([1, 1]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        SmoothParams(0)
    assert not to_series([-1.0, 50.0]).in_score_range()


def test_lag_examples():
    x = ramp_fixture()
    assert lag_and_smoothness(x, x)[0] == 0
    delayed = np.concatenate([np.full(3, x[0]), x[:-3]])
    assert lag_and_smoothness(x, delayed)[0] == 3
    with pytest.raises(ValueError):
        lag_and_smoothness(x[:7], x[:7])


@pytest.mark.parametrize("seed", range(5))
def test_noisy_ramp_ordering(seed):
    x = ramp_fixture(seed)
    lags = {k: lag_and_smoothness(x, fn(x, 12))[0] for k, fn in SMOOTHERS.items()}
    assert lags["hma"] < lags["wma"] <= lags["sma"]
    assert lag_and_smoothness(x, hma(x, 12))[1] < np.std(np.diff(x))


def test_smooth_all_keys():
    assert list(smooth_all([1.0, 2.0], 2)) == ["sma", "wma", "wma_corr", "hma"]


series = arrays(float, st.integers(1, 60), elements=st.floats(0, 100))


@given(series, st.integers(1, 20), st.floats(-50, 50))
def test_length_constant_and_shift(x, n, c):
    for name, fn in SMOOTHERS.items():
        y = fn(x, n)
        assert len(y) == len(x)
        assert np.allclose(fn(np.full(len(x), c), n), c, atol=1e-9)
        assert np.allclose(fn(x + c, n), y + c, atol=1e-8)


@given(series, st.integers(1, 20))
def test_loop_oracles(x, n):
    xs = list(x)
    assert np.allclose(sma(x, n), sma_loop(xs, n), atol=1e-9)
    assert np.allclose(wma(x, n), wma_loop(xs, n), atol=1e-9)
    assert np.allclose(wma_corrected(x, n), wma_corrected_loop(xs, n), atol=1e-9)


@given(series, st.integers(1, 20))
def test_window_bounds(x, n):
    for fn in (sma, wma, wma_corrected):
        y = fn(x, n)
        for t in range(len(x)):
            w = x[max(0, t - n + 1): t + 1]
            assert w.min() - 1e-9 <= y[t] <= w.max() + 1e-9


def test_hma_overshoot_bounded_on_fixture():
    x = ramp_fixture()
    n = 12
    y = hma(x, n)
    for t in range(len(x)):
        w = x[max(0, t - n + 1): t + 1]
        span = np.ptp(w)
        assert w.min() - span <= y[t] <= w.max() + span

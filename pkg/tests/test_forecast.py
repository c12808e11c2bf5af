from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from perfsense.forecast import (
    ArimaModel,
    ArimaOrder,
    NonStationaryError,
    Z80,
    _information_criteria,
    _roots_ok,
    _step_down_ok,
    arima_residuals,
    auto_order,
    difference,
    difference_heads,
    fit_ar,
    fit_arima,
    fit_ma,
    forecast,
    integrate,
    is_stationary,
    psi_weights,
    select_d,
)

from generators import arma


def test_difference_examples():
    assert difference([1, 3, 6, 10], 1).tolist() == [2, 3, 4]
    assert difference([1, 3, 6, 10], 2).tolist() == [1, 1]
    assert difference([4.0, 1.0], 0).tolist() == [4.0, 1.0]
    with pytest.raises(ValueError):
        difference([1, 2], 2)


@given(arrays(float, st.integers(3, 40), elements=st.integers(-10**6, 10**6).map(float)), st.integers(0, 2))
def test_difference_round_trip_exact(x, d):
    assert np.array_equal(integrate(difference(x, d), difference_heads(x, d)), x)


def test_order_parse_and_bounds():
    assert ArimaOrder.parse("2,1,0") == ArimaOrder(2, 1, 0)
    assert str(ArimaOrder(1, 0, 2)) == "(1,0,2)"
    for bad in ("1,2", "a,b,c", "-1,0,0"):
        with pytest.raises(ValueError):
            ArimaOrder.parse(bad)


def test_select_d():
    rng = np.random.default_rng(0)
    noise = rng.normal(size=300)
    assert select_d(noise) == 0
    assert select_d(np.cumsum(noise)) == 1
    assert select_d(np.arange(300) * 0.5 + rng.normal(size=300)) == 1
    with pytest.raises(ValueError):
        select_d(noise[:19])


def test_fit_ar_p0():
    x = np.random.default_rng(1).normal(5, 2, 100)
    f = fit_ar(x, 0)
    assert f.intercept == pytest.approx(x.mean()) and f.sigma2 == pytest.approx(x.var())


def test_fit_ar_recovers():
    assert abs(fit_ar(arma(500, [0.7], seed=1), 1).phi[0] - 0.7) <= 0.1
    phi = fit_ar(arma(2000, [0.5, -0.3], seed=2), 2).phi
    assert np.all(np.abs(phi - [0.5, -0.3]) <= 0.08)


def test_fit_ar_intercept_relation():
    x = arma(500, [0.6], seed=3, c=4.0)
    f = fit_ar(x, 1)
    assert f.intercept == pytest.approx(f.mean * (1 - f.phi[0]))
    assert f.mean == pytest.approx(10.0, abs=0.5)


def test_fit_ar_preconditions():
    with pytest.raises(ValueError):
        fit_ar(np.ones(15), 2)  # shorter than 10 p
    with pytest.raises(ValueError, match="singular"):
        fit_ar(np.ones(40), 2)


def test_fit_ma_recovers():
    assert abs(fit_ma(arma(2000, theta=[0.6], seed=2), 1).theta[0] - 0.6) <= 0.1
    assert abs(fit_ma(np.random.default_rng(4).normal(size=1000), 1).theta[0]) <= 0.1
    m0 = fit_ma(np.random.default_rng(5).normal(3, 1, 200), 0)
    assert m0.theta.size == 0 and m0.intercept == pytest.approx(m0.mean)


def test_white_noise_mean_model():
    x = np.random.default_rng(6).normal(2, 1.5, 300)
    m = fit_arima(x, ArimaOrder(0, 0, 0))
    assert m.intercept == pytest.approx(x.mean())
    assert m.sigma2 == pytest.approx(x.var())


def test_arima_100_matches_yule_walker():
    x = arma(500, [0.7], seed=1)
    assert abs(fit_arima(x, ArimaOrder(1, 0, 0)).phi[0] - fit_ar(x, 1).phi[0]) <= 1e-6


def test_arima_111_residual_mean():
    w, e = arma(2000, [0.5], [0.3], seed=0, return_noise=True)
    m = fit_arima(np.cumsum(w) + 50, ArimaOrder(1, 1, 1))
    assert abs(m.residuals.mean()) <= 0.05
    # residuals estimate the innovations; their mean tracks the innovations' mean
    assert abs(m.residuals.mean() - e[2:].mean()) <= 0.01


def test_stored_residuals_reproduce():
    x = np.cumsum(arma(400, [0.4], [0.5], seed=9)) + 10
    for order in (ArimaOrder(1, 1, 1), ArimaOrder(2, 1, 0), ArimaOrder(0, 1, 2)):
        m = fit_arima(x, order)
        assert np.allclose(arima_residuals(m, x), m.residuals, atol=1e-9)
        assert is_stationary(m.phi) and m.sigma2 >= 0
        assert m.nobs == len(x) - order.d - order.p


def ic_literal(sigma2, n, k):
    aic = n * math.log(sigma2) + 2 * k
    return aic, aic + 2 * k * (k + 1) / (n - k - 1), n * math.log(sigma2) + k * math.log(n)


def test_information_criteria_literal():
    x = arma(300, [0.5], [0.2], seed=5)
    for order in (ArimaOrder(0, 0, 0), ArimaOrder(1, 0, 1), ArimaOrder(2, 0, 0)):
        m = fit_arima(x, order)
        k = order.p + order.q + 1
        assert (m.aic, m.aicc, m.bic) == pytest.approx(ic_literal(m.sigma2, m.nobs, k), rel=1e-12)
        assert m.bic - m.aic == pytest.approx(k * (math.log(m.nobs) - 2))
        assert m.bic > m.aic


@given(st.floats(1e-3, 1e3), st.integers(8, 500), st.integers(1, 6))
def test_bic_harder_than_aic(sigma2, n, k):
    if n - k - 1 <= 0:
        return
    aic, aicc, bic = _information_criteria(sigma2, n, k)
    assert (aic, aicc, bic) == pytest.approx(ic_literal(sigma2, n, k))
    assert bic > aic


def test_auto_order_short_series():
    with pytest.raises(ValueError, match="shorter than 50"):
        auto_order(np.zeros(40))


def test_auto_order_white_noise_majority():
    picks = [auto_order(np.random.default_rng(s).normal(size=200), ArimaOrder(2, 1, 2)).order
             for s in range(5)]
    assert sum(o.p == 0 and o.q == 0 for o in picks) >= 3


@pytest.mark.parametrize("table, expected", [
    ({}, (0, 0)),                               # everything ties: smallest p + q
    ({(1, 0): -1.0, (0, 1): -1.0}, (0, 1)),     # equal p + q: smaller p
    ({(2, 2): -5.0, (0, 1): -1.0}, (2, 2)),     # strictly better criterion wins
])
def test_auto_order_tie_break(monkeypatch, table, expected):
    import perfsense.forecast as fmod

    def fake(x, order):
        v = table.get((order.p, order.q), 0.0)
        return ArimaModel(order, np.zeros(order.p), np.zeros(order.q), 0.0, 0.0, 1.0, np.zeros(1), v, v, v)

    monkeypatch.setattr(fmod, "fit_arima", fake)
    m = auto_order(np.random.default_rng(0).normal(size=60), ArimaOrder(2, 0, 2))
    assert (m.order.p, m.order.q) == expected


def model(phi=(), theta=(), d=0, c=0.0, sigma2=1.0):
    phi, theta = np.array(phi, float), np.array(theta, float)
    return ArimaModel(ArimaOrder(len(phi), d, len(theta)), phi, theta, c, 0.0, sigma2, np.zeros(0), 0, 0, 0)


def test_forecast_mean_model():
    fc = forecast(model(c=42.0), [40.0, 44.0, 42.0], 5)
    assert fc.point.tolist() == [42.0] * 5


def test_forecast_random_walk_constant():
    x = np.cumsum(np.random.default_rng(3).normal(size=100)) + 50
    m = fit_arima(x, ArimaOrder(0, 1, 0))
    fc = forecast(m, x, 12)
    assert np.all(fc.point == x[-1])
    assert np.all(np.diff(fc.variance) >= 0)
    assert fc.variance == pytest.approx(m.sigma2 * np.arange(1, 13))


def test_forecast_geometric_decay():
    # mean 50 (c = 25 with phi 0.5), last value 8 above it
    fc = forecast(model([0.5], c=25.0), [50.0, 58.0], 4)
    assert (fc.point - 50).tolist() == pytest.approx([4, 2, 1, 0.5])


def test_forecast_interval_and_clamp():
    fc = forecast(model(c=99.5, sigma2=4.0), [99.0] * 10, 3)
    assert np.all(fc.point == 99.5)
    assert fc.hi80[0] == pytest.approx(99.5 + Z80 * 2.0)
    fc = forecast(model(c=150.0, sigma2=1.0), [150.0] * 10, 3)
    assert np.all(fc.point == 100.0)
    assert np.all(fc.lo80 <= fc.point) and np.all(fc.point <= fc.hi80)
    assert np.all(fc.point_unclamped == 150.0)


def test_forecast_preconditions():
    with pytest.raises(ValueError):
        forecast(model(), [1.0, 2.0], 0)
    with pytest.raises(ValueError):
        forecast(model(), [1.0, 2.0], 21)


def test_psi_weights_closed_forms():
    assert psi_weights(model([0.5]), 5) == pytest.approx([1, 0.5, 0.25, 0.125, 0.0625])
    assert psi_weights(model(theta=[0.4]), 3) == pytest.approx([1, -0.4, 0])
    assert psi_weights(model(d=1), 4) == pytest.approx([1, 1, 1, 1])


@pytest.mark.parametrize("order", ["1,0,1", "2,1,1", "0,2,1", "1,1,0"])
def test_variance_non_decreasing(order):
    x = np.cumsum(arma(300, [0.3], [0.4], seed=2)) + 40
    m = fit_arima(x, ArimaOrder.parse(order))
    fc = forecast(m, x, 20, clamp=None)
    assert np.all(np.diff(fc.variance) >= -1e-12)
    assert np.all(fc.lo80 <= fc.point) and np.all(fc.point <= fc.hi80)


@given(arrays(float, st.integers(1, 5), elements=st.floats(-2, 2)))
def test_stationarity_checks_agree_with_roots(c):
    if np.any(np.abs(c) < 1e-9):
        return
    roots = np.roots(np.concatenate([[1.0], -c]))
    inside = np.abs(roots).max() < 1 / (1 + 1e-6)
    far = abs(np.abs(roots).max() - 1) > 1e-4
    if far:
        assert _roots_ok(c) == inside
        assert _step_down_ok(c) == inside


def test_nonstationary_ar_rejected():
    with pytest.raises(NonStationaryError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit_arima(np.cumsum(np.cumsum(np.random.default_rng(0).normal(size=100))), ArimaOrder(2, 0, 1))

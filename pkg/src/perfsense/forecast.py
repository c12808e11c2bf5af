"""Non-seasonal ARIMA(p, d, q) for score series.

Conventions (innovations ``e``, differenced series ``w``)::

    w_t = c + sum_i phi_i * w_{t-i} + e_t - sum_j theta_j * e_{t-j}

Estimation is conditional sum of squares (CSS): the first ``p`` points
condition the AR part and pre-sample innovations are zero. Pure AR models
keep their Yule-Walker solution. ARMA models start from Yule-Walker (AR)
and zeros (MA) and are refined by a deterministic coordinate search.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

log = logging.getLogger(__name__)

Z80 = 1.2815515655446004
CSS_TOL = 1e-8
STEP_TOL = 1e-6
MAX_ITER = 500
ROOT_TOL = 1e-6
MIN_AUTO_LENGTH = 50
MIN_SELECT_D_LENGTH = 20
CRITERIA = ("aic", "aicc", "bic")


class ConvergenceError(RuntimeError):
    pass


class NonStationaryError(ValueError):
    pass


@dataclass(frozen=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        for name in ("p", "d", "q"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"ARIMA order {name} must be a non-negative integer, got {v}")

    @classmethod
    def parse(cls, text: str) -> ArimaOrder:
        parts = [s.strip() for s in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"order must look like 'p,d,q', got {text!r}")
        try:
            return cls(*(int(s) for s in parts))
        except ValueError:
            raise ValueError(f"order must look like 'p,d,q', got {text!r}") from None

    def __str__(self) -> str:
        return f"({self.p},{self.d},{self.q})"


DEFAULT_BOUNDS = ArimaOrder(5, 2, 5)


@dataclass(frozen=True)
class ArimaModel:
    order: ArimaOrder
    phi: np.ndarray
    theta: np.ndarray
    intercept: float
    mean: float
    sigma2: float
    residuals: np.ndarray
    aic: float
    aicc: float
    bic: float
    iterations: int = 0

    @property
    def nobs(self) -> int:
        return len(self.residuals)

    def criterion(self, name: str) -> float:
        return getattr(self, name)

    def summary(self) -> dict:
        return {
            "order": str(self.order),
            "phi": [float(v) for v in self.phi],
            "theta": [float(v) for v in self.theta],
            "intercept": float(self.intercept),
            "sigma2": float(self.sigma2),
            "aic": float(self.aic), "aicc": float(self.aicc), "bic": float(self.bic),
        }


@dataclass(frozen=True)
class Forecast:
    horizon: int
    point: np.ndarray
    lo80: np.ndarray
    hi80: np.ndarray
    variance: np.ndarray
    point_unclamped: np.ndarray = field(default=None)

    @property
    def interval_80(self) -> list[tuple[float, float]]:
        return list(zip(self.lo80.tolist(), self.hi80.tolist()))


def _series(s) -> np.ndarray:
    x = np.asarray(s, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a 1-D series")
    if not np.isfinite(x).all():
        raise ValueError("series contains non-finite values")
    return x


def difference(s: Sequence[float], d: int) -> np.ndarray:
    """d-fold first difference."""
    x = _series(s)
    if d < 0:
        raise ValueError("d must be >= 0")
    if len(x) <= d:
        raise ValueError(f"series of length {len(x)} is too short to difference {d} times")
    return np.diff(x, n=d) if d else x.copy()


def difference_heads(s: Sequence[float], d: int) -> list[float]:
    """First value of each differencing level 0..d-1 (what ``integrate`` needs)."""
    x = _series(s)
    heads = []
    for _ in range(d):
        heads.append(float(x[0]))
        x = np.diff(x)
    return heads


def integrate(diffed: Sequence[float], heads: Sequence[float]) -> np.ndarray:
    """Invert ``difference`` given the stored initial values."""
    y = _series(diffed)
    for h in reversed(heads):
        y = np.concatenate([[h], h + np.cumsum(y)])
    return y


def _acov(x: np.ndarray, maxlag: int, demean: bool = True) -> np.ndarray:
    xc = x - x.mean() if demean else x
    n = len(x)
    return np.array([np.dot(xc[: n - k], xc[k:]) / n for k in range(maxlag + 1)])


def acf1(x: Sequence[float]) -> float:
    g = _acov(_series(x), 1)
    return float(g[1] / g[0]) if g[0] > 0 else 0.0


def needs_differencing(x: Sequence[float]) -> bool:
    """Variance-ratio heuristic: lag-1 autocorrelation above 0.95, or
    differencing more than halves the variance."""
    x = _series(x)
    var = x.var()
    if var == 0:
        return False
    return acf1(x) > 0.95 or np.diff(x).var() < 0.5 * var


def select_d(s: Sequence[float], d_max: int = 2) -> int:
    """Smallest d <= d_max whose differenced series looks stationary."""
    x = _series(s)
    if len(x) < MIN_SELECT_D_LENGTH:
        raise ValueError(f"series too short to choose d (length {len(x)} < {MIN_SELECT_D_LENGTH})")
    for d in range(d_max + 1):
        if not needs_differencing(difference(x, d)):
            return d
    warnings.warn(f"no d <= {d_max} passed the stationarity check; using d={d_max}", RuntimeWarning, stacklevel=2)
    return d_max


@dataclass(frozen=True)
class ArFit:
    phi: np.ndarray
    intercept: float
    mean: float
    sigma2: float


def fit_ar(s: Sequence[float], p: int, demean: bool = True) -> ArFit:
    """Yule-Walker AR(p) estimate from biased sample autocovariances.

    With ``demean=False`` the process mean is taken as zero (no intercept).
    """
    x = _series(s)
    if p < 0:
        raise ValueError("p must be >= 0")
    if len(x) < 10 * max(p, 1):
        raise ValueError(f"AR({p}) needs at least {10 * max(p, 1)} points, got {len(x)}")
    mu = float(x.mean()) if demean else 0.0
    g = _acov(x, p, demean=demean)
    if p == 0:
        return ArFit(np.zeros(0), mu, mu, float(g[0]))
    R = g[np.abs(np.subtract.outer(np.arange(p), np.arange(p)))]
    try:
        if np.linalg.cond(R) > 1e12:
            raise np.linalg.LinAlgError
        phi = np.linalg.solve(R, g[1:])
    except np.linalg.LinAlgError:
        raise ValueError(f"singular autocovariance system for AR({p})") from None
    sigma2 = float(g[0] - phi @ g[1:])
    return ArFit(phi, mu * (1.0 - phi.sum()), mu, max(sigma2, 0.0))


def _roots_ok(coefs: np.ndarray) -> bool:
    """True when 1 - sum_k coefs[k-1] z^k has every root outside the unit circle."""
    if len(coefs) == 0 or not np.any(coefs):
        return True
    if np.abs(coefs).sum() < 1.0 / (1.0 + ROOT_TOL):
        return True
    if len(coefs) == 1:
        return False
    # reciprocal roots are the roots of z^k - c1 z^(k-1) - ... - ck
    inv = np.roots(np.concatenate([[1.0], -coefs]))
    return bool(np.all(np.abs(inv) < 1.0 / (1.0 + ROOT_TOL)))


def _step_down_ok(coefs) -> bool:
    """Fast check via reflection coefficients: all |kappa| < 1 iff every root of
    1 - sum_k coefs[k-1] z^k lies outside the unit circle."""
    a = list(coefs)
    for k in range(len(a), 0, -1):
        kappa = a[k - 1]
        if not -1.0 < kappa < 1.0:
            return False
        if k > 1:
            denom = 1.0 - kappa * kappa
            a = [(a[j] + kappa * a[k - 2 - j]) / denom for j in range(k - 1)]
    return True


def is_stationary(phi) -> bool:
    return _roots_ok(np.asarray(phi, dtype=float))


def is_invertible(theta) -> bool:
    return _roots_ok(np.asarray(theta, dtype=float))


def css_residuals(w: np.ndarray, c: float, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Innovations for t = p..n-1 with pre-sample innovations set to zero."""
    p = len(phi)
    if p:
        u = np.convolve(w, np.concatenate([[1.0], -phi]), mode="valid") - c
    else:
        u = w - c
    if len(theta) == 0:
        return u
    return lfilter([1.0], np.concatenate([[1.0], -theta]), u)


def _explore(f, x: np.ndarray, fx: float, steps: np.ndarray):
    for i in range(len(x)):
        for sign in (1.0, -1.0):
            y = x.copy()
            y[i] += sign * steps[i]
            fy = f(y)
            if fy < fx:
                x, fx = y, fy
                break
    return x, fx


def _coordinate_search(f, x0: np.ndarray, steps: np.ndarray, max_iter: int):
    """Hooke-Jeeves search: coordinate exploration plus pattern moves.

    Steps halve whenever a sweep fails to improve the objective by more
    than ``CSS_TOL`` (relative). Converged once every step is below
    ``STEP_TOL``.
    """
    base = x0.astype(float).copy()
    fbase = f(base)
    steps = steps.astype(float).copy()
    for it in range(1, max_iter + 1):
        x, fx = _explore(f, base, fbase, steps)
        if fx < fbase - CSS_TOL * abs(fbase):
            # keep jumping along the improving direction while it pays off
            while True:
                trial, ftrial = _explore(f, x + (x - base), f(x + (x - base)), steps)
                base, fbase = x, fx
                if ftrial < fx - CSS_TOL * abs(fx):
                    x, fx = trial, ftrial
                else:
                    break
            base, fbase = x, fx
        else:
            if fx < fbase:
                base, fbase = x, fx
            steps *= 0.5
            if steps.max() < STEP_TOL:
                return base, fbase, it
    raise ConvergenceError(f"coordinate search did not converge in {max_iter} iterations")


def _information_criteria(sigma2: float, n: int, k: int) -> tuple[float, float, float]:
    if sigma2 <= 0:
        sigma2 = 1e-300
    aic = n * math.log(sigma2) + 2 * k
    aicc = aic + 2 * k * (k + 1) / (n - k - 1) if n - k - 1 > 0 else math.inf
    bic = n * math.log(sigma2) + k * math.log(n)
    return aic, aicc, bic


def fit_arima(s: Sequence[float], order: ArimaOrder, include_intercept: bool | None = None,
              max_iter: int = MAX_ITER, restarts: int = 0, seed: int = 0) -> ArimaModel:
    """Fit ARIMA(p, d, q) by CSS.

    The intercept is estimated only when ``d == 0`` unless
    *include_intercept* says otherwise. For models with MA terms,
    ``restarts`` extra starting points jittered by a generator seeded with
    *seed* are searched as well and the lowest CSS wins.
    """
    p, d, q = order.p, order.d, order.q
    x = _series(s)
    w = difference(x, d)
    need = 10 * max(p, q, 1)
    if len(w) < need:
        raise ValueError(f"ARIMA{order} needs at least {need} differenced points, got {len(w)}")
    with_c = (d == 0) if include_intercept is None else include_intercept
    ar = fit_ar(w, p, demean=with_c)
    iterations = 0
    if q == 0:
        phi, theta, c = ar.phi, np.zeros(0), ar.intercept
    else:
        def unpack(v):
            off = 1 if with_c else 0
            return (v[0] if with_c else 0.0), v[off: off + p], v[off + p:]

        def css(v):
            c_, phi_, theta_ = unpack(v)
            if not (_step_down_ok(phi_) and _step_down_ok(theta_)):
                return math.inf
            e = css_residuals(w, c_, phi_, theta_)
            return float(e @ e)

        scale = float(w.std()) or 1.0
        x0 = np.concatenate([[ar.intercept] if with_c else [], ar.phi, np.zeros(q)])
        steps = np.concatenate([[0.1 * scale] if with_c else [], np.full(p + q, 0.1)])
        starts = [x0]
        rng = np.random.default_rng(seed)
        for _ in range(restarts):
            jitter = np.concatenate([[0.0] if with_c else [], rng.uniform(-0.3, 0.3, p + q)])
            starts.append(x0 + jitter)
        best = None
        for start in starts:
            if not math.isfinite(css(start)):
                continue
            v, fv, it = _coordinate_search(css, start, steps, max_iter)
            iterations += it
            if best is None or fv < best[1]:
                best = (v, fv)
        if best is None:
            raise NonStationaryError(f"no admissible starting point for ARIMA{order}")
        c, phi, theta = unpack(best[0])
        phi, theta = np.asarray(phi, dtype=float), np.asarray(theta, dtype=float)
    if not is_stationary(phi):
        raise NonStationaryError(f"ARIMA{order}: fitted AR part is not stationary")
    if not is_invertible(theta):
        raise NonStationaryError(f"ARIMA{order}: fitted MA part is not invertible")
    resid = css_residuals(w, float(c), phi, theta)
    n = len(resid)
    sigma2 = float(resid @ resid) / n
    k = p + q + 1
    aic, aicc, bic = _information_criteria(sigma2, n, k)
    denom = 1.0 - phi.sum()
    mean = float(c) / denom if abs(denom) > 1e-12 else float("nan")
    return ArimaModel(order, phi, theta, float(c), mean, sigma2, resid, aic, aicc, bic, iterations)


def fit_ma(s: Sequence[float], q: int, max_iter: int = MAX_ITER) -> ArimaModel:
    """MA(q) with mean, fitted by CSS."""
    return fit_arima(s, ArimaOrder(0, 0, q), include_intercept=True, max_iter=max_iter)


def arima_residuals(model: ArimaModel, s: Sequence[float]) -> np.ndarray:
    w = difference(s, model.order.d)
    return css_residuals(w, model.intercept, model.phi, model.theta)


def auto_order(s: Sequence[float], bounds: ArimaOrder = DEFAULT_BOUNDS, criterion: str = "bic") -> ArimaModel:
    """Grid-search p and q (d from ``select_d``) minimizing *criterion*.

    Ties go to the smaller p + q, then the smaller p.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    x = _series(s)
    if len(x) < MIN_AUTO_LENGTH:
        raise ValueError(f"series shorter than {MIN_AUTO_LENGTH} (got {len(x)})")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d = select_d(x, bounds.d)
    candidates = []
    for p in range(bounds.p + 1):
        for q in range(bounds.q + 1):
            try:
                m = fit_arima(x, ArimaOrder(p, d, q))
            except (ValueError, ConvergenceError) as exc:
                log.debug("ARIMA(%d,%d,%d) skipped: %s", p, d, q, exc)
                continue
            candidates.append(((m.criterion(criterion), p + q, p), m))
    if not candidates:
        raise ConvergenceError("no candidate ARIMA order could be fitted")
    return min(candidates, key=lambda kv: kv[0])[1]


def psi_weights(model: ArimaModel, h: int) -> np.ndarray:
    """MA(infinity) weights of the undifferenced process, psi_0 .. psi_{h-1}."""
    ar = np.concatenate([[1.0], -model.phi])
    for _ in range(model.order.d):
        ar = np.convolve(ar, [1.0, -1.0])
    full_phi = -ar[1:]
    ma = np.zeros(h)
    ma[: min(h, len(model.theta) + 1)] = np.concatenate([[1.0], -model.theta])[:h]
    psi = np.zeros(h)
    for j in range(h):
        acc = ma[j]
        for i in range(1, min(j, len(full_phi)) + 1):
            acc += full_phi[i - 1] * psi[j - i]
        psi[j] = acc
    return psi


def forecast(model: ArimaModel, history: Sequence[float], h: int, clamp: tuple[float, float] | None = (0.0, 100.0)) -> Forecast:
    """h-step forecast with 80% intervals.

    Future innovations are zero. Intervals come from the psi-weight
    variance on the unclamped scale; only the point forecast is clamped
    to *clamp* (the score domain by default).
    """
    x = _series(history)
    if h < 1:
        raise ValueError("horizon must be >= 1")
    if h > 10 * len(x):
        raise ValueError(f"horizon {h} exceeds 10x the history length {len(x)}")
    p, d = model.order.p, model.order.d
    w = difference(x, d)
    eps = css_residuals(w, model.intercept, model.phi, model.theta)
    w_ext = list(w)
    e_ext = [0.0] * p + list(eps)
    for _ in range(h):
        nxt = model.intercept
        for i, ph in enumerate(model.phi, start=1):
            nxt += ph * w_ext[-i]
        for j, th in enumerate(model.theta, start=1):
            nxt -= th * e_ext[-j]
        w_ext.append(nxt)
        e_ext.append(0.0)
    future = np.array(w_ext[len(w):])
    # undo differencing level by level using the last observed value of each
    for k in range(d - 1, -1, -1):
        last = difference(x, k)[-1]
        future = last + np.cumsum(future)
    var = model.sigma2 * np.cumsum(psi_weights(model, h) ** 2)
    half = Z80 * np.sqrt(var)
    lo, hi = future - half, future + half
    point = future.copy()
    if clamp is not None:
        point = np.clip(point, *clamp)
        lo, hi = np.minimum(lo, point), np.maximum(hi, point)
    return Forecast(h, point, lo, hi, var, future)

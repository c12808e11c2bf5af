"""Moving averages over score series: simple, weighted, corrected weighted, Hull.

Every smoother returns one value per input point. During warm-up (fewer
than ``lookback`` points seen) the window is truncated to what exists.
Smoothers accept a ``ScoreSeries`` (and then return one with the same
timestamps) or any 1-D sequence of floats (and then return an array).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ScoreSeries:
    device_id: str
    timestamps: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        sc = np.asarray(self.scores, dtype=float)
        if ts.shape != sc.shape or ts.ndim != 1:
            raise ValueError("timestamps and scores must be equal-length 1-D sequences")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError(f"series {self.device_id!r}: timestamps must be strictly ascending")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "scores", sc)

    def __len__(self) -> int:
        return len(self.scores)

    def append(self, ts: int, score: float) -> ScoreSeries:
        return ScoreSeries(self.device_id, np.append(self.timestamps, ts), np.append(self.scores, score))

    def in_score_range(self) -> bool:
        return bool(np.all((self.scores >= 0) & (self.scores <= 100)))


@dataclass(frozen=True)
class SmoothParams:
    lookback: int

    def __post_init__(self):
        if int(self.lookback) != self.lookback or self.lookback < 1:
            raise ValueError(f"lookback must be an integer >= 1, got {self.lookback}")


def _lookback(p) -> int:
    return (p if isinstance(p, SmoothParams) else SmoothParams(p)).lookback


def _values(s) -> np.ndarray:
    x = np.asarray(s.scores if isinstance(s, ScoreSeries) else s, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a 1-D series")
    return x


def _wrap(s, out: np.ndarray):
    if isinstance(s, ScoreSeries):
        return ScoreSeries(s.device_id, s.timestamps, out)
    return out


def _sma(x: np.ndarray, n: int) -> np.ndarray:
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    start = np.maximum(idx - n, 0)
    return (c[idx] - c[start]) / (idx - start)


def _wma(x: np.ndarray, n: int) -> np.ndarray:
    # weights 1..k, most recent weighted k; warm-up uses k = t + 1
    out = np.empty_like(x)
    if len(x) == 0:
        return out
    head = min(n - 1, len(x))
    k = np.arange(1, head + 1)
    out[:head] = np.cumsum(k * x[:head]) / (k * (k + 1) / 2)
    if len(x) >= n:
        out[n - 1:] = np.convolve(x, np.arange(n, 0, -1, dtype=float), mode="valid") / (n * (n + 1) / 2)
    return out


def _wma_corrected(x: np.ndarray, n: int) -> np.ndarray:
    # full-window weights n..1 by recency; warm-up divides by the weights used
    out = _wma(x, n)
    head = min(n - 1, len(x))
    if head:
        t = np.arange(head)
        i = np.arange(head, dtype=float)
        # sum_{i<=t} (n - t + i) * x[i]  and  sum of those weights
        num = (n - t) * np.cumsum(x[:head]) + np.cumsum(i * x[:head])
        den = (t + 1) * n - t * (t + 1) / 2
        out[:head] = num / den
    return out


def hull_windows(lookback: int) -> tuple[int, int, int]:
    """(full, half, sqrt) window lengths; half floors, sqrt rounds half up."""
    half = max(1, lookback // 2)
    root = max(1, int(math.floor(math.sqrt(lookback) + 0.5)))
    return lookback, half, root


def sma(s, p):
    """Mean of the last ``lookback`` values."""
    return _wrap(s, _sma(_values(s), _lookback(p)))


def wma(s, p):
    return _wrap(s, _wma(_values(s), _lookback(p)))


def wma_corrected(s, p):
    """Weighted average whose warm-up divisor is the sum of weights actually used.

    In the warm-up the most recent point keeps the full weight ``lookback``
    and older slots are simply absent, instead of shrinking the weight ramp.
    """
    return _wrap(s, _wma_corrected(_values(s), _lookback(p)))


def hma(s, p):
    """Hull moving average: WMA(round(sqrt n)) of 2*WMA(n//2) - WMA(n)."""
    full, half, root = hull_windows(_lookback(p))
    x = _values(s)
    raw = 2.0 * _wma(x, half) - _wma(x, full)
    return _wrap(s, _wma(raw, root))


SMOOTHERS = {"sma": sma, "wma": wma, "wma_corr": wma_corrected, "hma": hma}


def smooth_all(s, p) -> dict[str, np.ndarray]:
    x = _values(s)
    return {name: _values(fn(x, p)) for name, fn in SMOOTHERS.items()}


def lag_and_smoothness(original, smoothed) -> tuple[int, float]:
    """Estimate how far *smoothed* trails *original*, and its roughness.

    The lag is the shift k in [0, N // 4] maximizing the Pearson correlation
    between ``original[t]`` and ``smoothed[t + k]`` (smallest k on ties).
    Roughness is the standard deviation of the first differences of
    *smoothed*.
    """
    a, b = _values(original), _values(smoothed)
    if len(a) != len(b):
        raise ValueError("original and smoothed differ in length")
    n = len(a)
    if n < 8:
        raise ValueError("lag estimation needs at least 8 points")
    best_k, best_r = 0, -np.inf
    for k in range(n // 4 + 1):
        u, v = a[: n - k], b[k:]
        su, sv = u.std(), v.std()
        if su == 0 or sv == 0:
            r = 1.0 if np.allclose(u - u.mean(), v - v.mean()) else 0.0
        else:
            r = float(np.mean((u - u.mean()) * (v - v.mean())) / (su * sv))
        if r > best_r + 1e-12:
            best_k, best_r = k, r
    return best_k, float(np.std(np.diff(b)))


def to_series(values: Sequence[float], device_id: str = "", timestamps: Sequence[int] | None = None) -> ScoreSeries:
    values = np.asarray(values, dtype=float)
    ts = np.arange(len(values)) if timestamps is None else timestamps
    return ScoreSeries(device_id, ts, values)

"""Figure rendering for CLI report paths.

Figures are drawn with the object-oriented matplotlib API on an Agg
canvas, so nothing touches pyplot's global state or needs a display. The
format follows the output file's extension (png, svg, pdf).
"""

from __future__ import annotations

import os
from typing import Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

TIER_COLORS = ("#d62728", "#ff7f0e", "#2ca02c")


def _figure(width: float = 7.0, height: float = 4.0):
    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig: Figure, path) -> str:
    path = os.fspath(path)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable for png
    fig.savefig(path, metadata={"Software": None} if path.lower().endswith(".png") else None)
    return path


def plot_smoothing(path, timestamps: Sequence[float], raw: Sequence[float], smoothed: Mapping[str, Sequence[float]],
                   lookback: int | None = None) -> str:
    fig, ax = _figure()
    ax.plot(timestamps, raw, color="0.6", lw=1.0, label="raw")
    for name, values in smoothed.items():
        ax.plot(timestamps, values, lw=1.4, label=name)
    ax.set_xlabel("timestamp")
    ax.set_ylabel("score")
    ax.set_title("score smoothing" + (f" (lookback {lookback})" if lookback else ""))
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_score_distribution(path, scores: Sequence[float], thresholds: Sequence[float] | None = None,
                            title: str = "score distribution") -> str:
    fig, ax = _figure()
    ax.hist(np.asarray(scores, dtype=float), bins=40, range=(0, 100), color="#1f77b4", alpha=0.8)
    if thresholds is not None:
        for t, c in zip(thresholds, TIER_COLORS):
            ax.axvline(t, color=c, ls="--", lw=1.2, label=f"{t:.2f}")
        ax.legend(loc="best", fontsize=8, title="tier cuts")
    ax.set_xlabel("score")
    ax.set_ylabel("count")
    ax.set_title(title)
    return _save(fig, path)


def plot_forecast(path, history: Sequence[float], point: Sequence[float], lo: Sequence[float],
                  hi: Sequence[float], label: str = "") -> str:
    fig, ax = _figure()
    n = len(history)
    t_hist = np.arange(n)
    t_fc = np.arange(n, n + len(point))
    ax.plot(t_hist, history, color="0.3", lw=1.0, label="history")
    ax.plot(t_fc, point, color="#1f77b4", lw=1.5, label="forecast")
    ax.fill_between(t_fc, lo, hi, color="#1f77b4", alpha=0.25, label="80% interval")
    ax.set_xlabel("step")
    ax.set_ylabel("score")
    ax.set_title("forecast" + (f" {label}" if label else ""))
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_ab(path, metrics: Sequence[str], control: Sequence[float], experimental: Sequence[float]) -> str:
    """Bars of each group's relative change per metric, in percent."""
    fig, ax = _figure()
    x = np.arange(len(metrics))
    ax.bar(x - 0.2, 100 * np.asarray(control), width=0.4, label="control")
    ax.bar(x + 0.2, 100 * np.asarray(experimental), width=0.4, label="experimental")
    ax.axhline(0, color="black", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(metrics, rotation=15, fontsize=8)
    ax.set_ylabel("relative change (%)")
    ax.set_title("strategy effect by group")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)

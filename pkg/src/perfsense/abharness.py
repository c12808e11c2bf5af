"""Synthetic-fleet AB experiment for a power-reduction strategy.

Each synthetic device has a static model score on (0, 12] and a latent
daily stress level in [0, 1]:

    stress(t) = clip(base + wear + drift * t + amp * (0.5 + 0.5 sin(2 pi t / period + phase)) + N(0, sigma), 0, 1)

with ``base = 0.6 * (1 - model_score / 12)``. ``wear`` is a persistent
per-device offset (battery aging, storage fill) that the model score knows
nothing about; only live telemetry reveals it. Stress drives both the
telemetry the engine scores and the four outcome metrics. A strategy
relieves each metric by ``relief * stress``, so it helps strained devices
most. Baseline and treated outcomes share the same noise draws, so a
zero-effect strategy changes nothing at all.

Control group A holds devices whose model score is at or below the static
cut; experimental group B holds devices the engine places in the low tier
after ``assign_days`` of telemetry. The larger group is cut down to the
size of the smaller one by a seeded hash of device ids, which makes the
selection independent of input order.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from perfsense.engine import (
    DEFAULT_PROPORTIONS,
    Engine,
    Event,
    TriggerConfig,
    Collector,
    derive_thresholds,
)
from perfsense.matrix import DecisionMatrix
from perfsense.schema import FeatureSchema, default_schema
from perfsense.smooth import SmoothParams

MODEL_SCORE_MEAN = 8.0
MODEL_SCORE_SD = 1.5
DAY_MS = 86_400_000

FLEET_FEATURES = (
    "java_memory_usage_ratio", "block_gc_time", "cpu_usage_ratio", "cpu_speed",
    "battery_temprature", "temprature_level", "UI_frame_drop_count", "frame_rate",
)
METRICS = ("playback_stability", "playback_smoothness_ms", "first_swipe_ms", "resource_occupancy")


def fleet_schema() -> FeatureSchema:
    return default_schema().subset(FLEET_FEATURES)


def default_trigger_config() -> TriggerConfig:
    return TriggerConfig(
        scoring_events=frozenset({"playback"}),
        collectors=(Collector("perf", frozenset({"startup", "playback"})),),
        smoothing=SmoothParams(9),
    )


@dataclass(frozen=True)
class Degradation:
    thermal_drift: float  # stress gained per day
    memory_amplitude: float
    memory_period_days: float
    memory_phase: float
    noise_sigma: float
    seed: int
    wear: float = 0.0  # persistent stress offset unrelated to the model score


@dataclass(frozen=True)
class SyntheticDevice:
    device_id: str
    model_id: str
    model_score: float
    degradation: Degradation

    def __post_init__(self):
        if not 0 < self.model_score <= 12:
            raise ValueError(f"model_score must lie in (0, 12], got {self.model_score}")

    def stress(self, days: int) -> np.ndarray:
        d = self.degradation
        rng = np.random.default_rng([d.seed, 0])
        t = np.arange(days, dtype=float)
        base = 0.6 * (1.0 - self.model_score / 12.0) + d.wear
        wave = d.memory_amplitude * (0.5 + 0.5 * np.sin(2 * np.pi * t / d.memory_period_days + d.memory_phase))
        return np.clip(base + d.thermal_drift * t + wave + rng.normal(0.0, d.noise_sigma, days), 0.0, 1.0)

    def telemetry(self, days: int, events_per_day: int = 4, start_ms: int = 0) -> list[Event]:
        """``startup`` then ``playback`` events; features follow the day's stress."""
        rng = np.random.default_rng([self.degradation.seed, 1])
        cap = self.model_score / 12.0
        out = []
        for day, s in enumerate(self.stress(days)):
            for k in range(events_per_day):
                e = rng.normal(0.0, 1.0, 8)
                params = {
                    "java_memory_usage_ratio": _clip(30 + 50 * s + 4 * e[0], 0, 100),
                    "block_gc_time": _clip(50 + 400 * s + 20 * e[1], 0, 1e6),
                    "cpu_usage_ratio": _clip(20 + 60 * s + 4 * e[2], 0, 100),
                    "cpu_speed": _clip(1 + 2 * cap * (1 - 0.5 * s) + 0.1 * e[3], 0, 10),
                    "battery_temprature": _clip(26 + 18 * s + 1.5 * e[4], -20, 80),
                    "temprature_level": float(min(8, max(0, round(8 * s + 0.5 * e[5])))),
                    "UI_frame_drop_count": _clip(5 + 80 * s + 4 * e[6], 0, 1e5),
                    "frame_rate": _clip(60 * (1 - 0.5 * s) * (0.7 + 0.3 * cap) + 2 * e[7], 0, 240),
                }
                ts = start_ms + day * DAY_MS + k * (DAY_MS // events_per_day)
                name = "startup" if k == 0 else "playback"
                out.append(Event(name, self.device_id, ts, params))
        return out

    def snapshot(self, day: int = 0) -> list[float]:
        """Feature row of the first event of *day*, in ``FLEET_FEATURES`` order."""
        ev = self.telemetry(day + 1, events_per_day=1)[day]
        return [ev.params[n] for n in FLEET_FEATURES]


def _clip(x, lo, hi) -> float:
    return float(min(hi, max(lo, x)))


@dataclass(frozen=True)
class Fleet:
    devices: tuple[SyntheticDevice, ...]
    seed: int

    def __len__(self):
        return len(self.devices)

    def streams(self, days: int, events_per_day: int = 4) -> dict[str, list[Event]]:
        return {d.device_id: d.telemetry(days, events_per_day) for d in self.devices}

    def reference(self, day: int = 0) -> DecisionMatrix:
        # canonical row order keeps scores independent of fleet ordering
        devices = sorted(self.devices, key=lambda d: d.device_id)
        rows = np.array([d.snapshot(day) for d in devices])
        return DecisionMatrix(rows, FLEET_FEATURES, tuple(d.device_id for d in devices))

    def permuted(self, seed: int) -> Fleet:
        order = np.random.default_rng(seed).permutation(len(self.devices))
        return Fleet(tuple(self.devices[i] for i in order), self.seed)


def _truncated_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    # rejection sampling onto (0, 12]
    out = np.empty(0)
    while len(out) < n:
        x = rng.normal(MODEL_SCORE_MEAN, MODEL_SCORE_SD, 2 * n)
        out = np.concatenate([out, x[(x > 0) & (x <= 12)]])
    return out[:n]


def generate_fleet(n: int, seed: int = 0) -> Fleet:
    """Fleet of *n* devices with normally distributed model scores truncated to (0, 12].

    Every device gets its own seed spawned from *seed*, so its trajectory
    does not depend on the fleet size or on other devices.
    """
    if n < 10:
        raise ValueError(f"fleet needs at least 10 devices, got {n}")
    rng = np.random.default_rng(seed)
    scores = _truncated_normal(rng, n)
    children = np.random.SeedSequence(seed).spawn(n)
    devices = []
    for i, (score, child) in enumerate(zip(scores, children)):
        r = np.random.default_rng(child)
        dev_seed = int(child.generate_state(1)[0])
        deg = Degradation(
            thermal_drift=float(r.uniform(0.0, 0.01)),
            memory_amplitude=float(r.uniform(0.0, 0.3)),
            memory_period_days=float(r.uniform(5.0, 14.0)),
            memory_phase=float(r.uniform(0.0, 2 * np.pi)),
            noise_sigma=float(r.uniform(0.02, 0.08)),
            seed=dev_seed,
            wear=float(r.uniform(0.0, 1.0) ** 2 * 0.35),
        )
        devices.append(SyntheticDevice(f"dev{i:05d}", f"model{int(score * 4):02d}", round(float(score), 4), deg))
    return Fleet(tuple(devices), seed)


@dataclass(frozen=True)
class Strategy:
    """Fractional relief of each metric at full stress (0 = no effect)."""

    stability: float = 0.15
    smoothness: float = 0.30
    first_swipe: float = 0.10
    occupancy: float = 0.25

    @classmethod
    def null(cls) -> Strategy:
        return cls(0.0, 0.0, 0.0, 0.0)

    def reliefs(self) -> np.ndarray:
        return np.array([self.stability, self.smoothness, self.first_swipe, self.occupancy])


def outcomes(device: SyntheticDevice, start_day: int, end_day: int, strategy: Strategy | None = None) -> np.ndarray:
    """Daily outcome metrics (rows = days, columns = ``METRICS``)."""
    s = device.stress(end_day)[start_day:end_day]
    rng = np.random.default_rng([device.degradation.seed, 2])
    noise = rng.normal(0.0, 1.0, (end_day, 4))[start_day:end_day]
    base = np.column_stack([
        8 + 10 * s + 0.5 * noise[:, 0],
        5 + 20 * s + 1.0 * noise[:, 1],
        6 + 8 * s + 0.5 * noise[:, 2],
        0.2 + 0.25 * s + 0.01 * noise[:, 3],
    ])
    if strategy is None:
        return base
    return base * (1.0 - np.outer(s, strategy.reliefs()))


def relative_change(new: float, old: float) -> float:
    return (new - old) / old


@dataclass(frozen=True)
class GroupResult:
    name: str
    device_ids: tuple[str, ...]
    baseline: dict[str, float]
    treated: dict[str, float]

    def change(self, metric: str) -> float:
        return relative_change(self.treated[metric], self.baseline[metric])


@dataclass(frozen=True)
class ExperimentReport:
    control: GroupResult
    experimental: GroupResult
    thresholds: tuple[float, float]
    static_cut: float
    seed: int
    # metric -> {delta, control_change, experimental_change, cross_relative, cross_absolute}
    deltas: dict[str, dict[str, float]] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for g in (self.control, self.experimental):
            for m in METRICS:
                out.append({"group": g.name, "metric": m, "size": len(g.device_ids),
                            "baseline": g.baseline[m], "treated": g.treated[m],
                            "relative_change": g.change(m)})
        return out

    def delta_rows(self) -> list[dict]:
        return [{"metric": m, **self.deltas[m]} for m in METRICS]

    def table(self) -> str:
        lines = [f"groups: control={len(self.control.device_ids)} experimental={len(self.experimental.device_ids)}"
                 f"  static_cut={self.static_cut:g}  low_threshold={self.thresholds[0]:.4f}"]
        lines.append(f"{'group':<13}{'metric':<24}{'baseline':>12}{'treated':>12}{'change':>10}")
        for r in self.rows():
            lines.append(f"{r['group']:<13}{r['metric']:<24}{r['baseline']:>12.4f}{r['treated']:>12.4f}"
                         f"{100 * r['relative_change']:>9.2f}%")
        lines.append(f"{'metric':<24}{'delta':>10}{'cross_rel':>11}{'cross_abs':>11}")
        for r in self.delta_rows():
            lines.append(f"{r['metric']:<24}{100 * r['delta']:>9.2f}%{100 * r['cross_relative']:>10.2f}%"
                         f"{r['cross_absolute']:>11.4f}")
        return "\n".join(lines)


def _hash_rank(device_id: str, seed: int) -> bytes:
    return hashlib.sha256(f"{seed}:{device_id}".encode()).digest()


def _equalize(a: list[str], b: list[str], seed: int) -> tuple[list[str], list[str]]:
    k = min(len(a), len(b))
    pick = lambda ids: sorted(sorted(ids, key=lambda i: _hash_rank(i, seed))[:k])  # noqa: E731
    return pick(a), pick(b)


def assignment_scores(fleet: Fleet, cfg: TriggerConfig, assign_days: int, events_per_day: int = 2,
                      reference: DecisionMatrix | None = None) -> dict[str, float]:
    """Last real-time engine score of every device after *assign_days* of telemetry."""
    schema = fleet_schema()
    engine = Engine(schema, cfg, reference if reference is not None else fleet.reference(0))
    scores = {}
    for dev in fleet.devices:
        recs = engine.replay(dev.telemetry(assign_days, events_per_day))
        ok = [r.realtime for r in recs if r.realtime is not None]
        if ok:
            scores[dev.device_id] = ok[-1]
    return scores


def run_experiment(fleet: Fleet, cfg: TriggerConfig | None = None, static_cut: float = 7.0,
                   dynamic_cut: float | None = None, strategy: Strategy | None = None,
                   duration_days: int = 30, assign_days: int = 7, events_per_day: int = 2,
                   seed: int = 0) -> ExperimentReport:
    """Compare a strategy on static-low (A) and dynamic-low (B) device groups.

    When *dynamic_cut* is None the low-tier threshold is derived from the
    fleet's assignment-time scores with the default tier proportions
    (fleets of at least 100 devices) or taken from *cfg* otherwise.
    """
    if not 0 < static_cut <= 7:
        raise ValueError(f"static_cut must lie in (0, 7], got {static_cut}")
    if duration_days <= assign_days:
        raise ValueError("duration_days must exceed assign_days")
    cfg = cfg or default_trigger_config()
    strategy = strategy or Strategy()
    scores = assignment_scores(fleet, cfg, assign_days, events_per_day)
    if dynamic_cut is not None:
        thresholds = (float(dynamic_cut), float(cfg.tier_thresholds[1]))
    elif len(scores) >= 100:
        thresholds = derive_thresholds(list(scores.values()), DEFAULT_PROPORTIONS)
    else:
        thresholds = tuple(cfg.tier_thresholds)
    low = thresholds[0]

    a_ids = [d.device_id for d in fleet.devices if d.model_score <= static_cut]
    b_ids = [i for i, s in scores.items() if s <= low]
    if not a_ids or not b_ids:
        raise ValueError(f"empty group: control={len(a_ids)} experimental={len(b_ids)}")
    a_ids, b_ids = _equalize(a_ids, b_ids, seed)
    by_id = {d.device_id: d for d in fleet.devices}

    def group(name, ids):
        base = np.mean([outcomes(by_id[i], assign_days, duration_days).mean(axis=0) for i in ids], axis=0)
        treat = np.mean([outcomes(by_id[i], assign_days, duration_days, strategy).mean(axis=0) for i in ids], axis=0)
        return GroupResult(name, tuple(ids), dict(zip(METRICS, map(float, base))),
                           dict(zip(METRICS, map(float, treat))))

    ga, gb = group("control", a_ids), group("experimental", b_ids)
    deltas = {}
    for m in METRICS:
        deltas[m] = {
            "control_change": ga.change(m),
            "experimental_change": gb.change(m),
            "delta": gb.change(m) - ga.change(m),
            "cross_relative": relative_change(gb.treated[m], ga.treated[m]),
            "cross_absolute": gb.treated[m] - ga.treated[m],
        }
    return ExperimentReport(ga, gb, (float(thresholds[0]), float(thresholds[1])), static_cut, seed, deltas)


def null_delta_bound(report: ExperimentReport) -> float:
    """Largest |delta| across metrics; exactly 0 for a zero-effect strategy."""
    return max(abs(v["delta"]) for v in report.deltas.values()) if report.deltas else math.nan

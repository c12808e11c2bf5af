"""Event-driven scoring engine.

Events name what happened on a device (``startup``, ``playback`` or any
registered custom name) and carry parameters. Collectors subscribed to an
event copy their features out of its parameters; scoring events rank the
device's latest feature snapshot against a reference population and update
three views of its state: the real-time score, a short-term HMA value and
an ARIMA forecast once enough history exists. Every scoring event appends a
record to an append-only score log.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import threading
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from perfsense.config import ConfigError, parse_blocks, parse_float, parse_interval, parse_list
from perfsense.evaluate import evaluate_multilevel
from perfsense.forecast import (
    ArimaOrder,
    ConvergenceError,
    Forecast,
    auto_order,
    fit_arima,
    forecast,
)
from perfsense.matrix import DecisionMatrix
from perfsense.schema import FeatureSchema
from perfsense.smooth import ScoreSeries, SmoothParams, hma

log = logging.getLogger(__name__)

BUILTIN_EVENTS = frozenset({"startup", "playback"})
DEFAULT_THRESHOLDS = (28.67, 56.82)
DEFAULT_PROPORTIONS = (0.1345, 0.3966, 0.4689)
FORECAST_MIN_POINTS = 50
LOG_HEADER = "#perfsense-score-log v1"

STATUS_OK = "ok"
STATUS_INSUFFICIENT = "insufficient-features"
STATUS_OUT_OF_ORDER = "out-of-order"


class Tier(str, enum.Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


class UnknownEventError(KeyError):
    pass


def map_tier(score: float, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> Tier:
    """Tier of a score: low (0, t1], mid (t1, t2], high (t2, 100).

    Scores at or below 0 count as low, at or above 100 as high.
    """
    t1, t2 = thresholds
    if score <= t1:
        return Tier.LOW
    if score <= t2:
        return Tier.MID
    return Tier.HIGH


def derive_thresholds(scores: Sequence[float], proportions: Sequence[float] = DEFAULT_PROPORTIONS) -> tuple[float, float]:
    """Cut points reproducing the requested low/mid/high proportions.

    The cuts are the order statistics at ranks ceil(p1 * n) and
    ceil((p1 + p2) * n), so each tier's share is within 1/n of the request
    when scores are distinct.
    """
    x = np.sort(np.asarray(scores, dtype=float))
    n = len(x)
    if n < 100:
        raise ValueError(f"need at least 100 scores to derive thresholds, got {n}")
    if len(proportions) != 3 or min(proportions) < 0 or abs(sum(proportions) - 1) > 1e-9:
        raise ValueError(f"proportions must be three non-negative reals summing to 1, got {proportions}")
    if x[0] == x[-1]:
        raise ValueError("degenerate sample: all scores are equal")
    p1, p2, _ = proportions
    k1 = max(1, math.ceil(p1 * n - 1e-9))
    k2 = max(k1, math.ceil((p1 + p2) * n - 1e-9))
    return float(x[k1 - 1]), float(x[min(k2, n) - 1])


def tier_proportions(scores: Sequence[float], thresholds: Sequence[float]) -> tuple[float, float, float]:
    tiers = [map_tier(s, thresholds) for s in scores]
    n = len(tiers)
    return tuple(sum(t is tier for t in tiers) / n for tier in Tier)


@dataclass(frozen=True)
class Event:
    name: str
    device_id: str
    timestamp: int
    params: Mapping[str, float | int | str | bool] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise ValueError("event name must be non-empty")
        if self.timestamp < 0:
            raise ValueError("event timestamp must be >= 0")

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "device_id": self.device_id, "ts_ms": self.timestamp,
                           "params": dict(self.params)})

    @classmethod
    def from_json(cls, line: str) -> Event:
        obj = json.loads(line)
        missing = [k for k in ("name", "device_id", "ts_ms") if k not in obj]
        if missing:
            raise ValueError(f"event record missing keys {missing}")
        return cls(str(obj["name"]), str(obj["device_id"]), int(obj["ts_ms"]), dict(obj.get("params") or {}))


def read_events(lines: Iterable[str]) -> Iterator[Event]:
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            try:
                yield Event.from_json(line)
            except (ValueError, TypeError) as exc:
                raise ValueError(f"event line {lineno}: {exc}") from None


@dataclass(frozen=True)
class Collector:
    """Copies ``features`` out of the parameters of ``events``.

    An empty feature list means every schema indicator found in the params.
    """

    name: str
    events: frozenset[str]
    features: tuple[str, ...] = ()


@dataclass(frozen=True)
class TriggerConfig:
    scoring_events: frozenset[str]
    collectors: tuple[Collector, ...] = ()
    smoothing: SmoothParams = SmoothParams(9)
    forecast_horizon: int = 5
    tier_thresholds: tuple[float, float] = DEFAULT_THRESHOLDS
    custom_events: frozenset[str] = frozenset()
    # None means automatic order selection within forecast_bounds
    forecast_order: ArimaOrder | None = None
    forecast_bounds: ArimaOrder = ArimaOrder(2, 1, 2)
    criterion: str = "bic"

    def __post_init__(self):
        if not self.scoring_events:
            raise ValueError("at least one scoring event is required")
        t1, t2 = self.tier_thresholds
        if not 0 < t1 < t2 < 100:
            raise ValueError(f"tier thresholds must satisfy 0 < t1 < t2 < 100, got {self.tier_thresholds}")
        if self.forecast_horizon < 1:
            raise ValueError("forecast_horizon must be >= 1")

    @property
    def known_events(self) -> frozenset[str]:
        return BUILTIN_EVENTS | self.scoring_events | self.custom_events | frozenset(
            e for c in self.collectors for e in c.events
        )

    @property
    def collection_policy(self) -> dict[str, frozenset[str]]:
        return {c.name: c.events for c in self.collectors}


def register_event(cfg: TriggerConfig, name: str) -> TriggerConfig:
    if not name or not name.strip():
        raise ValueError("event name must be non-empty")
    if name in cfg.known_events:
        return cfg
    return replace(cfg, custom_events=cfg.custom_events | {name})


def parse_trigger_config(text: str) -> TriggerConfig:
    """Read ``[trigger]`` and ``[collector NAME]`` blocks.

    ``[trigger]`` keys: ``scoring_events``, ``events`` (custom names),
    ``lookback``, ``forecast_horizon``, ``tier_thresholds = [t1, t2]``,
    ``forecast_order = auto | p,d,q``, ``forecast_bounds = p,d,q``,
    ``criterion``. ``[collector]`` keys: ``events``, ``features``.
    """
    kwargs: dict = {}
    collectors = []
    seen_trigger = False
    for block in parse_blocks(text):
        if block.kind == "trigger":
            seen_trigger = True
            pairs = block.pairs()
            unknown = set(pairs) - {"scoring_events", "events", "lookback", "forecast_horizon", "tier_thresholds",
                                    "forecast_order", "forecast_bounds", "criterion"}
            if unknown:
                raise ConfigError(f"[trigger] has unknown keys {sorted(unknown)}", block.lineno)
            kwargs["scoring_events"] = frozenset(parse_list(block.require("scoring_events")))
            if "events" in pairs:
                kwargs["custom_events"] = frozenset(parse_list(pairs["events"]))
            if "lookback" in pairs:
                kwargs["smoothing"] = SmoothParams(int(parse_float(pairs["lookback"], "lookback", block.lineno)))
            if "forecast_horizon" in pairs:
                kwargs["forecast_horizon"] = int(parse_float(pairs["forecast_horizon"], "forecast_horizon", block.lineno))
            if "tier_thresholds" in pairs:
                kwargs["tier_thresholds"] = parse_interval(pairs["tier_thresholds"], "tier_thresholds", block.lineno)
            order = pairs.get("forecast_order", "auto")
            kwargs["forecast_order"] = None if order == "auto" else ArimaOrder.parse(order)
            if "forecast_bounds" in pairs:
                kwargs["forecast_bounds"] = ArimaOrder.parse(pairs["forecast_bounds"])
            if "criterion" in pairs:
                kwargs["criterion"] = pairs["criterion"]
        elif block.kind == "collector":
            if not block.label:
                raise ConfigError("[collector] needs a name, e.g. [collector cpu]", block.lineno)
            pairs = block.pairs()
            collectors.append(Collector(block.label, frozenset(parse_list(block.require("events"))),
                                        tuple(parse_list(pairs.get("features", "")))))
    if not seen_trigger:
        raise ConfigError("missing [trigger] block")
    try:
        return TriggerConfig(collectors=tuple(collectors), **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class DeviceState:
    device_id: str
    latest_features: dict[str, tuple[float, int]] = field(default_factory=dict)
    score_series: ScoreSeries | None = None
    short_term: float | None = None
    forecast: Forecast | None = None
    tier: Tier | None = None

    def __post_init__(self):
        if self.score_series is None:
            self.score_series = ScoreSeries(self.device_id, np.zeros(0, dtype=np.int64), np.zeros(0))


@dataclass(frozen=True)
class ScoreRecord:
    device_id: str
    ts_ms: int
    realtime: float | None
    short_term: float | None
    forecast_next: float | None
    tier: str | None
    status: str

    def to_json(self) -> str:
        return json.dumps({
            "device_id": self.device_id, "ts_ms": self.ts_ms, "realtime": self.realtime,
            "short_term": self.short_term, "forecast_next": self.forecast_next,
            "tier": self.tier, "status": self.status,
        })

    @classmethod
    def from_json(cls, line: str) -> ScoreRecord:
        obj = json.loads(line)
        return cls(obj["device_id"], int(obj["ts_ms"]), obj["realtime"], obj["short_term"],
                   obj["forecast_next"], obj["tier"], obj["status"])


def _collect(state: DeviceState, ev: Event, cfg: TriggerConfig, schema: FeatureSchema) -> None:
    names = set(schema.names)
    for col in cfg.collectors:
        if ev.name not in col.events:
            continue
        wanted = col.features or tuple(k for k in ev.params if k in names)
        for feat in wanted:
            if feat not in ev.params or feat not in names:
                continue
            try:
                value = float(ev.params[feat])
            except (TypeError, ValueError):
                continue
            if not (math.isfinite(value) and schema[feat].in_range(value)):
                continue
            prev = state.latest_features.get(feat)
            if prev is not None and prev[1] > ev.timestamp:
                continue  # never let an older reading replace a fresher one
            state.latest_features[feat] = (value, ev.timestamp)


def _refresh_forecast(series: np.ndarray, cfg: TriggerConfig) -> Forecast | None:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if cfg.forecast_order is None:
                model = auto_order(series, cfg.forecast_bounds, cfg.criterion)
            else:
                model = fit_arima(series, cfg.forecast_order)
        return forecast(model, series, cfg.forecast_horizon)
    except (ValueError, ConvergenceError) as exc:
        log.warning("forecast refresh failed: %s", exc)
        return None


def dispatch(state: DeviceState, ev: Event, cfg: TriggerConfig, schema: FeatureSchema,
             reference: DecisionMatrix) -> tuple[DeviceState, list[ScoreRecord]]:
    """Route one event for one device; *state* is updated in place and returned."""
    if ev.name not in cfg.known_events:
        raise UnknownEventError(f"event {ev.name!r} is not registered")
    if ev.device_id != state.device_id:
        raise ValueError(f"event for {ev.device_id!r} dispatched to state of {state.device_id!r}")
    _collect(state, ev, cfg, schema)
    if ev.name not in cfg.scoring_events:
        return state, []

    def record(status, realtime=None):
        fc = None if state.forecast is None else float(state.forecast.point[0])
        return ScoreRecord(ev.device_id, ev.timestamp, realtime, state.short_term if realtime is not None else None,
                           fc if realtime is not None else None,
                           state.tier.value if realtime is not None and state.tier else None, status)

    missing = [n for n in schema.names if n not in state.latest_features]
    if missing:
        return state, [record(STATUS_INSUFFICIENT)]
    series = state.score_series
    if len(series) and ev.timestamp <= series.timestamps[-1]:
        return state, [record(STATUS_OUT_OF_ORDER)]
    row = [state.latest_features[n][0] for n in schema.names]
    population = reference.reorder(schema).append_row(row, f"{ev.device_id}@{ev.timestamp}")
    realtime = float(evaluate_multilevel(population, schema).scaled[-1])
    state.score_series = series = series.append(ev.timestamp, realtime)
    state.short_term = float(hma(series.scores, cfg.smoothing)[-1])
    state.tier = map_tier(realtime, cfg.tier_thresholds)
    if len(series) >= FORECAST_MIN_POINTS:
        state.forecast = _refresh_forecast(series.scores, cfg)
    return state, [record(STATUS_OK, realtime)]


class ScoreLog:
    """Append-only newline-delimited score log with a version header.

    One writer per file. Each record is written with a single ``write``
    and flushed, so a crash can at worst leave a torn final line, which
    ``load`` skips with a warning.
    """

    def __init__(self, path, fsync: bool = False):
        self.path = os.fspath(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._recover()
        self._fh = open(self.path, "a", encoding="utf-8", newline="\n")
        if self._fh.tell() == 0:
            self._write_line(LOG_HEADER)

    def _recover(self):
        if not os.path.exists(self.path):
            return
        with open(self.path, "rb+") as fh:
            data = fh.read()
            if data and not data.endswith(b"\n"):
                cut = data.rfind(b"\n") + 1
                warnings.warn(f"{self.path}: dropping torn final line before appending", RuntimeWarning, stacklevel=3)
                fh.truncate(cut)

    def _write_line(self, line: str):
        self._fh.write(line + "\n")
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())

    def append(self, rec: ScoreRecord) -> None:
        with self._lock:
            self._write_line(rec.to_json())

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @staticmethod
    def load(path) -> list[ScoreRecord]:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        lines = text.split("\n")
        if not lines or lines[0] != LOG_HEADER:
            raise ValueError(f"{path}: missing score-log header {LOG_HEADER!r}")
        torn = lines[-1] != ""  # complete files end with a newline
        body = lines[1:-1] if not torn else lines[1:]
        out = []
        for i, line in enumerate(body):
            last = i == len(body) - 1
            try:
                out.append(ScoreRecord.from_json(line))
            except (ValueError, KeyError, TypeError):
                if last and torn:
                    warnings.warn(f"{path}: skipping torn final line", RuntimeWarning, stacklevel=2)
                    continue
                raise ValueError(f"{path}: corrupt record on line {i + 2}") from None
        return out


class Engine:
    """Holds per-device state and routes events through ``dispatch``.

    Events of one device are processed serially; a lock per device allows
    different devices to be dispatched from different threads.
    """

    def __init__(self, schema: FeatureSchema, cfg: TriggerConfig, reference: DecisionMatrix,
                 log: ScoreLog | None = None):
        self.schema = schema
        self.cfg = cfg
        self.reference = reference.reorder(schema)
        self.log = log
        self.states: dict[str, DeviceState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def register_event(self, name: str) -> None:
        self.cfg = register_event(self.cfg, name)

    def state(self, device_id: str) -> DeviceState:
        with self._guard:
            if device_id not in self.states:
                self.states[device_id] = DeviceState(device_id)
                self._locks[device_id] = threading.Lock()
            return self.states[device_id]

    def dispatch(self, ev: Event) -> list[ScoreRecord]:
        state = self.state(ev.device_id)
        with self._locks[ev.device_id]:
            _, records = dispatch(state, ev, self.cfg, self.schema, self.reference)
            if self.log is not None:
                for rec in records:
                    self.log.append(rec)
        return records

    def replay(self, events: Iterable[Event]) -> list[ScoreRecord]:
        out = []
        for ev in events:
            out.extend(self.dispatch(ev))
        return out

from __future__ import annotations

import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from perfsense.config import ConfigError
from perfsense.engine import (
    LOG_HEADER,
    STATUS_INSUFFICIENT,
    Collector,
    DeviceState,
    Engine,
    Event,
    ScoreLog,
    ScoreRecord,
    Tier,
    TriggerConfig,
    UnknownEventError,
    derive_thresholds,
    dispatch,
    map_tier,
    parse_trigger_config,
    read_events,
    register_event,
    tier_proportions,
)
from perfsense.matrix import read_matrix_csv
from perfsense.schema import load_schema
from perfsense.smooth import hma

from conftest import FIXTURES


@pytest.fixture(scope="module")
def setup():
    schema = load_schema(FIXTURES / "fleet_schema.cfg")
    with open(FIXTURES / "reference.csv") as fh:
        ref = read_matrix_csv(fh)
    cfg = parse_trigger_config((FIXTURES / "trigger.cfg").read_text())
    events = list(read_events((FIXTURES / "events_60.ndjson").read_text().splitlines()))
    return schema, ref, cfg, events


def test_trigger_config_parsed(setup):
    _, _, cfg, _ = setup
    assert cfg.scoring_events == {"playback"}
    assert cfg.smoothing.lookback == 9 and cfg.forecast_horizon == 5
    assert cfg.tier_thresholds == (28.67, 56.82)
    assert cfg.collection_policy == {"perf": frozenset({"startup", "playback"})}
    assert "seek" in cfg.known_events


@pytest.mark.parametrize("text, match", [
    ("[collector x]\nevents = a\n", "missing \\[trigger\\]"),
    ("[trigger]\nscoring_events = a\nbogus = 1\n", "unknown keys"),
    ("[trigger]\nlookback = 3\n", "scoring_events"),
    ("[trigger]\nscoring_events = a\ntier_thresholds = [60, 30]\n", "0 < t1 < t2 < 100"),
    ("[trigger]\nscoring_events = a\n[collector]\nevents = a\n", "needs a name"),
])
def test_trigger_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_trigger_config(text)


def test_register_event(setup):
    schema, ref, cfg, _ = setup
    cfg2 = register_event(cfg, "pause")
    assert "pause" in cfg2.known_events
    assert register_event(cfg, "startup") is cfg
    with pytest.raises(ValueError):
        register_event(cfg, "")
    state = DeviceState("d")
    with pytest.raises(UnknownEventError):
        dispatch(state, Event("pause", "d", 1), cfg, schema, ref)
    _, recs = dispatch(state, Event("pause", "d", 1), cfg2, schema, ref)
    assert recs == []


def test_event_validation():
    with pytest.raises(ValueError):
        Event("", "d", 0)
    with pytest.raises(ValueError, match="line 1"):
        list(read_events(['{"name": "x"}']))


def test_non_scoring_event_only_collects(setup):
    schema, ref, cfg, events = setup
    state = DeviceState(events[0].device_id)
    start = Event("startup", state.device_id, 5, dict(events[0].params))
    _, recs = dispatch(state, start, cfg, schema, ref)
    assert recs == [] and len(state.score_series) == 0
    assert set(state.latest_features) == set(schema.names)


def test_scoring_event_adds_one_point(setup):
    schema, ref, cfg, events = setup
    state = DeviceState(events[0].device_id)
    _, recs = dispatch(state, events[0], cfg, schema, ref)
    assert len(recs) == 1 and recs[0].status == "ok" and len(state.score_series) == 1
    assert 0 <= recs[0].realtime <= 100
    assert state.tier == map_tier(recs[0].realtime, cfg.tier_thresholds)


def test_insufficient_features(setup):
    schema, ref, cfg, _ = setup
    state = DeviceState("d")
    _, recs = dispatch(state, Event("playback", "d", 1, {"cpu_speed": 2.0}), cfg, schema, ref)
    assert recs[0].status == STATUS_INSUFFICIENT and recs[0].realtime is None
    assert len(state.score_series) == 0


def test_out_of_range_and_stale_features_ignored(setup):
    schema, ref, cfg, events = setup
    state = DeviceState("d")
    dispatch(state, Event("startup", "d", 100, {"cpu_speed": 2.0}), cfg, schema, ref)
    dispatch(state, Event("startup", "d", 50, {"cpu_speed": 9.0}), cfg, schema, ref)
    dispatch(state, Event("startup", "d", 150, {"cpu_speed": 99.0}), cfg, schema, ref)
    assert state.latest_features["cpu_speed"] == (2.0, 100)


def test_replay_oracle(setup):
    schema, ref, cfg, events = setup
    eng = Engine(schema, cfg, ref)
    recs = eng.replay(events)
    state = eng.states[events[0].device_id]
    assert len(recs) == 60 and all(r.status == "ok" for r in recs)
    series = np.array([r.realtime for r in recs])
    assert np.array_equal(state.score_series.scores, series)
    assert state.short_term == hma(series, cfg.smoothing)[-1]
    assert [r.short_term for r in recs] == [hma(series[: i + 1], 9)[-1] for i in range(60)]
    assert state.forecast is not None and recs[-1].forecast_next == state.forecast.point[0]
    assert all(r.forecast_next is None for r in recs[:49])
    assert all(r.tier == map_tier(r.realtime).value for r in recs)


def test_replay_is_byte_identical(setup, tmp_path):
    schema, ref, cfg, events = setup
    paths = [tmp_path / "a.log", tmp_path / "b.log"]
    for p in paths:
        with ScoreLog(p) as log:
            Engine(schema, cfg, ref, log).replay(events)
    a, b = (p.read_bytes() for p in paths)
    assert a == b and a.startswith((LOG_HEADER + "\n").encode())


def test_map_tier_examples():
    assert map_tier(20) is Tier.LOW
    assert map_tier(28.67) is Tier.LOW
    assert map_tier(28.68) is Tier.MID
    assert map_tier(56.82) is Tier.MID
    assert map_tier(76.05) is Tier.HIGH
    assert map_tier(0) is Tier.LOW and map_tier(100) is Tier.HIGH


def test_derive_thresholds_uniform():
    x = np.random.default_rng(0).uniform(0, 100, 4000)
    t1, t2 = derive_thresholds(x, (0.25, 0.5, 0.25))
    assert abs(t1 - 25) < 3 and abs(t2 - 75) < 3


def test_derive_thresholds_10k():
    x = np.random.default_rng(1).normal(50, 15, 10_000).clip(0.01, 99.99)
    props = (0.1345, 0.3966, 0.4689)
    t = derive_thresholds(x, props)
    got = tier_proportions(x, t)
    assert np.all(np.abs(np.array(got) - props) <= 0.0002)


def test_derive_thresholds_errors():
    with pytest.raises(ValueError, match="100"):
        derive_thresholds(np.arange(50.0))
    with pytest.raises(ValueError, match="degenerate"):
        derive_thresholds(np.full(200, 3.0))
    with pytest.raises(ValueError):
        derive_thresholds(np.arange(200.0), (0.5, 0.6, 0.1))


@given(st.lists(st.floats(0, 100), min_size=100, max_size=400, unique=True),
       st.tuples(st.floats(0.05, 0.9), st.floats(0.05, 0.9)).filter(lambda p: p[0] + p[1] < 0.95))
def test_derive_thresholds_within_one_over_n(scores, p):
    props = (p[0], p[1], 1 - p[0] - p[1])
    t = derive_thresholds(scores, props)
    got = tier_proportions(scores, t)
    n = len(scores)
    assert all(abs(g - q) <= 1 / n + 1e-12 for g, q in zip(got, props))


def rec(i):
    return ScoreRecord("d", i, 50.0 + i / 7, 49.0, None if i % 2 else 48.5, "mid", "ok")


def test_log_round_trip(tmp_path):
    p = tmp_path / "s.log"
    records = [rec(i) for i in range(1000)]
    with ScoreLog(p) as log:
        for r in records:
            log.append(r)
    assert ScoreLog.load(p) == records


def test_torn_final_line(tmp_path):
    p = tmp_path / "s.log"
    with ScoreLog(p) as log:
        for i in range(1000):
            log.append(rec(i))
    data = p.read_bytes()
    p.write_bytes(data[:-25])
    with pytest.warns(RuntimeWarning, match="torn"):
        assert len(ScoreLog.load(p)) == 999
    # reopening drops the fragment before appending
    with pytest.warns(RuntimeWarning):
        with ScoreLog(p) as log:
            log.append(rec(5000))
    out = ScoreLog.load(p)
    assert len(out) == 1000 and out[-1].ts_ms == 5000


def test_corrupt_middle_line_and_header(tmp_path):
    p = tmp_path / "s.log"
    p.write_text(LOG_HEADER + "\n" + rec(1).to_json() + "\n{broken\n" + rec(2).to_json() + "\n")
    with pytest.raises(ValueError, match="line 3"):
        ScoreLog.load(p)
    p.write_text(rec(1).to_json() + "\n")
    with pytest.raises(ValueError, match="header"):
        ScoreLog.load(p)


def test_concurrent_devices_single_writer(setup, tmp_path):
    schema, ref, cfg, events = setup
    streams = {}
    for k in range(4):
        dev = f"dev{k}"
        streams[dev] = [Event(e.name, dev, e.timestamp, e.params) for e in events[:20]]
    p = tmp_path / "c.log"
    with ScoreLog(p) as log:
        eng = Engine(schema, cfg, ref, log)
        threads = [threading.Thread(target=eng.replay, args=(s,)) for s in streams.values()]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    out = ScoreLog.load(p)
    assert len(out) == 80
    for dev in streams:
        ts = [r.ts_ms for r in out if r.device_id == dev]
        assert ts == sorted(ts) and len(ts) == 20
    # same device data, same reference: identical score sequences per device
    seqs = {tuple(r.realtime for r in out if r.device_id == d) for d in streams}
    assert len(seqs) == 1


def test_out_of_order_scoring_event(setup):
    schema, ref, cfg, events = setup
    state = DeviceState(events[0].device_id)
    dispatch(state, events[1], cfg, schema, ref)
    _, recs = dispatch(state, Event("playback", state.device_id, events[0].timestamp, events[0].params),
                       cfg, schema, ref)
    assert recs[0].status == "out-of-order" and len(state.score_series) == 1


def test_default_collector_all_params(setup):
    schema, ref, _, events = setup
    cfg = TriggerConfig(scoring_events=frozenset({"playback"}),
                        collectors=(Collector("cpu", frozenset({"startup"}), ("cpu_speed",)),))
    state = DeviceState("d")
    dispatch(state, Event("startup", "d", 1, dict(events[0].params)), cfg, schema, ref)
    assert set(state.latest_features) == {"cpu_speed"}

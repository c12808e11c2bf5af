"""Descriptive time-series portrait labels.

Each day a device gets a tag 0-3 from threshold rules on its daily
features (0 = unpredictable, 1 = good, 2 = ordinary, 3 = poor). A portrait
is fitted from the trailing window of daily tags, and fitted portraits are
scored against the tags observed in a later, held-out window.
"""

from __future__ import annotations

import datetime as dt
import json
import operator
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from perfsense.config import ConfigError, parse_blocks, parse_float

TAGS = (0, 1, 2, 3)
UNPREDICTABLE = "unpredictable"

_OPS = {">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le}
_ALIASES = {"≥": ">=", "≤": "<="}
_PREDICATE = re.compile(r"^(\S+)\s+(unpredictable|>=|<=|>|<|≥|≤)\s*(\S+)?(?:\s+and\s+(>=|<=|>|<|≥|≤)\s*(\S+))?$")


@dataclass(frozen=True)
class Condition:
    feature: str
    comparator: str
    threshold: float | None = None
    second: tuple[str, float] | None = None

    def holds(self, value: float) -> bool:
        if self.comparator == UNPREDICTABLE:
            return False
        ok = _OPS[self.comparator](value, self.threshold)
        if ok and self.second is not None:
            cmp, thr = self.second
            ok = _OPS[cmp](value, thr)
        return ok

    def __str__(self) -> str:
        if self.comparator == UNPREDICTABLE:
            return f"{self.feature} unpredictable"
        text = f"{self.feature} {self.comparator} {self.threshold:g}"
        if self.second:
            text += f" and {self.second[0]} {self.second[1]:g}"
        return text


@dataclass(frozen=True)
class LabelRule:
    tag: int
    conditions: tuple[Condition, ...] = ()
    residual: bool = False

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"tag must be one of {TAGS}, got {self.tag}")

    @property
    def features(self) -> list[str]:
        return [c.feature for c in self.conditions]


def parse_condition(text: str, lineno: int | None = None) -> Condition:
    m = _PREDICATE.match(text.strip())
    if m is None:
        raise ConfigError(f"cannot parse predicate {text!r}", lineno)
    feature, cmp, thr, cmp2, thr2 = m.groups()
    cmp = _ALIASES.get(cmp, cmp)
    if cmp == UNPREDICTABLE:
        if thr is not None or cmp2 is not None:
            raise ConfigError(f"'unpredictable' takes no threshold: {text!r}", lineno)
        return Condition(feature, UNPREDICTABLE)
    if thr is None:
        raise ConfigError(f"predicate {text!r} needs a threshold", lineno)
    second = None
    if cmp2 is not None:
        second = (_ALIASES.get(cmp2, cmp2), parse_float(thr2, "second bound", lineno))
    return Condition(feature, cmp, parse_float(thr, "threshold", lineno), second)


def parse_rules(text: str) -> list[LabelRule]:
    """Parse a label-rule document: one ``[tag N]`` block per tag."""
    rules: dict[int, LabelRule] = {}
    for block in parse_blocks(text):
        if block.kind != "tag":
            continue
        try:
            tag = int(block.label or "")
        except ValueError:
            raise ConfigError(f"[tag] header needs an integer tag, got {block.label!r}", block.lineno) from None
        if tag in rules:
            raise ConfigError(f"tag {tag} defined twice", block.lineno)
        residual = False
        conds = []
        for lineno, line in block.lines:
            if line.strip() == "residual":
                residual = True
            else:
                conds.append(parse_condition(line, lineno))
        rules[tag] = LabelRule(tag, tuple(conds), residual)
    missing = [t for t in TAGS if t not in rules]
    if missing:
        raise ConfigError(f"rule set must define tags 0-3; missing {missing}")
    return [rules[t] for t in TAGS]


def network_quality_rules() -> list[LabelRule]:
    from importlib.resources import files

    return parse_rules(files("perfsense.data").joinpath("network_quality_rules.cfg").read_text("utf-8"))


def daily_label(rules: Sequence[LabelRule], day_features: Mapping[str, float | None]) -> int:
    """Tag one device-day.

    Tag 0 when none of the features named by the tag-0 rule were observed.
    Tags 1 and 3 need every condition on an observed feature to hold (at
    least one observed). Anything else is tag 2.
    """
    by_tag = {r.tag: r for r in rules}

    def observed(name):
        v = day_features.get(name)
        return v is not None and v == v

    watched = by_tag[0].features if 0 in by_tag and by_tag[0].features else sorted(
        {f for r in rules for f in r.features}
    )
    if not any(observed(f) for f in watched):
        return 0
    for tag in (1, 3):
        rule = by_tag.get(tag)
        if rule is None or rule.residual:
            continue
        usable = [c for c in rule.conditions if observed(c.feature)]
        if usable and all(c.holds(float(day_features[c.feature])) for c in usable):
            return tag
    return 2


@dataclass(frozen=True)
class DailyLabelHistory:
    device_id: str
    days: tuple[tuple[dt.date, int], ...] = ()

    def __post_init__(self):
        dates = [d for d, _ in self.days]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError(f"history for {self.device_id!r}: days must be ascending with one tag per day")
        bad = [t for _, t in self.days if t not in TAGS]
        if bad:
            raise ValueError(f"history for {self.device_id!r}: invalid tags {bad}")

    @classmethod
    def of(cls, device_id: str, days: Iterable[tuple[dt.date, int]]) -> DailyLabelHistory:
        return cls(device_id, tuple(sorted(days)))

    def until(self, date: dt.date) -> DailyLabelHistory:
        return DailyLabelHistory(self.device_id, tuple(p for p in self.days if p[0] <= date))

    def after(self, date: dt.date) -> DailyLabelHistory:
        return DailyLabelHistory(self.device_id, tuple(p for p in self.days if p[0] > date))


@dataclass(frozen=True)
class PortraitLabel:
    device_id: str
    tag: int
    as_of: dt.date | None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"portrait tag must be in {TAGS}, got {self.tag}")

    def to_json(self) -> str:
        return json.dumps({"device_id": self.device_id, "tag": self.tag,
                           "as_of": self.as_of.isoformat() if self.as_of else None})


def fit_portrait(history: DailyLabelHistory, window_days: int = 15, threshold: float = 0.70,
                 as_of: dt.date | None = None) -> PortraitLabel:
    """Fit a portrait tag from the trailing *window_days* of daily tags.

    Tag c in {1, 3} requires the most recent day to be c and c to make up
    at least *threshold* of the recorded days in the window (tag-0 days
    included in the count). No informative day in the window gives 0.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    if as_of is None:
        as_of = history.days[-1][0] if history.days else None
    if as_of is None:
        return PortraitLabel(history.device_id, 0, None)
    start = as_of - dt.timedelta(days=window_days)
    window = [tag for date, tag in history.days if start < date <= as_of]
    if not window or all(t == 0 for t in window):
        return PortraitLabel(history.device_id, 0, as_of)
    last = window[-1]
    for c in (1, 3):
        if last == c and window.count(c) >= threshold * len(window) - 1e-9:
            return PortraitLabel(history.device_id, c, as_of)
    return PortraitLabel(history.device_id, 2, as_of)


def split_time_domain(history: DailyLabelHistory, ratio: float = 0.8) -> tuple[DailyLabelHistory, DailyLabelHistory]:
    """Split a history by date into train and test spans (4:1 by default)."""
    if not history.days:
        return history, history
    first, last = history.days[0][0], history.days[-1][0]
    span = (last - first).days + 1
    cut = first + dt.timedelta(days=int(round(span * ratio)) - 1)
    return history.until(cut), history.after(cut)


@dataclass(frozen=True)
class FitRow:
    target: str
    category: int
    population: int
    predicted: int
    actual: int
    hits: int
    prediction_proportion: float
    accuracy: float | None
    recall_proportion: float
    recall_rate: float | None
    stability: float | None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FitReport:
    rows: list[FitRow] = field(default_factory=list)

    def __getitem__(self, key: tuple[str, int]) -> FitRow:
        for row in self.rows:
            if (row.target, row.category) == key:
                return row
        raise KeyError(key)

    def merge(self, other: FitReport) -> FitReport:
        return FitReport(self.rows + other.rows)


def _stable(history: DailyLabelHistory, pred: PortraitLabel, window_days: int, threshold: float) -> bool | None:
    later = [d for d, _ in history.days if pred.as_of is None or d > pred.as_of]
    if not later:
        return None
    return all(fit_portrait(history.until(d), window_days, threshold).tag == pred.tag for d in later)


def evaluate_fit(predicted: Sequence[PortraitLabel], actual: Sequence[PortraitLabel], target: str = "net",
                 histories: Mapping[str, DailyLabelHistory] | None = None,
                 window_days: int = 15, threshold: float = 0.70) -> FitReport:
    """Precision/recall of fitted portraits against held-out labels.

    Per category c in {1, 3}: accuracy = hits / predicted-c, recall rate =
    hits / actual-c, prediction proportion = predicted-c / population and
    recall proportion = hits / population. Stability needs the full
    per-device *histories*: it is the share of predicted-c devices whose
    portrait, refitted on every later day, stays c. Unavailable values are
    ``None``.
    """
    pred = {p.device_id: p for p in predicted}
    act = {a.device_id: a for a in actual}
    if not pred:
        raise ValueError("empty population")
    if set(pred) != set(act):
        diff = sorted(set(pred) ^ set(act))[:5]
        raise ValueError(f"predicted and actual device sets differ (e.g. {diff})")
    n = len(pred)
    rows = []
    for c in (1, 3):
        P = {d for d, p in pred.items() if p.tag == c}
        A = {d for d, a in act.items() if a.tag == c}
        hits = len(P & A)
        stability = None
        if histories is not None and P:
            flags = [_stable(histories[d], pred[d], window_days, threshold) for d in sorted(P) if d in histories]
            flags = [f for f in flags if f is not None]
            stability = sum(flags) / len(flags) if flags else None
        rows.append(FitRow(
            target=target, category=c, population=n, predicted=len(P), actual=len(A), hits=hits,
            prediction_proportion=len(P) / n,
            accuracy=hits / len(P) if P else None,
            recall_proportion=hits / n,
            recall_rate=hits / len(A) if A else None,
            stability=stability,
        ))
    return FitReport(rows)

"""Feature universe: indicator declarations, directions, valid ranges, telemetry records."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from perfsense.config import (
    Block,
    ConfigError,
    parse_blocks,
    parse_float,
    parse_interval,
    parse_list,
)

MAXIMAL = "maximal"
MINIMAL = "minimal"
INTERMEDIATE = "intermediate"
INTERVAL = "interval"
DIRECTIONS = (MAXIMAL, MINIMAL, INTERMEDIATE, INTERVAL)


class SchemaError(ConfigError):
    pass


class UnknownIndicatorError(KeyError):
    pass


@dataclass(frozen=True)
class Direction:
    """How an indicator maps onto 'larger is better'.

    ``best`` is only used by intermediate indicators, ``a``/``b`` only by
    interval indicators.
    """

    kind: str
    best: float | None = None
    a: float | None = None
    b: float | None = None

    @classmethod
    def parse(cls, text: str, lineno: int | None = None) -> Direction:
        tokens = text.split()
        if not tokens or tokens[0] not in DIRECTIONS:
            raise SchemaError(f"direction must be one of {', '.join(DIRECTIONS)}; got {text!r}", lineno)
        kind, params = tokens[0], {}
        for tok in tokens[1:]:
            key, sep, value = tok.partition("=")
            if not sep:
                raise SchemaError(f"direction parameter {tok!r} is not key=value", lineno)
            params[key] = parse_float(value, f"direction parameter {key}", lineno)
        expected = {MAXIMAL: set(), MINIMAL: set(), INTERMEDIATE: {"best"}, INTERVAL: {"a", "b"}}[kind]
        if set(params) != expected:
            want = " ".join(f"{k}=<real>" for k in sorted(expected)) or "no parameters"
            raise SchemaError(f"direction {kind!r} takes {want}; got {text!r}", lineno)
        return cls(kind, best=params.get("best"), a=params.get("a"), b=params.get("b"))

    def __str__(self) -> str:
        if self.kind == INTERMEDIATE:
            return f"intermediate best={self.best:g}"
        if self.kind == INTERVAL:
            return f"interval a={self.a:g} b={self.b:g}"
        return self.kind


@dataclass(frozen=True)
class IndicatorSpec:
    name: str
    category: str
    unit: str
    direction: Direction
    valid_range: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.valid_range
        if not lo < hi:
            raise SchemaError(f"indicator {self.name!r}: range requires lo < hi, got [{lo:g}, {hi:g}]")
        d = self.direction
        if d.kind == INTERVAL:
            if d.a > d.b:
                raise SchemaError(f"indicator {self.name!r}: interval with a > b ({d.a:g} > {d.b:g})")
            if not (lo <= d.a and d.b <= hi):
                raise SchemaError(f"indicator {self.name!r}: interval [{d.a:g}, {d.b:g}] outside range [{lo:g}, {hi:g}]")

    def in_range(self, value: float) -> bool:
        lo, hi = self.valid_range
        return lo <= value <= hi


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered indicator declarations.

    Indicator order is the canonical column order of every matrix built
    from this schema.
    """

    indicators: tuple[IndicatorSpec, ...]
    categories: tuple[str, ...]

    def __post_init__(self):
        if not self.indicators:
            raise SchemaError("empty schema")
        names = [ind.name for ind in self.indicators]
        seen = set()
        for name in names:
            if name in seen:
                raise SchemaError(f"duplicate indicator name {name!r}")
            seen.add(name)
        for ind in self.indicators:
            if ind.category not in self.categories:
                raise SchemaError(f"indicator {ind.name!r} uses undeclared category {ind.category!r}")
        for cat in self.categories:
            if not any(ind.category == cat for ind in self.indicators):
                raise SchemaError(f"empty category {cat!r}")

    @property
    def names(self) -> list[str]:
        return [ind.name for ind in self.indicators]

    def __len__(self) -> int:
        return len(self.indicators)

    def __getitem__(self, name: str) -> IndicatorSpec:
        for ind in self.indicators:
            if ind.name == name:
                return ind
        raise UnknownIndicatorError(name)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def columns_of(self, category: str) -> list[int]:
        return [i for i, ind in enumerate(self.indicators) if ind.category == category]

    def subset(self, names: Iterable[str]) -> FeatureSchema:
        """Schema restricted to *names*, keeping declaration order."""
        wanted = set(names)
        inds = tuple(ind for ind in self.indicators if ind.name in wanted)
        cats = tuple(c for c in self.categories if any(i.category == c for i in inds))
        return FeatureSchema(inds, cats)

    def to_text(self) -> str:
        """Serialize back into the config grammar."""
        out = ["[schema]", f"categories = {', '.join(self.categories)}", ""]
        for ind in self.indicators:
            lo, hi = ind.valid_range
            out += [
                "[indicator]",
                f"name = {ind.name}",
                f"category = {ind.category}",
                f"unit = {ind.unit}",
                f"direction = {ind.direction}",
                f"range = [{lo!r}, {hi!r}]",
                "",
            ]
        return "\n".join(out)


def maximal_schema(names: Iterable[str], category: str = "all", valid_range=(-math.inf, math.inf)) -> FeatureSchema:
    """All-maximal schema, e.g. for category scores fed into a second stage."""
    inds = tuple(
        IndicatorSpec(n, category, "", Direction(MAXIMAL), tuple(valid_range)) for n in names
    )
    return FeatureSchema(inds, (category,))


def _indicator_from_block(block: Block) -> IndicatorSpec:
    pairs = block.pairs()
    for key in ("name", "category", "direction", "range"):
        if not pairs.get(key):
            raise SchemaError(f"[indicator] block is missing {key!r}", block.lineno)
    unknown = set(pairs) - {"name", "category", "unit", "direction", "range"}
    if unknown:
        raise SchemaError(f"[indicator] block has unknown keys {sorted(unknown)}", block.lineno)
    try:
        return IndicatorSpec(
            name=pairs["name"],
            category=pairs["category"],
            unit=pairs.get("unit", ""),
            direction=Direction.parse(pairs["direction"], block.lineno),
            valid_range=parse_interval(pairs["range"], f"indicator {pairs['name']!r} range", block.lineno),
        )
    except SchemaError as exc:
        if exc.lineno is None:
            raise SchemaError(str(exc), block.lineno) from None
        raise


def parse_schema(text: str) -> FeatureSchema:
    """Parse a schema document.

    An optional ``[schema]`` block may list ``categories``; otherwise the
    categories are taken in order of first use.
    """
    declared: list[str] | None = None
    indicators: list[IndicatorSpec] = []
    for block in parse_blocks(text):
        if block.kind == "schema":
            pairs = block.pairs()
            if "categories" in pairs:
                declared = parse_list(pairs["categories"])
        elif block.kind == "indicator":
            indicators.append(_indicator_from_block(block))
        # other block kinds (trigger, collector, ...) may share the file
    categories = declared
    if categories is None:
        categories = list(dict.fromkeys(ind.category for ind in indicators))
    return FeatureSchema(tuple(indicators), tuple(categories))


def load_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read())


def default_schema() -> FeatureSchema:
    """The shipped device-performance schema."""
    from importlib.resources import files

    return parse_schema(files("perfsense.data").joinpath("device_schema.cfg").read_text("utf-8"))


@dataclass(frozen=True)
class FeatureRecord:
    device_id: str
    model_id: str
    timestamp: int
    values: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp} for device {self.device_id!r}")

    def to_json(self) -> str:
        return json.dumps(
            {"device_id": self.device_id, "model_id": self.model_id, "ts_ms": self.timestamp, "values": dict(self.values)}
        )


def validate_record(schema: FeatureSchema, rec: FeatureRecord) -> FeatureRecord:
    """Drop values outside their indicator's closed valid range (and non-finite ones)."""
    names = set(schema.names)
    kept = {}
    for key, value in rec.values.items():
        if key not in names:
            raise UnknownIndicatorError(f"record for device {rec.device_id!r} has unknown indicator {key!r}")
        if value is None:
            continue
        value = float(value)
        if math.isfinite(value) and schema[key].in_range(value):
            kept[key] = value
    return FeatureRecord(rec.device_id, rec.model_id, rec.timestamp, kept)


def parse_record(line: str) -> FeatureRecord:
    obj = json.loads(line)
    missing = [k for k in ("device_id", "model_id", "ts_ms", "values") if k not in obj]
    if missing:
        raise ValueError(f"telemetry record missing keys {missing}")
    values = obj["values"]
    if not isinstance(values, dict):
        raise ValueError("telemetry 'values' must be a flat object")
    return FeatureRecord(str(obj["device_id"]), str(obj["model_id"]), int(obj["ts_ms"]), {
        k: float(v) for k, v in values.items() if v is not None
    })


def read_records(lines: Iterable[str]) -> Iterator[FeatureRecord]:
    """Parse newline-delimited telemetry records, skipping blank lines."""
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield parse_record(line)
        except (ValueError, TypeError) as exc:
            raise ValueError(f"telemetry line {lineno}: {exc}") from None

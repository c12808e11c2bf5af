"""Line-oriented configuration grammar shared by schemas, label rules and triggers.

A document is a sequence of blocks. A block opens with a header line
``[kind]`` or ``[kind label]`` and holds either ``key = value`` lines or free
predicate lines (label-rule files). ``#`` starts a comment; blank lines are
ignored. Kinds may repeat, so several ``[indicator]`` blocks are allowed::

    [indicator]
    name = cpu_usage_ratio
    category = CPU
    unit = %
    direction = minimal
    range = [0, 100]
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_HEADER = re.compile(r"^\[\s*([A-Za-z_][\w-]*)(?:\s+([^\]]*?))?\s*\]$")
_PAIR = re.compile(r"^([A-Za-z_][\w.-]*)\s*=\s*(.*)$")


class ConfigError(ValueError):
    """Raised for malformed configuration documents."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass
class Block:
    kind: str
    label: str | None
    lineno: int
    lines: list[tuple[int, str]] = field(default_factory=list)

    def pairs(self) -> dict[str, str]:
        """Return the block's ``key = value`` lines as a dict.

        Duplicate keys and non key-value lines are rejected.
        """
        out: dict[str, str] = {}
        for lineno, text in self.lines:
            m = _PAIR.match(text)
            if m is None:
                raise ConfigError(f"expected 'key = value' in [{self.kind}] block, got {text!r}", lineno)
            key, value = m.group(1), m.group(2).strip()
            if key in out:
                raise ConfigError(f"duplicate key {key!r} in [{self.kind}] block", lineno)
            out[key] = value
        return out

    def require(self, key: str) -> str:
        pairs = self.pairs()
        if key not in pairs or pairs[key] == "":
            raise ConfigError(f"[{self.kind}] block is missing {key!r}", self.lineno)
        return pairs[key]


def parse_blocks(text: str) -> list[Block]:
    blocks: list[Block] = []
    current: Block | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            m = _HEADER.match(line)
            if m is None:
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            label = m.group(2) or None
            current = Block(kind=m.group(1).lower(), label=label, lineno=lineno)
            blocks.append(current)
            continue
        if current is None:
            raise ConfigError("content before the first section header", lineno)
        current.lines.append((lineno, line))
    return blocks


def parse_list(value: str) -> list[str]:
    """Split a comma-separated value; surrounding brackets are optional."""
    value = value.strip()
    if value.startswith("[") and value.endswith("]"):
        value = value[1:-1]
    return [item.strip() for item in value.split(",") if item.strip()]


def parse_float(value: str, what: str, lineno: int | None = None) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{what}: not a number: {value!r}", lineno) from None


def parse_interval(value: str, what: str, lineno: int | None = None) -> tuple[float, float]:
    """Parse ``[lo, hi]`` into a float pair."""
    value = value.strip()
    if not (value.startswith("[") and value.endswith("]")):
        raise ConfigError(f"{what}: expected '[lo, hi]', got {value!r}", lineno)
    parts = parse_list(value)
    if len(parts) != 2:
        raise ConfigError(f"{what}: expected two bounds, got {value!r}", lineno)
    return parse_float(parts[0], what, lineno), parse_float(parts[1], what, lineno)

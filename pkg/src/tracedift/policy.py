"""Multi-bit security policy and its line-oriented file format.

Each tag bit is an independent policy. A policy file has one line per bit::

    # comment
    bit 0: source svc0 ; sinks data-sink
    bit 1: source svc0 mask 0x2 ; sinks jump-target,branch-cond
    bit 2: source none ; sinks none
    stop-on-first

``mask`` is the tag vector the SVC 0 source applies on behalf of that line
(default ``1 << bit``); the overall source mask is the OR over all lines.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, Mapping

from .errors import PolicyError

SINK_KINDS = ("data-sink", "jump-target", "store-addr", "load-addr", "branch-cond")
MAX_WIDTH = 32


@dataclass(frozen=True)
class Policy:
    source_mask: int = 1
    sinks: Mapping[int, FrozenSet[str]] = field(default_factory=lambda: {0: frozenset({"data-sink"})})
    stop_on_first: bool = False

    def __post_init__(self):
        for bit, kinds in self.sinks.items():
            if not 0 <= bit < MAX_WIDTH:
                raise PolicyError(f"policy bit {bit} out of range")
            unknown = set(kinds) - set(SINK_KINDS)
            if unknown:
                raise PolicyError(f"unknown sink kind(s) {sorted(unknown)}")
        if self.source_mask < 0 or self.source_mask >> MAX_WIDTH:
            raise PolicyError(f"source mask 0x{self.source_mask:x} out of range")

    def sink_mask(self, kind: str) -> int:
        mask = 0
        for bit, kinds in self.sinks.items():
            if kind in kinds:
                mask |= 1 << bit
        return mask

    def sink_masks(self) -> Dict[str, int]:
        return {kind: self.sink_mask(kind) for kind in SINK_KINDS}

    def highest_bit(self) -> int:
        bits = [b for b, k in self.sinks.items() if k]
        top = max(bits, default=-1)
        return max(top, self.source_mask.bit_length() - 1)

    def validate_width(self, width: int) -> None:
        if self.highest_bit() >= width:
            raise PolicyError(f"policy uses bit {self.highest_bit()} but tag width is {width}")

    def plane(self, bit: int) -> "Policy":
        """Single-bit policy that behaves like bit ``bit`` of this one."""
        return Policy(
            source_mask=(self.source_mask >> bit) & 1,
            sinks={0: frozenset(self.sinks.get(bit, ()))},
            stop_on_first=self.stop_on_first,
        )

    def with_stop_on_first(self, flag: bool) -> "Policy":
        return replace(self, stop_on_first=flag)

    def to_text(self) -> str:
        lines = []
        bits = sorted(set(self.sinks) | {b for b in range(MAX_WIDTH) if self.source_mask >> b & 1})
        for bit in bits:
            own = self.source_mask & (1 << bit)
            src = f"svc0 mask 0x{own:x}" if own else "none"
            kinds = ",".join(k for k in SINK_KINDS if k in self.sinks.get(bit, ())) or "none"
            lines.append(f"bit {bit}: source {src} ; sinks {kinds}")
        if self.stop_on_first:
            lines.append("stop-on-first")
        return "\n".join(lines) + "\n"


DEFAULT_POLICY = Policy()

_LINE_RE = re.compile(
    r"^bit\s+(\d+)\s*:\s*source\s+(svc0(?:\s+mask\s+(\S+))?|none)\s*;\s*sinks\s*(.*)$", re.I
)


def parse_policy(text: str) -> Policy:
    source_mask = 0
    sinks: Dict[int, FrozenSet[str]] = {}
    stop = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() in ("stop-on-first", "stop_on_first"):
            stop = True
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise PolicyError(f"policy line {lineno}: cannot parse {raw.strip()!r}")
        bit = int(m.group(1))
        if bit >= MAX_WIDTH:
            raise PolicyError(f"policy line {lineno}: bit {bit} out of range")
        if bit in sinks:
            raise PolicyError(f"policy line {lineno}: bit {bit} defined twice")
        if m.group(2).lower() != "none":
            if m.group(3):
                try:
                    mask = int(m.group(3), 0)
                except ValueError:
                    raise PolicyError(f"policy line {lineno}: bad mask {m.group(3)!r}") from None
                if mask <= 0 or mask >> MAX_WIDTH:
                    raise PolicyError(f"policy line {lineno}: mask out of range")
            else:
                mask = 1 << bit
            source_mask |= mask
        kinds = _parse_sinks(m.group(4), lineno)
        sinks[bit] = kinds
    return Policy(source_mask=source_mask, sinks=sinks, stop_on_first=stop)


def _parse_sinks(text: str, lineno: int) -> FrozenSet[str]:
    items = [t.strip().lower() for t in text.split(",") if t.strip()]
    if items == ["none"]:
        return frozenset()
    bad = [t for t in items if t not in SINK_KINDS]
    if bad:
        raise PolicyError(f"policy line {lineno}: unknown sink kind(s) {bad}")
    return frozenset(items)


def load_policy(path) -> Policy:
    with open(path) as fh:
        return parse_policy(fh.read())


def make_policy(source_bits: Iterable[int], sinks: Mapping[int, Iterable[str]], stop_on_first=False) -> Policy:
    mask = 0
    for b in source_bits:
        mask |= 1 << b
    return Policy(mask, {b: frozenset(k) for b, k in sinks.items()}, stop_on_first)

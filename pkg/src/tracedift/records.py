"""Value types exchanged between the simulator, reconstructor and engine."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

LOAD = 0
STORE = 1
_MEMREC = struct.Struct("<IBIB")

TAKEN = "taken"
FALL = "fall"
HALT = "halt"


@dataclass(frozen=True)
class FlowEvent:
    block_start: int
    block_end: int        # address of the terminating branch or HALT, inclusive
    outcome: str          # TAKEN | FALL | HALT
    target: Optional[int] = None

    def text(self) -> str:
        head = f"block 0x{self.block_start:08x}..0x{self.block_end:08x}"
        if self.outcome == TAKEN:
            return f"{head} taken->0x{self.target:08x}"
        return f"{head} {self.outcome}"


@dataclass(frozen=True)
class MemAccessRecord:
    seq: int
    kind: int             # LOAD | STORE
    addr: int
    size: int = 4

    @property
    def kind_name(self) -> str:
        return "store" if self.kind == STORE else "load"


def encode_memlog(records: Iterable[MemAccessRecord]) -> bytes:
    return b"".join(_MEMREC.pack(r.seq, r.kind, r.addr, r.size) for r in records)


def decode_memlog(data) -> List[MemAccessRecord]:
    data = bytes(data)
    if len(data) % _MEMREC.size:
        raise ValueError(f"memlog length {len(data)} is not a multiple of {_MEMREC.size}")
    out = []
    for seq, kind, addr, size in _MEMREC.iter_unpack(data):
        if kind not in (LOAD, STORE):
            raise ValueError(f"memlog record {seq}: bad kind {kind}")
        out.append(MemAccessRecord(seq, kind, addr, size))
    return out


@dataclass(frozen=True)
class Violation:
    event_index: int      # dynamic instruction index within the replayed flow
    pc: int
    sink: str
    bits: int
    reg: int

    def text(self) -> str:
        return (f"VIOLATION event={self.event_index} pc=0x{self.pc:08x} "
                f"sink={self.sink} bits=0x{self.bits:x} reg=r{self.reg}")


@dataclass(frozen=True)
class TagReport:
    """Final tag state plus violations; what the oracle and the engine both produce.

    ``mem`` maps block index (address // granularity) to its nonzero tag.
    """

    trf: Tuple[int, ...]
    mem: Dict[int, int]
    violations: Tuple[Violation, ...]
    width: int
    granularity: int
    halted_early: bool = False

    def byte_tags(self) -> Dict[int, int]:
        """Expand block tags to per-byte tags (only meaningful to compare at G=1)."""
        out = {}
        g = self.granularity
        for block, tag in self.mem.items():
            if tag:
                for a in range(block * g, block * g + g):
                    out[a] = tag
        return out

    def lines(self) -> List[str]:
        out = [v.text() for v in self.violations]
        out.append("trf " + " ".join(f"0x{t:x}" for t in self.trf))
        g = self.granularity
        for block in sorted(self.mem):
            if self.mem[block]:
                out.append(f"mem 0x{block * g:08x} g={g} tag=0x{self.mem[block]:x}")
        if self.halted_early:
            out.append("stopped at first violation")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def violation_keys(violations: Iterable[Violation]) -> set:
    return {(v.event_index, v.sink) for v in violations}

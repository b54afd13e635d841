"""DIFT coprocessor core: tag register file, memory tag store, op interpreter.

Tags are W-bit integers, one bit per concurrently enforced policy. Memory
tags live in a sparse map keyed by ``address // granularity``; absent keys
read as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

from .errors import ConfigError, CoverageError, MemFault, MemlogDesyncError, PolicyError
from .isa import DATA_BASE, DATA_SIZE, NUM_REGS
from .policy import Policy
from .records import LOAD, STORE, FlowEvent, MemAccessRecord, TagReport, Violation
from .taggrid import (CopyReg, LoadTag, MergeRegs, SetZero, SinkCheck, SourceApply,
                      StoreTag, TagOp, TagOpProgram)

MAX_WIDTH = 32
MAX_GRANULARITY = 4096


class DiftState:
    def __init__(self, width: int, granularity: int, strong_update: bool = True):
        self.width = width
        self.granularity = granularity
        self.wmask = (1 << width) - 1
        self.shift = granularity.bit_length() - 1
        self.strong_update = strong_update
        self.trf: List[int] = [0] * NUM_REGS
        self.mem: Dict[int, int] = {}

    def set_reg(self, r: int, tag: int) -> None:
        if self.strong_update:
            self.trf[r] = tag & self.wmask
        else:
            self.trf[r] |= tag & self.wmask

    def snapshot(self, violations=(), halted_early=False) -> TagReport:
        return TagReport(
            trf=tuple(self.trf),
            mem={b: t for b, t in self.mem.items() if t},
            violations=tuple(violations),
            width=self.width,
            granularity=self.granularity,
            halted_early=halted_early,
        )


def init(width: int, granularity: int, policy: Optional[Policy] = None,
         strong_update: bool = True) -> DiftState:
    if not isinstance(width, int) or not 1 <= width <= MAX_WIDTH:
        raise ConfigError(f"tag width must be in [1, {MAX_WIDTH}], got {width}")
    if (not isinstance(granularity, int) or not 1 <= granularity <= MAX_GRANULARITY
            or granularity & (granularity - 1)):
        raise ConfigError(f"granularity must be a power of two in [1, {MAX_GRANULARITY}], got {granularity}")
    if policy is not None:
        try:
            policy.validate_width(width)
        except PolicyError as exc:
            raise ConfigError(str(exc)) from None
    return DiftState(width, granularity, strong_update)


def _check_segment(addr: int, size: int) -> None:
    if addr < DATA_BASE or addr + size > DATA_BASE + DATA_SIZE:
        raise MemFault(f"memory tag access at 0x{addr:08x} outside the data segment")


def mem_tag_read(state: DiftState, addr: int, size: int = 4) -> int:
    _check_segment(addr, size)
    mem = state.mem
    tag = 0
    for block in range(addr >> state.shift, ((addr + size - 1) >> state.shift) + 1):
        tag |= mem.get(block, 0)
    return tag


def mem_tag_write(state: DiftState, addr: int, tag: int, size: int = 4) -> DiftState:
    """Strong update for blocks the write covers entirely, merge for partial overlap."""
    _check_segment(addr, size)
    tag &= state.wmask
    g = state.granularity
    mem = state.mem
    end = addr + size
    for block in range(addr >> state.shift, ((end - 1) >> state.shift) + 1):
        lo = block * g
        if state.strong_update and addr <= lo and lo + g <= end:
            if tag:
                mem[block] = tag
            else:
                mem.pop(block, None)
        elif tag:
            mem[block] = mem.get(block, 0) | tag
    return state


class MemlogCursor:
    """Sequential reader over the memory-access side log."""

    def __init__(self, records: Sequence[MemAccessRecord], start: int = 0):
        self.records = records
        self.pos = start
        self.expected_seq = start

    def take(self, kind: int) -> MemAccessRecord:
        want = "store" if kind == STORE else "load"
        if self.pos >= len(self.records):
            raise MemlogDesyncError(f"{want} record #{self.expected_seq}", "end of memlog")
        rec = self.records[self.pos]
        if rec.seq != self.expected_seq:
            raise MemlogDesyncError(f"seq {self.expected_seq}", f"seq {rec.seq}")
        if rec.kind != kind:
            raise MemlogDesyncError(f"{want} record #{rec.seq}", f"{rec.kind_name} record")
        self.pos += 1
        self.expected_seq += 1
        return rec

    @property
    def remaining(self) -> int:
        return len(self.records) - self.pos


@dataclass
class StepContext:
    pc: int
    event_index: int
    memlog: MemlogCursor
    sink_masks: Dict[str, int]


def step(state: DiftState, op: TagOp, ctx: StepContext) -> Optional[Violation]:
    """Apply one tag op in place. Returns a violation for a tripped sink check."""
    trf = state.trf
    if isinstance(op, CopyReg):
        state.set_reg(op.rd, trf[op.rs])
    elif isinstance(op, MergeRegs):
        state.set_reg(op.rd, trf[op.ra] | trf[op.rb])
    elif isinstance(op, SinkCheck):
        bits = trf[op.reg] & ctx.sink_masks.get(op.kind, 0)
        if bits:
            return Violation(ctx.event_index, ctx.pc, op.kind, bits, op.reg)
    elif isinstance(op, SetZero):
        state.set_reg(op.rd, 0)
    elif isinstance(op, LoadTag):
        rec = ctx.memlog.take(LOAD)
        state.set_reg(op.rd, mem_tag_read(state, rec.addr, rec.size))
    elif isinstance(op, StoreTag):
        rec = ctx.memlog.take(STORE)
        mem_tag_write(state, rec.addr, trf[op.rs], rec.size)
    elif isinstance(op, SourceApply):
        state.set_reg(op.rd, op.mask)
    else:
        raise TypeError(f"not a tag op: {op!r}")
    return None


class DiftEngine:
    """Single-consumer replay of flow events against compiled tag microcode."""

    def __init__(self, prog: TagOpProgram, memlog: Sequence[MemAccessRecord], policy: Policy,
                 width: int, granularity: int, strong_update: bool = True, memlog_start: int = 0):
        self.state = init(width, granularity, policy, strong_update)
        self.prog = prog
        self.policy = policy
        self.ctx = StepContext(0, 0, MemlogCursor(memlog, memlog_start), policy.sink_masks())
        self.violations: List[Violation] = []
        self.stopped = False
        self.events = 0

    def consume(self, event: FlowEvent) -> None:
        if self.stopped:
            return
        if event.block_start not in self.prog:
            raise CoverageError(f"no tag microcode for block 0x{event.block_start:08x}")
        by_pc = self.prog.by_pc
        ctx = self.ctx
        state = self.state
        self.events += 1
        for pc in range(event.block_start, event.block_end + 4, 4):
            ops = by_pc.get(pc)
            if ops is None:
                raise CoverageError(f"no tag microcode for instruction 0x{pc:08x}")
            ctx.pc = pc
            for op in ops:
                v = step(state, op, ctx)
                if v is not None:
                    self.violations.append(v)
                    if self.policy.stop_on_first:
                        self.stopped = True
                        return
            ctx.event_index += 1

    def report(self) -> TagReport:
        return self.state.snapshot(self.violations, self.stopped)


def run(flow: Iterable[FlowEvent], prog: TagOpProgram, memlog: Sequence[MemAccessRecord],
        policy: Policy, width: int, granularity: int, strong_update: bool = True,
        memlog_start: int = 0) -> TagReport:
    engine = DiftEngine(prog, memlog, policy, width, granularity, strong_update, memlog_start)
    for event in flow:
        engine.consume(event)
        if engine.stopped:
            break
    return engine.report()

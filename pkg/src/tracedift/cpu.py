"""Deterministic toy CPU standing in for the traced core.

Besides architectural execution, :func:`run` produces everything the
decoupled monitor consumes: the PFT-subset waypoint trace, the memory-access
side log, and a golden-reference taint report computed inline at byte
granularity. The inline oracle applies the propagation rules directly to
the instruction being executed and shares no code with the tag microcode
compiler or the engine.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from . import codec
from .codec import ASync, Atom, BranchAddr, ContextId, ISync, TracePacket
from .errors import CpuFault, NoiseInsertionError, NonTerminationError
from .isa import DATA_BASE, DATA_SIZE, LINK_REG, NUM_REGS, ProgramImage
from .policy import DEFAULT_POLICY, Policy
from .records import (FALL, HALT, LOAD, STORE, TAKEN, FlowEvent, MemAccessRecord,
                      TagReport, Violation)

DEFAULT_SYNC_PERIOD = 64
DEFAULT_STEP_BUDGET = 1_000_000
MASK32 = 0xFFFFFFFF


@dataclass(frozen=True)
class TraceConfig:
    sync_period: int = DEFAULT_SYNC_PERIOD
    context: int = 1

    def __post_init__(self):
        if self.sync_period < 1:
            raise ValueError("sync_period must be >= 1")
        if not 0 <= self.context <= MASK32:
            raise ValueError("context must be a u32")


@dataclass(frozen=True)
class RunArtifacts:
    trace: bytes
    memlog: Tuple[MemAccessRecord, ...]
    oracle_report: TagReport
    block_sequence: Tuple[FlowEvent, ...]
    steps: int
    registers: Tuple[int, ...]

    @property
    def block_starts(self) -> List[int]:
        return [e.block_start for e in self.block_sequence]


def in_data_segment(addr: int, size: int = 4) -> bool:
    return DATA_BASE <= addr and addr + size <= DATA_BASE + DATA_SIZE


def run(program: ProgramImage, input_words: Sequence[int] = (),
        trace_cfg: TraceConfig = TraceConfig(), policy: Policy = DEFAULT_POLICY,
        width: int = 8, step_budget: int = DEFAULT_STEP_BUDGET, on_step=None) -> RunArtifacts:
    """Execute ``program`` to HALT.

    ``on_step(index, pc, register_tags)`` is called after every retired
    instruction with a snapshot of the oracle's register tags.
    """
    policy.validate_width(width)
    regs = [0] * NUM_REGS
    mem: Dict[int, int] = {}
    # oracle state: register tags and per-byte memory tags
    rtag = [0] * NUM_REGS
    btag: Dict[int, int] = {}
    violations: List[Violation] = []
    source_mask = policy.source_mask
    sink = policy.sink_masks()

    trace = bytearray(codec.encode_packet(ASync()))
    trace += codec.encode_packet(ISync(program.entry, trace_cfg.context))
    memlog: List[MemAccessRecord] = []
    events: List[FlowEvent] = []
    inputs = iter(input_words)
    atoms = 0

    def check(kind, reg, pc, idx):
        bits = rtag[reg] & sink[kind]
        if bits:
            violations.append(Violation(idx, pc, kind, bits, reg))

    def data_addr(base_reg, off, pc):
        addr = (regs[base_reg] + off) & MASK32
        if addr % 4 or not in_data_segment(addr):
            raise CpuFault(f"memory access at 0x{addr:08x} outside data segment (pc=0x{pc:08x})")
        return addr

    pc = program.entry
    block_start = pc
    steps = 0
    while True:
        if not program.contains(pc):
            raise CpuFault(f"pc 0x{pc:08x} outside program image")
        if steps >= step_budget:
            raise NonTerminationError(f"step budget {step_budget} exhausted at pc 0x{pc:08x}")
        ins = program.at(pc)
        idx = steps
        steps += 1
        op = ins.op
        next_pc = pc + 4
        taken = None

        if op == "MOVI":
            regs[ins.rd] = ins.imm
            rtag[ins.rd] = 0
        elif op == "MOV":
            regs[ins.rd] = regs[ins.ra]
            rtag[ins.rd] = rtag[ins.ra]
        elif op == "ADD":
            regs[ins.rd] = (regs[ins.ra] + regs[ins.rb]) & MASK32
            rtag[ins.rd] = rtag[ins.ra] | rtag[ins.rb]
        elif op == "SUB":
            regs[ins.rd] = (regs[ins.ra] - regs[ins.rb]) & MASK32
            rtag[ins.rd] = rtag[ins.ra] | rtag[ins.rb]
        elif op == "LDR":
            check("load-addr", ins.ra, pc, idx)
            addr = data_addr(ins.ra, ins.imm, pc)
            memlog.append(MemAccessRecord(len(memlog), LOAD, addr))
            regs[ins.rd] = mem.get(addr, 0)
            t = 0
            for a in range(addr, addr + 4):
                t |= btag.get(a, 0)
            rtag[ins.rd] = t
        elif op == "STR":
            check("store-addr", ins.ra, pc, idx)
            addr = data_addr(ins.ra, ins.imm, pc)
            memlog.append(MemAccessRecord(len(memlog), STORE, addr))
            mem[addr] = regs[ins.rd]
            t = rtag[ins.rd]
            for a in range(addr, addr + 4):
                if t:
                    btag[a] = t
                else:
                    btag.pop(a, None)
        elif op == "B":
            taken = True
            next_pc = ins.imm
        elif op == "BNZ":
            check("branch-cond", ins.rd, pc, idx)
            taken = regs[ins.rd] != 0
            if taken:
                next_pc = ins.imm
        elif op == "BL":
            regs[LINK_REG] = pc + 4
            rtag[LINK_REG] = 0
            taken = True
            next_pc = ins.imm
        elif op == "BX":
            check("jump-target", ins.rd, pc, idx)
            taken = True
            next_pc = regs[ins.rd]
            if next_pc % 4 or not program.contains(next_pc):
                raise CpuFault(f"BX to 0x{next_pc:08x} outside program image (pc=0x{pc:08x})")
        elif op == "SVC":
            if ins.imm == 0:
                regs[0] = next(inputs, 0) & MASK32
                rtag[0] = source_mask
            elif ins.imm == 1:
                check("data-sink", 0, pc, idx)
        elif op == "HALT":
            events.append(FlowEvent(block_start, pc, HALT))
            if on_step is not None:
                on_step(idx, pc, tuple(rtag))
            break

        if on_step is not None:
            on_step(idx, pc, tuple(rtag))

        if taken is not None:
            if taken:
                events.append(FlowEvent(block_start, pc, TAKEN, next_pc))
                trace += codec.encode_packet(Atom(True))
                if op == "BX":
                    trace += codec.encode_packet(BranchAddr(next_pc))
            else:
                events.append(FlowEvent(block_start, pc, FALL))
                trace += codec.encode_packet(Atom(False))
            atoms += 1
            if atoms % trace_cfg.sync_period == 0:
                trace += codec.ASYNC_BYTES
                trace += codec.encode_packet(ISync(next_pc, trace_cfg.context))
            block_start = next_pc
        pc = next_pc

    report = TagReport(
        trf=tuple(rtag), mem={a: t for a, t in btag.items() if t},
        violations=tuple(violations), width=width, granularity=1,
    )
    return RunArtifacts(bytes(trace), tuple(memlog), report, tuple(events), steps, tuple(regs))


# --- parasite trace injection ------------------------------------------------


def packet_boundaries(trace) -> Tuple[List[TracePacket], List[int]]:
    """Decoded packets and the byte offset at which each one starts (plus the end offset)."""
    packets, diag = codec.decode_stream(trace)
    if diag.truncated_tail:
        raise NoiseInsertionError("trace does not decode cleanly (truncated tail)")
    offsets = [0]
    for p in packets:
        offsets.append(offsets[-1] + len(codec.encode_packet(p)))
    return packets, offsets


def _traced_context(packets) -> int:
    for p in packets:
        if isinstance(p, ISync):
            return p.context
    raise NoiseInsertionError("trace has no I-sync, traced context unknown")


def inject_context_noise(trace, foreign_context: int, noise_packets: Sequence[TracePacket],
                         at: Optional[int] = None) -> bytes:
    """Splice ``ContextId{foreign} noise ContextId{original}`` into ``trace`` at byte offset ``at``.

    ``at`` defaults to the end of the trace and must fall on a packet boundary.
    """
    trace = bytes(trace)
    packets, offsets = packet_boundaries(trace)
    original = _traced_context(packets)
    if foreign_context == original:
        raise NoiseInsertionError("foreign context equals the traced context")
    if at is None:
        at = len(trace)
    if at not in offsets:
        raise NoiseInsertionError(f"offset {at} is not a packet boundary")
    for p in noise_packets:
        if not isinstance(p, (Atom, BranchAddr)):
            raise NoiseInsertionError(f"noise must be atoms or branch addresses, got {p!r}")
    splice = codec.encode_packets([ContextId(foreign_context), *noise_packets, ContextId(original)])
    return trace[:at] + splice + trace[at:]


def random_noise(rng: random.Random, count: int) -> List[TracePacket]:
    out: List[TracePacket] = []
    for _ in range(count):
        if rng.random() < 0.75:
            out.append(Atom(rng.random() < 0.5))
        else:
            out.append(BranchAddr(rng.randrange(0, 1 << 30) * 4, rng.random() < 0.1))
    return out


def scatter_context_noise(trace, foreign_context: int, rng: random.Random,
                          insertions: int = 10, max_packets: int = 50) -> bytes:
    """Insert ``insertions`` noise runs at random packet boundaries."""
    trace = bytes(trace)
    _, offsets = packet_boundaries(trace)
    spots = sorted((rng.choice(offsets) for _ in range(insertions)), reverse=True)
    for at in spots:
        # descending offsets keep the earlier boundaries valid
        noise = random_noise(rng, rng.randint(0, max_packets))
        trace = inject_context_noise(trace, foreign_context, noise, at)
    return trace

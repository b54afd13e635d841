"""Rebuild the executed block sequence from waypoint packets.

The trace only says *whether* each branch was taken (and where an indirect
branch went); everything in between is filled in from the program image via
the waypoint map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

from .codec import ASync, Atom, BranchAddr, ContextId, ISync, TracePacket
from .errors import (FlowDesyncError, NotSynchronizedError, ProtocolError,
                     UnrecoverableTraceError, WaypointMapError)
from .isa import ProgramImage
from .records import FALL, HALT, TAKEN, FlowEvent


@dataclass(frozen=True)
class Waypoint:
    address: int
    kind: str                    # direct | call | indirect | halt
    op: str
    target: Optional[int] = None

    @property
    def conditional(self) -> bool:
        return self.op == "BNZ"


class WaypointMap:
    def __init__(self, program: ProgramImage, table: Dict[int, Waypoint]):
        self.program = program
        self._table = table

    def next_branch(self, addr: int) -> Waypoint:
        try:
            return self._table[addr]
        except KeyError:
            raise ProtocolError(f"address 0x{addr:08x} is not inside the program image") from None

    def __contains__(self, addr):
        return addr in self._table

    def __len__(self):
        return len(self._table)


def build_waypoint_map(program: ProgramImage) -> WaypointMap:
    """One backwards scan: each address inherits the waypoint of its successor."""
    table: Dict[int, Waypoint] = {}
    current: Optional[Waypoint] = None
    for addr in reversed(program.addresses()):
        ins = program.at(addr)
        kind = ins.branch_kind
        if kind is not None:
            target = ins.imm if ins.op in ("B", "BNZ", "BL") else None
            current = Waypoint(addr, kind, ins.op, target)
        if current is None:
            raise WaypointMapError(
                f"code at 0x{addr:08x} runs off the end of the image with no branch or HALT ahead")
        table[addr] = current
    return WaypointMap(program, table)


class FlowRebuilder:
    """Streaming reconstructor: push packets, receive flow events.

    In ``resume`` mode everything before the first I-sync of the target
    context is dropped silently (ETB snapshots start mid-run); otherwise an
    atom arriving before synchronization is an error.
    """

    def __init__(self, wmap: WaypointMap, target_context: int, resume: bool = False):
        self.wmap = wmap
        self.target = target_context
        self.resume = resume
        self.synced = False
        self.cursor = None
        self.foreign = False
        self.pending: Optional[Waypoint] = None
        self.atoms = 0
        self.discarded = 0

    def push(self, p: TracePacket) -> List[FlowEvent]:
        if isinstance(p, ContextId):
            self.foreign = p.context != self.target
            return []
        if isinstance(p, ISync):
            if p.context != self.target:
                self.foreign = True
                return []
            self.foreign = False
            if self.pending is not None:
                raise ProtocolError(
                    f"I-sync while waiting for the branch address of BX at 0x{self.pending.address:08x}")
            if self.synced and p.address != self.cursor:
                raise FlowDesyncError(self.cursor, p.address)
            if p.address not in self.wmap:
                raise ProtocolError(f"I-sync address 0x{p.address:08x} outside the program image")
            self.cursor = p.address
            self.synced = True
            return []
        if isinstance(p, ASync):
            return []
        if self.foreign:
            self.discarded += 1
            return []
        if not self.synced:
            if self.resume:
                self.discarded += 1
                return []
            raise NotSynchronizedError(f"{type(p).__name__} packet before any I-sync")
        if isinstance(p, Atom):
            return self._atom(p.taken)
        if isinstance(p, BranchAddr):
            wp = self.pending
            if wp is None:
                raise ProtocolError(f"unexpected branch address 0x{p.address:08x}")
            self.pending = None
            return self._take(wp, p.address)
        raise ProtocolError(f"unsupported packet {p!r}")

    def _atom(self, taken: bool) -> List[FlowEvent]:
        if self.pending is not None:
            raise ProtocolError(
                f"E-atom on BX at 0x{self.pending.address:08x} not followed by a branch address")
        wp = self.wmap.next_branch(self.cursor)
        if wp.kind == HALT:
            raise ProtocolError(f"atom for region 0x{self.cursor:08x} that ends in HALT at 0x{wp.address:08x}")
        self.atoms += 1
        if not taken:
            if not wp.conditional:
                raise ProtocolError(f"N-atom on unconditional {wp.op} at 0x{wp.address:08x}")
            event = FlowEvent(self.cursor, wp.address, FALL)
            self.cursor = wp.address + 4
            return [event]
        if wp.kind == "indirect":
            self.pending = wp
            return []
        return self._take(wp, wp.target)

    def _take(self, wp: Waypoint, target: int) -> List[FlowEvent]:
        event = FlowEvent(self.cursor, wp.address, TAKEN, target)
        self.cursor = target
        return [event]

    def finish(self) -> List[FlowEvent]:
        if self.pending is not None:
            raise ProtocolError(
                f"trace ended after E-atom on BX at 0x{self.pending.address:08x} without a branch address")
        if not self.synced:
            if self.resume:
                raise UnrecoverableTraceError(
                    f"no I-sync for context {self.target} anywhere in the trace")
            raise NotSynchronizedError(f"trace never synchronizes on context {self.target}")
        if self.cursor in self.wmap:
            wp = self.wmap.next_branch(self.cursor)
            if wp.kind == HALT:
                return [FlowEvent(self.cursor, wp.address, HALT)]
        return []


def _drive(packets: Iterable[TracePacket], rebuilder: FlowRebuilder) -> List[FlowEvent]:
    out: List[FlowEvent] = []
    for p in packets:
        out.extend(rebuilder.push(p))
    out.extend(rebuilder.finish())
    return out


def reconstruct(packets: Iterable[TracePacket], wmap: WaypointMap, program: ProgramImage,
                target_context: int) -> List[FlowEvent]:
    return _drive(packets, FlowRebuilder(wmap, target_context))


def resume_from_partial(packets: Iterable[TracePacket], wmap: WaypointMap, program: ProgramImage,
                        target_context: int) -> List[FlowEvent]:
    return _drive(packets, FlowRebuilder(wmap, target_context, resume=True))


def events_text(events: Iterable[FlowEvent]) -> str:
    return "".join(e.text() + "\n" for e in events)

"""Static analysis that lowers the program to per-block tag microcode.

The propagation rules are data: a table from instruction kind to a tuple of
op templates. A template is ``(opname, *operand roles)`` where a role is an
instruction field (``rd``, ``ra``, ``rb``), a fixed register number, or a
sink kind for ``sink`` templates. Sink checks are listed before the
data-moving op so a violation reports the pre-instruction tag state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

from .errors import AnalysisError, CompileError
from .isa import ProgramImage
from .policy import SINK_KINDS, Policy


@dataclass(frozen=True)
class SetZero:
    rd: int


@dataclass(frozen=True)
class CopyReg:
    rd: int
    rs: int


@dataclass(frozen=True)
class MergeRegs:
    rd: int
    ra: int
    rb: int


@dataclass(frozen=True)
class LoadTag:
    rd: int


@dataclass(frozen=True)
class StoreTag:
    rs: int


@dataclass(frozen=True)
class SourceApply:
    rd: int
    mask: int


@dataclass(frozen=True)
class SinkCheck:
    kind: str
    reg: int


TagOp = Union[SetZero, CopyReg, MergeRegs, LoadTag, StoreTag, SourceApply, SinkCheck]


def tagop_text(op: TagOp) -> str:
    if isinstance(op, SetZero):
        return f"zero r{op.rd}"
    if isinstance(op, CopyReg):
        return f"copy r{op.rd}<-r{op.rs}"
    if isinstance(op, MergeRegs):
        return f"merge r{op.rd}<-r{op.ra},r{op.rb}"
    if isinstance(op, LoadTag):
        return f"loadtag r{op.rd}"
    if isinstance(op, StoreTag):
        return f"storetag r{op.rs}"
    if isinstance(op, SourceApply):
        return f"source r{op.rd} mask 0x{op.mask:x}"
    return f"sink {op.kind} r{op.reg}"


# instruction kinds: mnemonic, except SVC which is keyed by number
DEFAULT_RULES: Dict[str, Tuple[tuple, ...]] = {
    "MOVI": (("zero", "rd"),),
    "MOV": (("copy", "rd", "ra"),),
    "ADD": (("merge", "rd", "ra", "rb"),),
    "SUB": (("merge", "rd", "ra", "rb"),),
    "LDR": (("sink", "load-addr", "ra"), ("loadtag", "rd")),
    "STR": (("sink", "store-addr", "ra"), ("storetag", "rd")),
    "B": (),
    "BNZ": (("sink", "branch-cond", "rd"),),
    "BX": (("sink", "jump-target", "rd"),),
    "BL": (("zero", 14),),
    "SVC0": (("source", 0),),
    "SVC1": (("sink", "data-sink", 0),),
    "SVC": (),
    "HALT": (),
}


@dataclass(frozen=True)
class Ruleset:
    rules: Mapping[str, Tuple[tuple, ...]] = field(default_factory=lambda: dict(DEFAULT_RULES))
    source_mask: int = 1
    # sink kinds whose checks are emitted; the rest are compiled away
    sinks: FrozenSet[str] = frozenset(SINK_KINDS)

    @classmethod
    def for_policy(cls, policy: Policy, rules=None, prune_sinks: bool = True) -> "Ruleset":
        enabled = frozenset(k for k in SINK_KINDS if policy.sink_mask(k)) if prune_sinks else frozenset(SINK_KINDS)
        return cls(dict(rules or DEFAULT_RULES), policy.source_mask, enabled)

    def without_clears(self) -> "Ruleset":
        """Drop every SetZero template, leaving a merge-only rule table."""
        stripped = {k: tuple(t for t in v if t[0] != "zero") for k, v in self.rules.items()}
        return replace(self, rules=stripped)


def _kind(ins) -> str:
    if ins.op == "SVC":
        return f"SVC{ins.imm}" if ins.imm in (0, 1) else "SVC"
    return ins.op


@dataclass(frozen=True)
class BasicBlock:
    start: int
    end: int           # address of the last instruction
    kind: str          # direct | call | indirect | halt | fallthrough


def extract_blocks(program: ProgramImage) -> List[BasicBlock]:
    """Leader-based partition of the whole image.

    Leaders: the entry, every static branch target, every address after a
    branch or HALT, and every code address materialised by ``MOVI`` (the only
    way this ISA builds an indirect branch target). Code after a HALT is kept
    so resumed traces that land in it still find microcode.
    """
    leaders = {program.entry}
    for addr in program.addresses():
        ins = program.at(addr)
        if ins.op in ("B", "BNZ", "BL"):
            if not program.contains(ins.imm):
                raise AnalysisError(f"branch at 0x{addr:08x} targets 0x{ins.imm:08x} outside the image")
            leaders.add(ins.imm)
        elif ins.op == "MOVI" and program.contains(ins.imm):
            leaders.add(ins.imm)
        if ins.branch_kind is not None and addr + 4 < program.end:
            leaders.add(addr + 4)
    starts = sorted(leaders)
    blocks = []
    for i, start in enumerate(starts):
        end = (starts[i + 1] if i + 1 < len(starts) else program.end) - 4
        kind = program.at(end).branch_kind or "fallthrough"
        blocks.append(BasicBlock(start, end, kind))
    return blocks


def _operand(ins, role) -> int:
    if isinstance(role, int):
        return role
    return getattr(ins, role)


def lower_instruction(ins, ruleset: Ruleset) -> Tuple[TagOp, ...]:
    kind = _kind(ins)
    try:
        templates = ruleset.rules[kind]
    except KeyError:
        raise CompileError(f"ruleset has no entry for {kind}") from None
    ops: List[TagOp] = []
    for name, *roles in templates:
        if name == "zero":
            ops.append(SetZero(_operand(ins, roles[0])))
        elif name == "copy":
            ops.append(CopyReg(_operand(ins, roles[0]), _operand(ins, roles[1])))
        elif name == "merge":
            ops.append(MergeRegs(*(_operand(ins, r) for r in roles[:3])))
        elif name == "loadtag":
            ops.append(LoadTag(_operand(ins, roles[0])))
        elif name == "storetag":
            ops.append(StoreTag(_operand(ins, roles[0])))
        elif name == "source":
            if ruleset.source_mask:
                ops.append(SourceApply(_operand(ins, roles[0]), ruleset.source_mask))
            else:
                ops.append(SetZero(_operand(ins, roles[0])))
        elif name == "sink":
            sink_kind = roles[0]
            if sink_kind in ruleset.sinks:
                ops.append(SinkCheck(sink_kind, _operand(ins, roles[1])))
        else:
            raise CompileError(f"unknown template op {name!r} for {kind}")
    return tuple(ops)


def compile_tagops(block: BasicBlock, program: ProgramImage, ruleset: Ruleset) -> List[Tuple[int, Tuple[TagOp, ...]]]:
    """Per-instruction microcode for one block as ``[(pc, ops), ...]``."""
    if not (program.contains(block.start) and program.contains(block.end)) or block.end < block.start:
        raise CompileError(f"block 0x{block.start:08x}..0x{block.end:08x} is not inside the program")
    return [(pc, lower_instruction(program.at(pc), ruleset)) for pc in range(block.start, block.end + 4, 4)]


class TagOpProgram:
    """Block start -> per-instruction microcode, plus a flat pc index for replay."""

    def __init__(self, blocks: Dict[int, List[Tuple[int, Tuple[TagOp, ...]]]]):
        self.blocks = blocks
        self.by_pc: Dict[int, Tuple[TagOp, ...]] = {}
        for entries in blocks.values():
            for pc, ops in entries:
                self.by_pc[pc] = ops

    def __contains__(self, start):
        return start in self.blocks

    def __len__(self):
        return len(self.blocks)

    def text(self) -> str:
        lines = []
        for start in sorted(self.blocks):
            ops = [tagop_text(op) for _, instr_ops in self.blocks[start] for op in instr_ops]
            lines.append(f"block 0x{start:x}: " + ("; ".join(ops) if ops else "nop"))
        return "\n".join(lines) + "\n"


def compile_program(program: ProgramImage, ruleset: Optional[Ruleset] = None) -> TagOpProgram:
    ruleset = ruleset or Ruleset()
    return TagOpProgram({b.start: compile_tagops(b, program, ruleset) for b in extract_blocks(program)})

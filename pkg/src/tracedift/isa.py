"""Toy ISA: instruction model, assembler, disassembler and ``.img`` files.

Every instruction is one little-endian 32-bit word laid out as
``[opcode, a, b, c]``. Branch immediates are absolute byte addresses.

Assembly syntax, one instruction or label per line, ``;`` starts a comment::

    .org 0x100          ; optional, sets the load address (default 0x100)
    start:
        MOVI r1, 5
        LDR  r2, [r13+8]
        BNZ  r1, start
        HALT
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import AssemblyError, ImageFormatError

DEFAULT_BASE = 0x100
DATA_BASE = 0x0001_0000
DATA_SIZE = 0x0001_0000
NUM_REGS = 16
PC_REG = 15
LINK_REG = 14

OPCODES = {
    "MOVI": 0x01, "MOV": 0x02, "ADD": 0x03, "SUB": 0x04, "LDR": 0x05, "STR": 0x06,
    "B": 0x07, "BNZ": 0x08, "BX": 0x09, "BL": 0x0A, "SVC": 0x0B, "HALT": 0x0C,
}
MNEMONICS = {v: k for k, v in OPCODES.items()}

# terminator classification used by trace emission and static analysis
DIRECT_BRANCHES = frozenset({"B", "BNZ", "BL"})
BRANCHES = DIRECT_BRANCHES | {"BX"}


@dataclass(frozen=True)
class Instruction:
    op: str
    rd: int = 0      # MOVI/MOV/ADD/SUB/LDR destination, STR source, BNZ/BX register
    ra: int = 0
    rb: int = 0
    imm: int = 0     # imm16 for MOVI/B/BNZ/BL, imm8 for LDR/STR/SVC

    @property
    def is_branch(self) -> bool:
        return self.op in BRANCHES

    @property
    def branch_kind(self) -> Optional[str]:
        if self.op == "BX":
            return "indirect"
        if self.op == "BL":
            return "call"
        if self.op in ("B", "BNZ"):
            return "direct"
        if self.op == "HALT":
            return "halt"
        return None

    def encode(self) -> bytes:
        op = OPCODES[self.op]
        if self.op in ("MOVI", "BNZ"):
            return struct.pack("<BBH", op, self.rd, self.imm)
        if self.op in ("B", "BL"):
            return struct.pack("<BBH", op, 0, self.imm)
        if self.op == "SVC":
            return bytes((op, self.imm, 0, 0))
        if self.op in ("LDR", "STR"):
            return bytes((op, self.rd, self.ra, self.imm))
        if self.op == "MOV":
            return bytes((op, self.rd, self.ra, 0))
        if self.op in ("ADD", "SUB"):
            return bytes((op, self.rd, self.ra, self.rb))
        if self.op == "BX":
            return bytes((op, self.rd, 0, 0))
        return bytes((op, 0, 0, 0))

    @classmethod
    def decode(cls, word: bytes, address: int = 0) -> "Instruction":
        op = MNEMONICS.get(word[0])
        if op is None:
            raise ImageFormatError(f"unknown opcode 0x{word[0]:02x} at 0x{address:08x}")
        a, b, c = word[1], word[2], word[3]
        imm16 = b | (c << 8)
        if op in ("MOVI", "BNZ"):
            ins = cls(op, rd=a, imm=imm16)
        elif op in ("B", "BL"):
            ins = cls(op, imm=imm16)
        elif op == "SVC":
            ins = cls(op, imm=a)
        elif op in ("LDR", "STR"):
            ins = cls(op, rd=a, ra=b, imm=c)
        elif op == "MOV":
            ins = cls(op, rd=a, ra=b)
        elif op in ("ADD", "SUB"):
            ins = cls(op, rd=a, ra=b, rb=c)
        elif op == "BX":
            ins = cls(op, rd=a)
        else:
            ins = cls(op)
        for r in ins.registers():
            if r >= PC_REG:
                raise ImageFormatError(f"invalid register r{r} at 0x{address:08x}")
        if ins.encode() != bytes(word):
            raise ImageFormatError(f"non-canonical encoding at 0x{address:08x}")
        return ins

    def registers(self) -> Tuple[int, ...]:
        if self.op in ("MOVI", "BNZ", "BX"):
            return (self.rd,)
        if self.op in ("MOV", "LDR", "STR"):
            return (self.rd, self.ra)
        if self.op in ("ADD", "SUB"):
            return (self.rd, self.ra, self.rb)
        return ()

    def text(self) -> str:
        op = self.op
        if op == "MOVI":
            return f"MOVI r{self.rd}, 0x{self.imm:x}"
        if op == "MOV":
            return f"MOV r{self.rd}, r{self.ra}"
        if op in ("ADD", "SUB"):
            return f"{op} r{self.rd}, r{self.ra}, r{self.rb}"
        if op in ("LDR", "STR"):
            return f"{op} r{self.rd}, [r{self.ra}+{self.imm}]"
        if op in ("B", "BL"):
            return f"{op} 0x{self.imm:x}"
        if op == "BNZ":
            return f"BNZ r{self.rd}, 0x{self.imm:x}"
        if op == "BX":
            return f"BX r{self.rd}"
        if op == "SVC":
            return f"SVC {self.imm}"
        return "HALT"


@dataclass
class ProgramImage:
    base: int
    instructions: List[Instruction]
    labels: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.base % 4:
            raise ImageFormatError(f"base 0x{self.base:x} is not word aligned")
        if not self.instructions:
            raise ImageFormatError("program image is empty")

    @property
    def entry(self) -> int:
        return self.base

    @property
    def end(self) -> int:
        """One past the last code byte."""
        return self.base + 4 * len(self.instructions)

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.end and addr % 4 == 0

    def at(self, addr: int) -> Instruction:
        return self.instructions[(addr - self.base) >> 2]

    def addresses(self):
        return range(self.base, self.end, 4)

    def code_bytes(self) -> bytes:
        return b"".join(ins.encode() for ins in self.instructions)

    def to_bytes(self) -> bytes:
        return IMG_HEADER.pack(IMG_MAGIC, self.base, len(self.instructions)) + self.code_bytes()

    @classmethod
    def from_bytes(cls, data) -> "ProgramImage":
        data = bytes(data)
        if len(data) < IMG_HEADER.size or data[:4] != IMG_MAGIC:
            raise ImageFormatError("not a program image (bad magic)")
        _, base, count = IMG_HEADER.unpack_from(data)
        body = data[IMG_HEADER.size:]
        if len(body) != 4 * count:
            raise ImageFormatError(f"image declares {count} instructions but carries {len(body)} bytes")
        instructions = [Instruction.decode(body[i:i + 4], base + i) for i in range(0, len(body), 4)]
        return cls(base, instructions)


IMG_MAGIC = b"TIMG"
IMG_HEADER = struct.Struct("<4sII")


# --- assembler -------------------------------------------------------------

_REG = r"\s*r(\d+)\s*"
_LABEL_RE = re.compile(r"^([A-Za-z_.][\w.]*)\s*:\s*(.*)$")
_MEM_RE = re.compile(r"^\[" + _REG + r"(?:\+\s*(\S+?)\s*)?\]$", re.I)


def _parse_int(tok: str, line: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AssemblyError(f"bad integer {tok!r}", line) from None


def _parse_reg(tok: str, line: int) -> int:
    m = re.fullmatch(_REG, tok, re.I)
    if not m:
        raise AssemblyError(f"expected register, got {tok!r}", line)
    r = int(m.group(1))
    if r >= PC_REG:
        raise AssemblyError(f"register r{r} is not a valid operand", line)
    return r


def _split_operands(rest: str) -> List[str]:
    # commas inside [..] never occur in this ISA, a plain split is enough
    return [t.strip() for t in rest.split(",")] if rest.strip() else []


def _check_range(value: int, bits: int, what: str, line: int) -> int:
    if not 0 <= value < (1 << bits):
        raise AssemblyError(f"{what} {value} does not fit in {bits} bits", line)
    return value


def assemble(source: str, base: Optional[int] = None) -> ProgramImage:
    """Two-pass assembly. Errors carry the 1-based source line number."""
    lines: List[Tuple[int, str, List[str]]] = []
    labels: Dict[str, int] = {}
    org = base
    addr = None
    for lineno, raw in enumerate(source.splitlines(), 1):
        text = raw.split(";", 1)[0].strip()
        while text:
            m = _LABEL_RE.match(text)
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise AssemblyError(f"duplicate label {name!r}", lineno)
            if addr is None:
                addr = org = DEFAULT_BASE if org is None else org
            labels[name] = addr
            text = m.group(2).strip()
        if not text:
            continue
        parts = text.split(None, 1)
        mnemonic = parts[0].upper()
        rest = parts[1] if len(parts) > 1 else ""
        if mnemonic == ".ORG":
            if addr is not None:
                raise AssemblyError(".org must precede all code", lineno)
            if base is None:
                org = _parse_int(rest.strip(), lineno)
                if org % 4:
                    raise AssemblyError(f".org 0x{org:x} is not word aligned", lineno)
            continue
        if mnemonic not in OPCODES:
            raise AssemblyError(f"unknown mnemonic {parts[0]!r}", lineno)
        if addr is None:
            addr = org = DEFAULT_BASE if org is None else org
        lines.append((lineno, mnemonic, _split_operands(rest)))
        addr += 4

    if org is None:
        org = DEFAULT_BASE
    instructions = []
    for idx, (lineno, op, ops) in enumerate(lines):
        instructions.append(_assemble_one(op, ops, labels, lineno))
    if not instructions:
        raise AssemblyError("no instructions")
    return ProgramImage(org, instructions, labels)


def _target(tok: str, labels: Dict[str, int], line: int) -> int:
    if tok in labels:
        value = labels[tok]
    elif re.fullmatch(r"[A-Za-z_.][\w.]*", tok):
        raise AssemblyError(f"undefined label {tok!r}", line)
    else:
        value = _parse_int(tok, line)
    _check_range(value, 16, "branch target", line)
    if value % 4:
        raise AssemblyError(f"branch target 0x{value:x} is not word aligned", line)
    return value


def _assemble_one(op: str, ops: List[str], labels: Dict[str, int], line: int) -> Instruction:
    arity = {"MOVI": 2, "MOV": 2, "ADD": 3, "SUB": 3, "LDR": 2, "STR": 2, "B": 1,
             "BNZ": 2, "BX": 1, "BL": 1, "SVC": 1, "HALT": 0}[op]
    if len(ops) != arity:
        raise AssemblyError(f"{op} takes {arity} operand(s), got {len(ops)}", line)
    if op == "MOVI":
        imm = ops[1]
        value = labels[imm] if imm in labels else _parse_int(imm, line)
        return Instruction(op, rd=_parse_reg(ops[0], line), imm=_check_range(value, 16, "immediate", line))
    if op == "MOV":
        return Instruction(op, rd=_parse_reg(ops[0], line), ra=_parse_reg(ops[1], line))
    if op in ("ADD", "SUB"):
        return Instruction(op, rd=_parse_reg(ops[0], line), ra=_parse_reg(ops[1], line),
                           rb=_parse_reg(ops[2], line))
    if op in ("LDR", "STR"):
        m = _MEM_RE.match(ops[1])
        if not m:
            raise AssemblyError(f"expected [rN+imm], got {ops[1]!r}", line)
        ra = int(m.group(1))
        if ra >= PC_REG:
            raise AssemblyError(f"register r{ra} is not a valid operand", line)
        off = _parse_int(m.group(2), line) if m.group(2) else 0
        return Instruction(op, rd=_parse_reg(ops[0], line), ra=ra,
                           imm=_check_range(off, 8, "offset", line))
    if op in ("B", "BL"):
        return Instruction(op, imm=_target(ops[0], labels, line))
    if op == "BNZ":
        return Instruction(op, rd=_parse_reg(ops[0], line), imm=_target(ops[1], labels, line))
    if op == "BX":
        return Instruction(op, rd=_parse_reg(ops[0], line))
    if op == "SVC":
        return Instruction(op, imm=_check_range(_parse_int(ops[0], line), 8, "SVC number", line))
    return Instruction(op)


def disassemble(program: ProgramImage) -> str:
    """Assembly text that reassembles to byte-identical code at the same base."""
    lines = [f".org 0x{program.base:x}"]
    by_addr: Dict[int, List[str]] = {}
    for name, addr in program.labels.items():
        by_addr.setdefault(addr, []).append(name)
    for addr, ins in zip(program.addresses(), program.instructions):
        for name in sorted(by_addr.get(addr, ())):
            lines.append(f"{name}:")
        lines.append(f"    {ins.text():<24s}; 0x{addr:08x}")
    return "\n".join(lines) + "\n"

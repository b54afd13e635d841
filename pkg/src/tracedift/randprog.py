"""Random, always-terminating toy programs for differential testing.

Register conventions inside generated code:

    r0-r6   data (r0 doubles as the SVC 0/1 operand)
    r7      scratch for constants and the zero-value taint trick
    r8      computed data pointer
    r9      computed jump target
    r10-12  loop counters, one per nesting level
    r13     data segment base
    r14     link register

``SUB rX, rY, rY`` yields the value zero but carries rY's tag, which lets the
generator build pointers and jump targets that are valid yet tainted.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import List, Optional

from .isa import ProgramImage, assemble
from .policy import SINK_KINDS, Policy

DATA_REGS = tuple(range(7))
LOOP_REGS = (10, 11, 12)


@dataclass
class RandomCase:
    seed: int
    source: str
    inputs: List[int]
    program: ProgramImage = field(repr=False, default=None)

    def __post_init__(self):
        if self.program is None:
            self.program = assemble(self.source)


class _Gen:
    def __init__(self, rng: random.Random, max_instructions: int, max_depth: int):
        self.rng = rng
        self.budget = max_instructions
        self.max_depth = max_depth
        self.lines: List[str] = []
        self.labels = 0
        self.funcs: List[str] = []

    def label(self) -> str:
        self.labels += 1
        return f"L{self.labels}"

    def emit(self, text: str) -> None:
        self.lines.append("    " + text)
        self.budget -= 1

    def place(self, label: str) -> None:
        self.lines.append(f"{label}:")

    def reg(self) -> int:
        return self.rng.choice(DATA_REGS)

    def offset(self) -> int:
        return 4 * self.rng.randrange(16)

    def simple(self) -> None:
        r = self.rng
        kind = r.choices(
            ["movi", "mov", "add", "sub", "svc0", "svc1", "ldr", "str", "ptr", "svc9"],
            weights=[3, 3, 3, 2, 3, 2, 3, 3, 1, 0.3])[0]
        if kind == "movi":
            self.emit(f"MOVI r{self.reg()}, {r.choice([0, 1, r.randrange(1 << 16)])}")
        elif kind == "mov":
            self.emit(f"MOV r{self.reg()}, r{self.reg()}")
        elif kind in ("add", "sub"):
            self.emit(f"{kind.upper()} r{self.reg()}, r{self.reg()}, r{self.reg()}")
        elif kind == "svc0":
            self.emit("SVC 0")
        elif kind == "svc1":
            if r.random() < 0.5:
                self.emit(f"MOV r0, r{self.reg()}")
            self.emit("SVC 1")
        elif kind == "svc9":
            self.emit(f"SVC {r.randrange(2, 256)}")
        elif kind == "ldr":
            self.emit(f"LDR r{self.reg()}, [r13+{self.offset()}]")
        elif kind == "str":
            self.emit(f"STR r{self.reg()}, [r13+{self.offset()}]")
        else:
            src = self.reg()
            self.emit(f"SUB r8, r{src}, r{src}")
            self.emit("ADD r8, r8, r13")
            if r.random() < 0.5:
                self.emit(f"LDR r{self.reg()}, [r8+{self.offset()}]")
            else:
                self.emit(f"STR r{self.reg()}, [r8+{self.offset()}]")

    def block(self, depth: int, loops_used: int, in_func: bool, limit: int) -> None:
        r = self.rng
        count = r.randint(1, limit)
        for _ in range(count):
            if self.budget < 12:
                return
            choice = r.random()
            if depth < self.max_depth and choice < 0.12:
                self.if_then(depth, loops_used, in_func)
            elif depth < self.max_depth and choice < 0.20:
                self.if_else(depth, loops_used, in_func)
            elif depth < self.max_depth and choice < 0.28 and not in_func and loops_used < len(LOOP_REGS):
                self.loop(depth, loops_used)
            elif choice < 0.33 and not in_func and self.funcs:
                self.emit(f"BL {r.choice(self.funcs)}")
            elif choice < 0.38:
                self.computed_jump()
            else:
                self.simple()

    def if_then(self, depth, loops_used, in_func):
        skip = self.label()
        self.emit(f"BNZ r{self.reg()}, {skip}")
        self.block(depth + 1, loops_used, in_func, 4)
        self.place(skip)

    def if_else(self, depth, loops_used, in_func):
        other, end = self.label(), self.label()
        self.emit(f"BNZ r{self.reg()}, {other}")
        self.block(depth + 1, loops_used, in_func, 3)
        self.emit(f"B {end}")
        self.place(other)
        self.block(depth + 1, loops_used, in_func, 3)
        self.place(end)

    def loop(self, depth, loops_used):
        counter = LOOP_REGS[loops_used]
        top = self.label()
        self.emit(f"MOVI r{counter}, {self.rng.randint(1, 4)}")
        self.place(top)
        self.block(depth + 1, loops_used + 1, False, 4)
        self.emit("MOVI r7, 1")
        self.emit(f"SUB r{counter}, r{counter}, r7")
        self.emit(f"BNZ r{counter}, {top}")

    def computed_jump(self):
        target = self.label()
        self.emit(f"MOVI r9, {target}")
        if self.rng.random() < 0.5:
            src = self.reg()
            self.emit(f"SUB r7, r{src}, r{src}")
            self.emit("ADD r9, r9, r7")
        self.emit("BX r9")
        for _ in range(self.rng.randint(0, 2)):
            self.simple()   # dead code
        self.place(target)


def random_program(rng: random.Random, max_instructions: int = 200, max_depth: int = 4,
                   outer_iterations: Optional[int] = None) -> str:
    g = _Gen(rng, max_instructions - 8, max_depth)
    g.emit("B main")
    for i in range(rng.randint(0, 2)):
        name = f"F{i}"
        g.place(name)
        g.block(1, len(LOOP_REGS), True, 4)
        g.emit("BX r14")
        g.funcs.append(name)
    g.place("main")
    g.emit("MOVI r13, 0x8000")
    g.emit("ADD r13, r13, r13")
    loops_used = 0
    if outer_iterations:
        g.emit(f"MOVI r10, {outer_iterations}")
        g.place("outer")
        loops_used = 1
    g.block(0 if not outer_iterations else 1, loops_used, False, 40)
    if outer_iterations:
        g.emit("MOVI r7, 1")
        g.emit("SUB r10, r10, r7")
        g.emit("BNZ r10, outer")
    g.emit("HALT")
    return ".org 0x100\n" + "\n".join(g.lines) + "\n"


def random_inputs(rng: random.Random, n: Optional[int] = None) -> List[int]:
    n = rng.randint(0, 8) if n is None else n
    return [rng.choice([0, 1, rng.randrange(1 << 32)]) for _ in range(n)]


def random_case(seed: int, max_instructions: int = 200, max_depth: int = 4,
                outer_iterations: Optional[int] = None) -> RandomCase:
    rng = random.Random(seed)
    source = random_program(rng, max_instructions, max_depth, outer_iterations)
    return RandomCase(seed, source, random_inputs(rng))


def random_policy(rng: random.Random, width: int) -> Policy:
    sources = 0
    sinks = {}
    for b in range(width):
        if rng.random() < 0.8:
            sources |= 1 << b
        sinks[b] = frozenset(k for k in SINK_KINDS if rng.random() < 0.4)
    if not sources:
        sources = 1
    return Policy(sources, sinks)


def long_case(seed: int) -> RandomCase:
    """A program whose trace overflows the 4 KB ETB several times."""
    rng = random.Random(seed ^ 0x5EED)
    return random_case(seed, max_instructions=40, max_depth=2,
                       outer_iterations=rng.randint(4000, 6000))

"""Differential verification against the inline oracle, and throughput benchmarks."""

from __future__ import annotations

import random
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

from . import codec, cpu
from .codec import Atom, ISync
from .errors import DiftError
from .isa import assemble
from .pipeline import PipelineConfig, prepare, run_batch, run_stream
from .randprog import random_case, random_policy


@dataclass
class Divergence:
    seed: int
    what: str
    detail: str

    def text(self) -> str:
        return f"DIVERGENCE seed={self.seed} {self.what}: {self.detail}"


@dataclass
class VerifyResult:
    n_programs: int
    seed: int
    passed: int = 0
    first: Optional[Divergence] = None

    @property
    def ok(self) -> bool:
        return self.first is None and self.passed == self.n_programs

    def lines(self) -> List[str]:
        out = [f"verify n={self.n_programs} seed={self.seed} passed={self.passed} "
               f"verdict={'PASS' if self.ok else 'FAIL'}"]
        if self.first:
            out.append(self.first.text())
            out.append(f"repro: tracedift verify -n 1 --seed {self.first.seed}")
        return out


def compare_reports(oracle, report) -> Optional[str]:
    if tuple(oracle.violations) != tuple(report.violations):
        return f"violations oracle={list(oracle.violations)[:3]} pipeline={list(report.violations)[:3]}"
    if tuple(oracle.trf) != tuple(report.trf):
        return f"trf oracle={oracle.trf} pipeline={report.trf}"
    if oracle.byte_tags() != report.byte_tags():
        return "byte-level memory tags differ"
    return None


def case_seed(seed: int, i: int) -> int:
    return seed * 1_000_003 + i


def verify(n_programs: int, seed: int, width: int = 4, decode: Optional[Callable] = None,
           mode: str = "batch", queue_capacity: int = 1024) -> VerifyResult:
    """Run ``n_programs`` random programs through the oracle and the full pipeline at G=1.

    ``decode`` replaces the batch decoder; it exists so a deliberately broken
    decoder can be shown to fail verification.
    """
    result = VerifyResult(n_programs, seed)
    for i in range(n_programs):
        s = case_seed(seed, i)
        case = random_case(s)
        policy = random_policy(random.Random(s), width)
        art = cpu.run(case.program, case.inputs, policy=policy, width=width)
        cfg = PipelineConfig(mode=mode, queue_capacity=queue_capacity, width=width, granularity=1,
                             policy=policy)
        try:
            if mode == "stream":
                res = run_stream(art.trace, case.program, art.memlog, cfg)
            else:
                res = run_batch(art.trace, case.program, art.memlog, cfg, decode=decode)
        except DiftError as exc:
            result.first = Divergence(s, "pipeline error", f"{type(exc).__name__}: {exc}")
            return result
        diff = compare_reports(art.oracle_report, res.report)
        if diff:
            result.first = Divergence(s, "report mismatch", diff)
            return result
        result.passed += 1
    return result


def mutated_decoder(kind: str = "atom-swap") -> Callable:
    """A decoder with one deliberate opcode bug, for mutation checks of the harness."""
    def decode(data, require_alignment=False):
        packets, diag = codec.decode_stream(data, require_alignment)
        if kind == "atom-swap":
            packets = [Atom(not p.taken) if isinstance(p, Atom) else p for p in packets]
        elif kind == "drop-branch":
            packets = [p for p in packets if not isinstance(p, codec.BranchAddr)]
        else:
            raise ValueError(f"unknown mutation {kind!r}")
        return packets, diag
    return decode


MUTATIONS = ("atom-swap", "drop-branch")


# --- benchmark ---------------------------------------------------------------

BENCH_SOURCE = """\
.org 0x100
    MOVI r7, 1
    MOVI r10, 1
loop:
    SUB r10, r10, r7
    BNZ r10, loop
    HALT
"""


def synthetic_trace(min_bytes: int, sync_period: int = cpu.DEFAULT_SYNC_PERIOD, context: int = 1) -> bytes:
    """Trace of the benchmark loop spinning long enough to produce ``min_bytes``.

    Uses the same emission rules as the simulator (one atom per BNZ, A-sync +
    I-sync every ``sync_period`` atoms) without executing millions of steps.
    """
    loop = 0x108
    e = codec.encode_packet(Atom(True))
    sync = codec.ASYNC_BYTES + codec.encode_packet(ISync(loop, context))
    period = e * (sync_period - 1)
    out = bytearray(codec.ASYNC_BYTES + codec.encode_packet(ISync(0x100, context)))
    while len(out) < min_bytes:
        out += period + e + sync
    out += codec.encode_packet(Atom(False))
    return bytes(out)


@dataclass
class BenchResult:
    trace_bytes: int
    iterations: int
    decode_bps: List[float] = field(default_factory=list)
    batch_eps: List[float] = field(default_factory=list)
    stream_eps: List[float] = field(default_factory=list)
    events: int = 0

    @staticmethod
    def _stats(xs):
        if not xs:
            return 0.0, 0.0
        return statistics.fmean(xs), (statistics.stdev(xs) if len(xs) > 1 else 0.0)

    def rows(self):
        """(metric, mean, stdev, unit) rows for delimited output."""
        rows = []
        for name, xs, unit in (("decode", self.decode_bps, "bytes/s"),
                               ("end_to_end_batch", self.batch_eps, "events/s"),
                               ("end_to_end_stream", self.stream_eps, "events/s")):
            if xs:
                mean, sd = self._stats(xs)
                rows.append((name, mean, sd, unit))
        return rows

    def table(self) -> List[str]:
        return ["metric,mean,stdev,unit"] + [f"{n},{m:.1f},{s:.1f},{u}" for n, m, s, u in self.rows()]

    def lines(self) -> List[str]:
        out = [f"bench trace_bytes={self.trace_bytes} iterations={self.iterations} events={self.events}"]
        out += self.table()
        if self.batch_eps and self.stream_eps:
            b = self._stats(self.batch_eps)[0]
            st = self._stats(self.stream_eps)[0]
            out.append(f"ordering batch{'>=' if b >= st else '<'}stream")
        return out


def bench(trace: bytes, iterations: int = 3, program=None, memlog=(), cfg: Optional[PipelineConfig] = None,
          end_to_end: bool = True) -> BenchResult:
    """Decode throughput on ``trace``; with a program, also end-to-end events/s in both modes."""
    res = BenchResult(len(trace), iterations)
    for _ in range(iterations):
        t0 = time.perf_counter()
        codec.decode_stream(trace, require_alignment=True)
        dt = time.perf_counter() - t0
        res.decode_bps.append(len(trace) / dt if dt > 0 else float("inf"))
    if program is None or not end_to_end:
        return res
    cfg = cfg or PipelineConfig()
    prep = prepare(program, cfg.effective_policy)
    for mode, sink in (("batch", res.batch_eps), ("stream", res.stream_eps)):
        for _ in range(iterations):
            t0 = time.perf_counter()
            if mode == "batch":
                out = run_batch(trace, program, memlog, cfg, prep)
            else:
                out = run_stream(trace, program, memlog, cfg, prep)
            dt = time.perf_counter() - t0
            res.events = out.events
            sink.append(out.events / dt if dt > 0 else float("inf"))
    return res


def bench_program():
    return assemble(BENCH_SOURCE)

"""Decode -> rebuild -> engine, run back to back (batch) or as threads (stream).

Both modes drive the same incremental state machines
(:class:`~tracedift.codec.StreamDecoder`,
:class:`~tracedift.flow.FlowRebuilder`, :class:`~tracedift.engine.DiftEngine`),
so their output is identical by construction; stream mode only changes the
scheduling. Stages are connected by bounded queues and the producer blocks
when its queue is full, so a slow engine throttles the decoder instead of
buffering the whole trace.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

from .codec import DecodeDiag, StreamDecoder, decode_stream
from .engine import DiftEngine
from .errors import ConfigError
from .flow import FlowRebuilder, WaypointMap, build_waypoint_map
from .isa import ProgramImage
from .policy import DEFAULT_POLICY, Policy
from .records import FlowEvent, MemAccessRecord, TagReport
from .taggrid import Ruleset, TagOpProgram, compile_program

DEFAULT_QUEUE = 1024
STREAM_CHUNK = 256


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "batch"
    queue_capacity: int = DEFAULT_QUEUE
    width: int = 8
    granularity: int = 4
    policy: Policy = DEFAULT_POLICY
    context: int = 1
    stop_on_first: bool = False
    partial: bool = False       # input is an ETB snapshot that may start mid-run

    def __post_init__(self):
        if self.mode not in ("batch", "stream"):
            raise ConfigError(f"mode must be batch or stream, got {self.mode!r}")
        if not isinstance(self.queue_capacity, int) or self.queue_capacity < 1:
            raise ConfigError(f"queue capacity must be >= 1, got {self.queue_capacity}")

    @property
    def effective_policy(self) -> Policy:
        if self.stop_on_first and not self.policy.stop_on_first:
            return self.policy.with_stop_on_first(True)
        return self.policy


@dataclass
class PipelineResult:
    report: TagReport
    diag: DecodeDiag
    packets: int
    events: int
    memlog_start: int = 0

    def lines(self) -> List[str]:
        out = list(self.report.lines())
        out.append(f"summary packets={self.packets} events={self.events} "
                   f"violations={len(self.report.violations)} skipped_bytes={self.diag.skipped_bytes}"
                   + (" truncated_tail" if self.diag.truncated_tail else ""))
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


@dataclass
class Prepared:
    program: ProgramImage
    wmap: WaypointMap
    tagprog: TagOpProgram


def prepare(program: ProgramImage, policy: Policy) -> Prepared:
    return Prepared(program, build_waypoint_map(program), compile_program(program, Ruleset.for_policy(policy)))


def _count_accesses(program: ProgramImage, events: Sequence[FlowEvent]) -> int:
    n = 0
    for e in events:
        for pc in range(e.block_start, e.block_end + 4, 4):
            if program.at(pc).op in ("LDR", "STR"):
                n += 1
    return n


def memlog_offset(program: ProgramImage, events: Sequence[FlowEvent], memlog_len: int) -> int:
    """Index of the first memlog record a trace suffix consumes.

    A suffix always runs to the end of the program, so it consumes the tail
    of the side log.
    """
    return max(0, memlog_len - _count_accesses(program, events))


def _decode_packets(trace: bytes, cfg: PipelineConfig, decode=None):
    decode = decode or decode_stream
    return decode(trace, require_alignment=True)


def _rebuild(prep: Prepared, packets, cfg: PipelineConfig) -> List[FlowEvent]:
    rb = FlowRebuilder(prep.wmap, cfg.context, resume=cfg.partial)
    events: List[FlowEvent] = []
    for p in packets:
        events.extend(rb.push(p))
    events.extend(rb.finish())
    return events


def run_batch(trace: bytes, program: ProgramImage, memlog: Sequence[MemAccessRecord],
              cfg: PipelineConfig, prep: Optional[Prepared] = None, decode=None) -> PipelineResult:
    policy = cfg.effective_policy
    prep = prep or prepare(program, policy)
    packets, diag = _decode_packets(trace, cfg, decode)
    events = _rebuild(prep, packets, cfg)
    start = memlog_offset(program, events, len(memlog)) if cfg.partial else 0
    engine = DiftEngine(prep.tagprog, memlog, policy, cfg.width, cfg.granularity, memlog_start=start)
    for e in events:
        engine.consume(e)
        if engine.stopped:
            break
    return PipelineResult(engine.report(), diag, len(packets), len(events), start)


_EOS = object()


class _Cancelled(Exception):
    pass


class _Channel:
    """Bounded SPSC queue whose blocking calls give up once the pipeline is cancelled."""

    def __init__(self, capacity: int, cancel: threading.Event):
        self.q: queue.Queue = queue.Queue(maxsize=capacity)
        self.cancel = cancel

    def put(self, item) -> None:
        while True:
            if self.cancel.is_set():
                raise _Cancelled
            try:
                self.q.put(item, timeout=0.05)
                return
            except queue.Full:
                continue

    def get(self):
        while True:
            try:
                return self.q.get(timeout=0.05)
            except queue.Empty:
                if self.cancel.is_set():
                    raise _Cancelled from None


def run_stream(trace: bytes, program: ProgramImage, memlog: Sequence[MemAccessRecord],
               cfg: PipelineConfig, prep: Optional[Prepared] = None,
               timeout: Optional[float] = None, chunk: int = STREAM_CHUNK) -> PipelineResult:
    policy = cfg.effective_policy
    prep = prep or prepare(program, policy)
    start = 0
    if cfg.partial:
        # the side log is aligned from its tail, which needs the suffix length up front
        packets, _ = decode_stream(trace, require_alignment=True)
        start = memlog_offset(program, _rebuild(prep, packets, cfg), len(memlog))

    cancel = threading.Event()
    q_packets = _Channel(cfg.queue_capacity, cancel)
    q_events = _Channel(cfg.queue_capacity, cancel)
    errors: List[Optional[BaseException]] = [None, None, None]
    out = {}

    def stage(index: int, body: Callable[[], None]):
        def target():
            try:
                body()
            except _Cancelled:
                pass
            except BaseException as exc:  # noqa: BLE001 - re-raised on the caller's thread
                errors[index] = exc
                cancel.set()
        return threading.Thread(target=target, name=f"dift-stage-{index}", daemon=True)

    def decode_body():
        dec = StreamDecoder(require_alignment=True)
        count = 0
        for off in range(0, len(trace), chunk):
            for p in dec.feed(trace[off:off + chunk]):
                q_packets.put(p)
                count += 1
        out["diag"] = dec.finish()
        out["packets"] = count
        q_packets.put(_EOS)

    def rebuild_body():
        rb = FlowRebuilder(prep.wmap, cfg.context, resume=cfg.partial)
        count = 0
        while True:
            p = q_packets.get()
            if p is _EOS:
                break
            for e in rb.push(p):
                q_events.put(e)
                count += 1
        for e in rb.finish():
            q_events.put(e)
            count += 1
        out["events"] = count
        q_events.put(_EOS)

    def engine_body():
        engine = DiftEngine(prep.tagprog, memlog, policy, cfg.width, cfg.granularity, memlog_start=start)
        while True:
            e = q_events.get()
            if e is _EOS:
                break
            # keep draining after a stop so upstream stages never block on a full queue
            engine.consume(e)
        out["report"] = engine.report()

    threads = [stage(0, decode_body), stage(1, rebuild_body), stage(2, engine_body)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
        if t.is_alive():
            cancel.set()
            raise TimeoutError(f"pipeline stage {t.name} did not finish within {timeout} s")
    for exc in errors:
        if exc is not None:
            raise exc
    return PipelineResult(out["report"], out["diag"], out["packets"], out["events"], start)


def run_pipeline(trace: bytes, program: ProgramImage, memlog: Sequence[MemAccessRecord],
                 cfg: PipelineConfig, prep: Optional[Prepared] = None, **kw) -> PipelineResult:
    if cfg.mode == "stream":
        return run_stream(trace, program, memlog, cfg, prep, **kw)
    return run_batch(trace, program, memlog, cfg, prep, **kw)

"""Command-line front end: ``tracedift <asm|trace|decode|tagops|run|verify|bench>``.

Exit codes: 0 no violation, 1 violations found, 2 input error, 3 trace
unrecoverable, 4 internal desync (``verify`` also uses 4 for a divergence).
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from pathlib import Path

from . import codec, cpu, harness
from .errors import DiftError
from .flow import build_waypoint_map, events_text, reconstruct, resume_from_partial
from .isa import ProgramImage, assemble, disassemble
from .pipeline import DEFAULT_QUEUE, PipelineConfig, run_pipeline
from .policy import DEFAULT_POLICY, load_policy
from .records import decode_memlog, encode_memlog
from .taggrid import Ruleset, compile_program

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_UNRECOVERABLE, EXIT_DESYNC = 0, 1, 2, 3, 4


def _int(text):
    return int(text, 0)


def parse_inputs(text):
    if not text:
        return []
    return [int(tok, 0) & 0xFFFFFFFF for tok in re.split(r"[,\s]+", text.strip()) if tok]


def load_image(path) -> ProgramImage:
    path = Path(path)
    if path.suffix in (".s", ".asm"):
        return assemble(path.read_text())
    return ProgramImage.from_bytes(path.read_bytes())


def load_trace(path):
    """Raw trace bytes and whether they came from an ETB snapshot."""
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".etb":
        return codec.linearize_etb(codec.EtbDump.from_bytes(data)), True
    return data, False


def _policy(args):
    return load_policy(args.policy) if args.policy else DEFAULT_POLICY


def _config(args, partial=False) -> PipelineConfig:
    return PipelineConfig(mode=args.mode, queue_capacity=args.queue, width=args.width,
                          granularity=args.granularity, policy=_policy(args), context=args.context,
                          stop_on_first=args.stop_on_first, partial=partial)


def cmd_asm(args, out):
    program = assemble(Path(args.source).read_text())
    Path(args.output).write_bytes(program.to_bytes())
    if args.listing:
        out.write(disassemble(program))
    print(f"assembled {len(program.instructions)} instructions at 0x{program.base:x} -> {args.output}",
          file=out)
    return EXIT_OK


def cmd_disasm(args, out):
    out.write(disassemble(load_image(args.image)))
    return EXIT_OK


def cmd_trace(args, out):
    program = load_image(args.image)
    cfg = cpu.TraceConfig(sync_period=args.sync_period, context=args.context)
    art = cpu.run(program, parse_inputs(args.inputs), cfg, policy=_policy(args), width=args.width,
                  step_budget=args.step_budget)
    prefix = args.output
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    Path(prefix + ".pft").write_bytes(art.trace)
    Path(prefix + ".memlog").write_bytes(encode_memlog(art.memlog))
    etb = codec.capture_etb(art.trace)
    Path(prefix + ".etb").write_bytes(etb.to_bytes())
    Path(prefix + ".oracle").write_text(art.oracle_report.text())
    print(f"steps={art.steps} trace_bytes={len(art.trace)} memlog_records={len(art.memlog)} "
          f"etb_wrapped={int(etb.wrapped)} oracle_violations={len(art.oracle_report.violations)}", file=out)
    return EXIT_OK


def cmd_decode(args, out):
    program = load_image(args.image)
    data, partial = load_trace(args.trace)
    packets, diag = codec.decode_stream(data, require_alignment=True)
    if not args.quiet:
        for p in packets:
            print(codec.packet_text(p), file=out)
    wmap = build_waypoint_map(program)
    rebuild = resume_from_partial if partial else reconstruct
    events = rebuild(packets, wmap, program, args.context)
    out.write(events_text(events))
    print(f"packets={len(packets)} events={len(events)} skipped_bytes={diag.skipped_bytes} "
          f"truncated_tail={int(diag.truncated_tail)} source={'etb' if partial else 'pft'}", file=out)
    return EXIT_OK


def cmd_tagops(args, out):
    program = load_image(args.image)
    out.write(compile_program(program, Ruleset.for_policy(_policy(args))).text())
    return EXIT_OK


def cmd_run(args, out):
    program = load_image(args.image)
    data, partial = load_trace(args.trace)
    memlog = decode_memlog(Path(args.memlog).read_bytes()) if args.memlog else []
    cfg = _config(args, partial)
    result = run_pipeline(data, program, memlog, cfg)
    out.write(result.text())
    if args.plot:
        from .report import plot_violations
        plot_violations(result.report, args.plot)
        print(f"figure {args.plot}", file=out)
    return EXIT_VIOLATION if result.report.violations else EXIT_OK


def cmd_verify(args, out):
    decode = harness.mutated_decoder(args.mutate) if args.mutate else None
    result = harness.verify(args.n, args.seed, width=args.width, decode=decode, mode=args.mode,
                            queue_capacity=args.queue)
    out.write("\n".join(result.lines()) + "\n")
    return EXIT_OK if result.ok else EXIT_DESYNC


def cmd_bench(args, out):
    if args.trace:
        data, partial = load_trace(args.trace)
        program = load_image(args.image) if args.image else None
        memlog = decode_memlog(Path(args.memlog).read_bytes()) if args.memlog else []
    else:
        data, partial = harness.synthetic_trace(args.synthetic_bytes), False
        program, memlog = harness.bench_program(), []
    cfg = _config(args, partial)
    result = harness.bench(data, args.iterations, program, memlog, cfg, end_to_end=not args.decode_only)
    text = "\n".join(result.lines()) + "\n"
    out.write(text)
    if args.csv:
        Path(args.csv).write_text("\n".join(result.table()) + "\n")
    if args.plot:
        from .report import plot_bench
        plot_bench(result, args.plot)
        print(f"figure {args.plot}", file=out)
    return EXIT_OK


def _add_globals(p, default):
    """Shared flags; accepted before or after the subcommand."""
    d = (lambda v: v) if default else (lambda v: argparse.SUPPRESS)
    p.add_argument("--width", "-W", type=int, default=d(8), help="tag width in bits (1-32)")
    p.add_argument("--granularity", "-G", type=int, default=d(4), help="memory tag granularity in bytes")
    p.add_argument("--context", type=_int, default=d(1), help="traced context id")
    p.add_argument("--queue", type=int, default=d(DEFAULT_QUEUE), help="stream queue capacity (packets)")
    p.add_argument("--mode", choices=("batch", "stream"), default=d("batch"))
    p.add_argument("--policy", default=d(None), help="policy file")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--stop-on-first", action="store_true", default=d(False))
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser():
    parser = argparse.ArgumentParser(prog="tracedift", description=__doc__.splitlines()[0])
    _add_globals(parser, True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        _add_globals(p, False)
        p.set_defaults(func=func)
        return p

    p = add("asm", cmd_asm, "assemble toy assembly into a program image")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--listing", action="store_true", help="print the disassembly")

    p = add("disasm", cmd_disasm, "disassemble a program image")
    p.add_argument("image")

    p = add("trace", cmd_trace, "run a program, writing .pft/.memlog/.etb/.oracle")
    p.add_argument("image")
    p.add_argument("--inputs", default="", help="SVC 0 input words, e.g. '1,2,0x30'")
    p.add_argument("--sync-period", type=int, default=cpu.DEFAULT_SYNC_PERIOD)
    p.add_argument("--step-budget", type=int, default=cpu.DEFAULT_STEP_BUDGET)
    p.add_argument("-o", "--output", required=True, help="output path prefix")

    p = add("decode", cmd_decode, "list packets and reconstructed flow of a .pft or .etb")
    p.add_argument("trace")
    p.add_argument("--image", required=True)
    p.add_argument("--quiet", "-q", action="store_true", help="omit the packet listing")

    p = add("tagops", cmd_tagops, "print compiled tag microcode per block")
    p.add_argument("image")

    p = add("run", cmd_run, "replay a trace through the DIFT engine")
    p.add_argument("--image", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--memlog")
    p.add_argument("--plot", help="write a violation timeline figure here")

    p = add("verify", cmd_verify, "differential check of random programs against the oracle")
    p.add_argument("-n", type=int, default=50)
    p.add_argument("--mutate", choices=harness.MUTATIONS, help="inject a decoder bug")

    p = add("bench", cmd_bench, "decode and end-to-end throughput")
    p.add_argument("trace", nargs="?")
    p.add_argument("--image")
    p.add_argument("--memlog")
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--synthetic-bytes", type=int, default=1 << 20)
    p.add_argument("--decode-only", action="store_true")
    p.add_argument("--csv", help="write the metric table here")
    p.add_argument("--plot", help="write a throughput figure here")
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except DiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except TimeoutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DESYNC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

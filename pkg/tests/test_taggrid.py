import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracedift.codec import ASync, decode_stream
from tracedift.cpu import TraceConfig, run
from tracedift.engine import MemlogCursor, StepContext, init, step
from tracedift.errors import AnalysisError, CompileError
from tracedift.flow import build_waypoint_map, resume_from_partial
from tracedift.isa import Instruction, assemble
from tracedift.policy import DEFAULT_POLICY, make_policy
from tracedift.randprog import random_case, random_policy
from tracedift.taggrid import (DEFAULT_RULES, BasicBlock, CopyReg, LoadTag, MergeRegs, Ruleset, SetZero,
                               SinkCheck, SourceApply, StoreTag, compile_program, compile_tagops,
                               extract_blocks, lower_instruction)

ALL = Ruleset()


def test_straight_line_one_block():
    p = assemble("MOVI r1, 2\nADD r1, r1, r1\nSVC 1\nHALT")
    assert extract_blocks(p) == [BasicBlock(0x100, 0x10C, "halt")]


def test_bnz_leaders():
    p = assemble("MOVI r0, 1\nBNZ r0, L\nMOVI r1, 2\nL: HALT")
    assert [b.start for b in extract_blocks(p)] == [0x100, 0x108, 0x10C]
    assert [b.kind for b in extract_blocks(p)] == ["direct", "fallthrough", "halt"]


def test_branch_target_outside_image():
    with pytest.raises(AnalysisError):
        extract_blocks(assemble("B 0x400\nHALT"))


def leader_oracle(program):
    """Leaders computed from the instruction list alone, by a forward pass."""
    out = set()
    prev_ends_block = True
    for addr, ins in zip(program.addresses(), program.instructions):
        if prev_ends_block:
            out.add(addr)
        prev_ends_block = ins.op in ("B", "BNZ", "BL", "BX", "HALT")
        if ins.op in ("B", "BNZ", "BL") or (ins.op == "MOVI" and program.contains(ins.imm)):
            out.add(ins.imm)
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_blocks_match_leader_oracle(seed):
    p = random_case(seed).program
    blocks = extract_blocks(p)
    assert {b.start for b in blocks} == leader_oracle(p)
    # contiguous partition of the image with no branch strictly inside a block
    assert blocks[0].start == p.base and blocks[-1].end == p.end - 4
    for a, b in zip(blocks, blocks[1:]):
        assert a.end + 4 == b.start
    for b in blocks:
        assert all(p.at(a).branch_kind is None for a in range(b.start, b.end, 4))


def test_lowering_examples():
    assert lower_instruction(Instruction("MOV", rd=1, ra=0), ALL) == (CopyReg(1, 0),)
    assert lower_instruction(Instruction("ADD", rd=2, ra=0, rb=1), ALL) == (MergeRegs(2, 0, 1),)
    assert lower_instruction(Instruction("MOVI", rd=4, imm=9), ALL) == (SetZero(4),)
    assert lower_instruction(Instruction("LDR", rd=3, ra=2), ALL) == (SinkCheck("load-addr", 2), LoadTag(3))
    assert lower_instruction(Instruction("STR", rd=1, ra=2), ALL) == (SinkCheck("store-addr", 2), StoreTag(1))
    assert lower_instruction(Instruction("SVC", imm=0), ALL) == (SourceApply(0, 1),)
    assert lower_instruction(Instruction("SVC", imm=1), ALL) == (SinkCheck("data-sink", 0),)
    assert lower_instruction(Instruction("SVC", imm=7), ALL) == ()
    assert lower_instruction(Instruction("BX", rd=9), ALL) == (SinkCheck("jump-target", 9),)
    assert lower_instruction(Instruction("BNZ", rd=3), ALL) == (SinkCheck("branch-cond", 3),)
    assert lower_instruction(Instruction("BL"), ALL) == (SetZero(14),)


def test_policy_prunes_disabled_sinks():
    rs = Ruleset.for_policy(DEFAULT_POLICY)
    assert lower_instruction(Instruction("LDR", rd=3, ra=2), rs) == (LoadTag(3),)
    assert lower_instruction(Instruction("SVC", imm=1), rs) == (SinkCheck("data-sink", 0),)
    assert lower_instruction(Instruction("SVC", imm=0), Ruleset.for_policy(make_policy([], {}))) == (SetZero(0),)


def test_missing_rule_is_compile_error():
    rules = dict(DEFAULT_RULES)
    del rules["SUB"]
    with pytest.raises(CompileError):
        lower_instruction(Instruction("SUB"), Ruleset(rules))


def test_foreign_block_is_compile_error():
    p = assemble("HALT")
    with pytest.raises(CompileError):
        compile_tagops(BasicBlock(0x104, 0x104, "halt"), p, ALL)


def test_single_block_program_and_text(taint_chain):
    prog = compile_program(taint_chain, Ruleset.for_policy(DEFAULT_POLICY))
    assert len(prog) == 1
    assert prog.text() == ("block 0x100: zero r2; merge r2<-r2,r2; source r0 mask 0x1; copy r1<-r0; "
                           "storetag r1; loadtag r3; copy r0<-r3; sink data-sink r0\n")
    assert compile_program(assemble("B x\nx: HALT")).text() == "block 0x100: nop\nblock 0x104: nop\n"


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_map_keys_are_block_starts(seed):
    p = random_case(seed).program
    assert set(compile_program(p).blocks) == {b.start for b in extract_blocks(p)}
    assert compile_program(p).text() == compile_program(p).text()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_coverage_of_full_and_resumed_flows(seed, period):
    case = random_case(seed)
    prog = compile_program(case.program)
    art = run(case.program, case.inputs, TraceConfig(period, 1))
    assert all(e.block_start in prog for e in art.block_sequence)
    pkts, _ = decode_stream(art.trace)
    wmap = build_waypoint_map(case.program)
    for k in [i for i, p in enumerate(pkts) if isinstance(p, ASync)][:5]:
        assert all(e.block_start in prog for e in resume_from_partial(pkts[k:], wmap, case.program, 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8))
def test_lockstep_against_oracle(seed, width):
    """Replaying each executed instruction's microcode gives the oracle's register tags after every step."""
    case = random_case(seed)
    policy = random_policy(random.Random(seed), width)
    trail = []
    art = run(case.program, case.inputs, policy=policy, width=width,
              on_step=lambda i, pc, tags: trail.append((pc, tags)))
    prog = compile_program(case.program, Ruleset.for_policy(policy))
    state = init(width, 1, policy)
    ctx = StepContext(0, 0, MemlogCursor(art.memlog), policy.sink_masks())
    violations = []
    for i, (pc, oracle_tags) in enumerate(trail):
        ctx.pc, ctx.event_index = pc, i
        for op in prog.by_pc[pc]:
            v = step(state, op, ctx)
            if v:
                violations.append(v)
        assert tuple(state.trf) == oracle_tags, f"step {i} pc 0x{pc:x}"
    assert tuple(violations) == art.oracle_report.violations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracedift.codec import ASync, Atom, BranchAddr, ContextId, ISync, decode_stream
from tracedift.cpu import TraceConfig, run, scatter_context_noise
from tracedift.errors import (FlowDesyncError, NotSynchronizedError, ProtocolError,
                              UnrecoverableTraceError, WaypointMapError)
from tracedift.flow import FlowRebuilder, build_waypoint_map, events_text, reconstruct, resume_from_partial
from tracedift.isa import assemble
from tracedift.randprog import random_case
from tracedift.records import FALL, HALT, TAKEN, FlowEvent


def rebuild(program, packets, ctx=1):
    return reconstruct(packets, build_waypoint_map(program), program, ctx)


# --- waypoint map ----------------------------------------------------------------

def test_map_direct():
    p = assemble("MOVI r1, 1\nADD r1, r1, r1\nB x\nx: HALT")
    wp = build_waypoint_map(p).next_branch(0x100)
    assert (wp.address, wp.kind, wp.target) == (0x108, "direct", 0x10C)


def test_map_halt_only():
    wmap = build_waypoint_map(assemble("HALT"))
    wp = wmap.next_branch(0x100)
    assert (wp.address, wp.kind) == (0x100, "halt")
    assert len(wmap) == 1


def test_map_kinds():
    wmap = build_waypoint_map(assemble("BL f\nHALT\nf: BX r14\n"))
    assert [wmap.next_branch(a).kind for a in (0x100, 0x104, 0x108)] == ["call", "halt", "indirect"]


def test_map_runs_off_end():
    with pytest.raises(WaypointMapError):
        build_waypoint_map(assemble("HALT\nMOVI r1, 1"))


def brute_force_next_branch(program, addr):
    a = addr
    while program.contains(a):
        if program.at(a).branch_kind is not None:
            return a
        a += 4
    return None


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_map_matches_brute_force(seed):
    p = random_case(seed).program
    wmap = build_waypoint_map(p)
    for a in p.addresses():
        wp = wmap.next_branch(a)
        assert wp.address == brute_force_next_branch(p, a)
        assert wp.address >= a
        ins = p.at(wp.address)
        assert wp.kind == ins.branch_kind
        assert wp.target == (ins.imm if ins.op in ("B", "BNZ", "BL") else None)


# --- reconstruct examples --------------------------------------------------------

def test_halt_only_reconstruction():
    p = assemble("HALT")
    assert rebuild(p, [ASync(), ISync(0x100, 1)]) == [FlowEvent(0x100, 0x100, HALT)]


def test_n_atom_then_halt():
    p = assemble("BNZ r0, L\nL: HALT")
    assert rebuild(p, [ASync(), ISync(0x100, 1), Atom(False)]) == [
        FlowEvent(0x100, 0x100, FALL), FlowEvent(0x104, 0x104, HALT)]


def test_bx_consumes_branch_address():
    p = assemble("MOVI r9, t\nBX r9\nHALT\nt: HALT")
    got = rebuild(p, [ASync(), ISync(0x100, 1), Atom(True), ContextId(1), BranchAddr(0x10C)])
    assert got == [FlowEvent(0x100, 0x104, TAKEN, 0x10C), FlowEvent(0x10C, 0x10C, HALT)]


def test_events_text():
    evs = [FlowEvent(0x100, 0x104, TAKEN, 0x10C), FlowEvent(0x10C, 0x10C, FALL), FlowEvent(0x110, 0x110, HALT)]
    assert events_text(evs) == ("block 0x00000100..0x00000104 taken->0x0000010c\n"
                                "block 0x0000010c..0x0000010c fall\n"
                                "block 0x00000110..0x00000110 halt\n")


# --- reconstruct errors ----------------------------------------------------------

LOOP = assemble("MOVI r1, 3\nMOVI r2, 1\nloop: SUB r1, r1, r2\nBNZ r1, loop\nMOVI r9, t\nBX r9\nt: HALT")


def test_atom_before_sync():
    with pytest.raises(NotSynchronizedError):
        rebuild(LOOP, [ASync(), Atom(True)])


def test_never_synchronized():
    with pytest.raises(NotSynchronizedError):
        rebuild(LOOP, [ASync(), ISync(0x100, 2)])


def test_bx_without_branch_address():
    with pytest.raises(ProtocolError):
        rebuild(LOOP, [ISync(0x100, 1), Atom(True), Atom(True), Atom(False), Atom(True), Atom(True)])
    with pytest.raises(ProtocolError):
        rebuild(LOOP, [ISync(0x100, 1), Atom(True), Atom(True), Atom(False), Atom(True)])


def test_desync_reports_both_addresses():
    with pytest.raises(FlowDesyncError) as exc:
        rebuild(LOOP, [ISync(0x100, 1), Atom(True), ISync(0x110, 1)])
    assert exc.value.expected == 0x108 and exc.value.found == 0x110
    assert "0x00000108" in str(exc.value) and "0x00000110" in str(exc.value)


def test_resync_at_cursor_is_accepted():
    got = rebuild(LOOP, [ISync(0x100, 1), Atom(True), ASync(), ISync(0x108, 1), Atom(True), Atom(False),
                         Atom(True), BranchAddr(0x118)])
    assert [e.outcome for e in got] == [TAKEN, TAKEN, FALL, TAKEN, HALT]


@pytest.mark.parametrize("pkts", [[ISync(0x100, 1), BranchAddr(0x118)],
                                  [ISync(0x100, 1), Atom(True), Atom(True), Atom(False), Atom(False)],
                                  [ISync(0x400, 1)],
                                  [ISync(0x118, 1), Atom(True)]])
def test_protocol_errors(pkts):
    with pytest.raises(ProtocolError):
        rebuild(LOOP, pkts)


def test_resume_skips_until_target_sync():
    got = resume_from_partial([Atom(True), BranchAddr(0x118), ISync(0x108, 2), Atom(True),
                               ISync(0x108, 1), Atom(False), Atom(True), BranchAddr(0x118)],
                              build_waypoint_map(LOOP), LOOP, 1)
    assert got == [FlowEvent(0x108, 0x10C, FALL), FlowEvent(0x110, 0x114, TAKEN, 0x118),
                   FlowEvent(0x118, 0x118, HALT)]


@pytest.mark.parametrize("pkts", [[], [ASync(), ISync(0x100, 2), Atom(True)], [Atom(True), Atom(False)]])
def test_resume_unrecoverable(pkts):
    with pytest.raises(UnrecoverableTraceError):
        resume_from_partial(pkts, build_waypoint_map(LOOP), LOOP, 1)


# --- properties against the simulator --------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 64), st.integers(0, 0xFFFF))
def test_oracle_equivalence(seed, period, ctx):
    case = random_case(seed)
    art = run(case.program, case.inputs, TraceConfig(period, ctx))
    pkts, diag = decode_stream(art.trace)
    assert diag.skipped_bytes == 0 and not diag.truncated_tail
    assert rebuild(case.program, pkts, ctx) == list(art.block_sequence)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_noise_invariance(seed, noise_seed):
    case = random_case(seed)
    art = run(case.program, case.inputs)
    noisy = scatter_context_noise(art.trace, 0xF00D, random.Random(noise_seed))
    assert rebuild(case.program, decode_stream(noisy)[0]) == list(art.block_sequence)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8), st.data())
def test_resume_from_every_periodic_sync(seed, period, data):
    case = random_case(seed)
    art = run(case.program, case.inputs, TraceConfig(period, 1))
    pkts, _ = decode_stream(art.trace)
    syncs = [i for i, p in enumerate(pkts) if isinstance(p, ASync)]
    k = data.draw(st.sampled_from(syncs))
    atoms_before = sum(isinstance(p, Atom) for p in pkts[:k])
    got = resume_from_partial(pkts[k:], build_waypoint_map(case.program), case.program, 1)
    assert got == list(art.block_sequence)[atoms_before:]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_atom_conservation(seed):
    case = random_case(seed)
    art = run(case.program, case.inputs)
    noisy = scatter_context_noise(art.trace, 3, random.Random(seed))
    rb = FlowRebuilder(build_waypoint_map(case.program), 1)
    events = []
    for p in decode_stream(noisy)[0]:
        events += rb.push(p)
    events += rb.finish()
    target_atoms = sum(isinstance(p, Atom) for p in decode_stream(art.trace)[0])
    assert sum(e.outcome in (TAKEN, FALL) for e in events) == rb.atoms == target_atoms

import pytest

from tracedift.isa import assemble

# SVC 0 taints r0, the taint travels through r1 and memory into r3 and back to
# r0, and SVC 1 (a data sink) fires. The first two lines only point r2 at the
# data segment (0x8000 + 0x8000 = 0x10000).
TAINT_CHAIN = """\
    MOVI r2, 0x8000
    ADD r2, r2, r2
    SVC 0
    MOV r1, r0
    STR r1, [r2+0]
    LDR r3, [r2+0]
    MOV r0, r3
    SVC 1
    HALT
"""

UNTAINTED = """\
    MOVI r2, 0x8000
    ADD r2, r2, r2
    MOVI r0, 7
    STR r0, [r2+4]
    LDR r1, [r2+4]
    MOV r0, r1
    SVC 1
    HALT
"""


@pytest.fixture
def taint_chain():
    return assemble(TAINT_CHAIN)


@pytest.fixture
def untainted():
    return assemble(UNTAINTED)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)

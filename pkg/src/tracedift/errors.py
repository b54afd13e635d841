"""Exception hierarchy shared by every stage of the pipeline.

Each class carries an ``exit_code`` so the CLI can map failures onto its
documented process exit codes without a lookup table.
"""


class DiftError(Exception):
    exit_code = 2


class ConfigError(DiftError):
    pass


class EncodingError(DiftError):
    pass


class DecodeError(DiftError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at stream offset {offset}")
        self.offset = offset


class AssemblyError(DiftError):
    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class ImageFormatError(DiftError):
    pass


class PolicyError(DiftError):
    pass


class CpuFault(DiftError):
    pass


class NonTerminationError(DiftError):
    pass


class NoiseInsertionError(DiftError):
    pass


class AnalysisError(DiftError):
    pass


class CompileError(DiftError):
    pass


class WaypointMapError(AnalysisError):
    pass


class UnrecoverableTraceError(DiftError):
    exit_code = 3


class NotSynchronizedError(UnrecoverableTraceError):
    pass


class DesyncError(DiftError):
    """Internal disagreement between trace, program and side channels."""

    exit_code = 4


class ProtocolError(DesyncError):
    pass


class FlowDesyncError(DesyncError):
    def __init__(self, expected, found):
        super().__init__(
            f"I-sync address 0x{found:08x} does not match reconstructed cursor 0x{expected:08x}"
        )
        self.expected = expected
        self.found = found


class MemlogDesyncError(DesyncError):
    def __init__(self, expected, found):
        super().__init__(f"memlog desync: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


class CoverageError(DesyncError):
    pass


class MemFault(DesyncError):
    pass

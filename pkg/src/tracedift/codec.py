"""Encoder/decoder for the PFT-subset trace byte stream and ETB dumps.

Wire format, all integers little-endian::

    A-sync          00 00 00 00 00 80
    I-sync          08 <address u32> <context u32>
    Atom            A1 (E, taken) / A0 (N, not taken)
    Branch-address  B0 <address u32> <flags u8, bit0 = exception>
    Context-ID      6E <context u32>

An ``.etb`` file is an 8-byte header (write_ptr u32, wrapped u8, three zero
pad bytes) followed by exactly 4096 bytes of circular buffer payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple, Union

from .errors import DecodeError, EncodingError

ASYNC_BYTES = b"\x00\x00\x00\x00\x00\x80"
HDR_ISYNC = 0x08
HDR_ATOM_E = 0xA1
HDR_ATOM_N = 0xA0
HDR_BRANCH = 0xB0
HDR_CONTEXT = 0x6E

ETB_SIZE = 4096
ETB_HEADER = struct.Struct("<IB3x")

_U32 = struct.Struct("<I")
_ISYNC = struct.Struct("<BII")
_BRANCH = struct.Struct("<BIB")
_CONTEXT = struct.Struct("<BI")


@dataclass(frozen=True)
class ASync:
    pass


@dataclass(frozen=True)
class ISync:
    address: int
    context: int


@dataclass(frozen=True)
class Atom:
    taken: bool


@dataclass(frozen=True)
class BranchAddr:
    address: int
    exception: bool = False


@dataclass(frozen=True)
class ContextId:
    context: int


TracePacket = Union[ASync, ISync, Atom, BranchAddr, ContextId]

# Packet length keyed by header byte; A-sync is keyed by its leading zero.
PACKET_SIZE = {0x00: 6, HDR_ISYNC: 9, HDR_ATOM_E: 1, HDR_ATOM_N: 1, HDR_BRANCH: 6, HDR_CONTEXT: 5}


@dataclass(frozen=True)
class DecodeDiag:
    skipped_bytes: int = 0
    truncated_tail: bool = False


def _check_u32(value, what):
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= 0xFFFFFFFF:
        raise EncodingError(f"{what} must be a u32, got {value!r}")


def _check_code_address(value, what):
    _check_u32(value, what)
    if value % 4:
        raise EncodingError(f"{what} 0x{value:x} is not a multiple of 4")


def encode_packet(p: TracePacket) -> bytes:
    if isinstance(p, ASync):
        return ASYNC_BYTES
    if isinstance(p, Atom):
        return bytes((HDR_ATOM_E if p.taken else HDR_ATOM_N,))
    if isinstance(p, ISync):
        _check_code_address(p.address, "I-sync address")
        _check_u32(p.context, "I-sync context")
        return _ISYNC.pack(HDR_ISYNC, p.address, p.context)
    if isinstance(p, BranchAddr):
        _check_code_address(p.address, "branch address")
        return _BRANCH.pack(HDR_BRANCH, p.address, 1 if p.exception else 0)
    if isinstance(p, ContextId):
        _check_u32(p.context, "context id")
        return _CONTEXT.pack(HDR_CONTEXT, p.context)
    raise EncodingError(f"not a trace packet: {p!r}")


def encode_packets(packets: Iterable[TracePacket]) -> bytes:
    return b"".join(encode_packet(p) for p in packets)


def find_alignment(data) -> Optional[int]:
    """Index of the first byte of the first complete A-sync, or None.

    In a run of more than five zeros the match lands on the last five
    before the 0x80, which is exactly what a left-to-right substring search
    returns.
    """
    idx = bytes(data).find(ASYNC_BYTES)
    return None if idx < 0 else idx


_E = Atom(True)
_N = Atom(False)
_ASYNC = ASync()


def _decode_run(buf, pos: int, base_offset: int, out: List[TracePacket]) -> int:
    """Decode complete packets from ``buf[pos:]`` into ``out``.

    Returns the position of the first undecoded byte (a partial packet, or
    ``len(buf)``). ``base_offset`` is the absolute stream offset of ``buf[0]``
    and is only used for error reporting.
    """
    n = len(buf)
    append = out.append
    while pos < n:
        h = buf[pos]
        if h == HDR_ATOM_E:
            append(_E)
            pos += 1
        elif h == HDR_ATOM_N:
            append(_N)
            pos += 1
        elif h == HDR_ISYNC:
            if pos + 9 > n:
                break
            _, addr, ctx = _ISYNC.unpack_from(buf, pos)
            if addr % 4:
                raise DecodeError(f"misaligned I-sync address 0x{addr:08x}", base_offset + pos)
            append(ISync(addr, ctx))
            pos += 9
        elif h == HDR_BRANCH:
            if pos + 6 > n:
                break
            _, addr, flags = _BRANCH.unpack_from(buf, pos)
            if addr % 4:
                raise DecodeError(f"misaligned branch address 0x{addr:08x}", base_offset + pos)
            if flags & ~1:
                raise DecodeError(f"reserved branch flag bits 0x{flags:02x}", base_offset + pos)
            append(BranchAddr(addr, bool(flags & 1)))
            pos += 6
        elif h == HDR_CONTEXT:
            if pos + 5 > n:
                break
            append(ContextId(_U32.unpack_from(buf, pos + 1)[0]))
            pos += 5
        elif h == 0x00:
            avail = bytes(buf[pos:pos + 6])
            if not ASYNC_BYTES.startswith(avail):
                raise DecodeError("malformed A-sync", base_offset + pos)
            if len(avail) < 6:
                break
            append(_ASYNC)
            pos += 6
        else:
            raise DecodeError(f"unknown header byte 0x{h:02x}", base_offset + pos)
    return pos


class StreamDecoder:
    """Incremental decoder: feed byte chunks, collect packets as they complete.

    With ``require_alignment`` every byte ahead of the first complete A-sync
    is discarded and counted. Chunk boundaries may fall anywhere, including
    inside a packet or inside the A-sync pattern itself.
    """

    def __init__(self, require_alignment: bool = False):
        self.aligned = not require_alignment
        self.skipped = 0
        self.offset = 0  # absolute stream offset of self._buf[0]
        self._buf = bytearray()

    def feed(self, chunk) -> List[TracePacket]:
        self._buf += chunk
        out: List[TracePacket] = []
        if not self.aligned:
            idx = find_alignment(self._buf)
            if idx is None:
                # keep a possible A-sync prefix straddling the chunk boundary
                drop = max(0, len(self._buf) - (len(ASYNC_BYTES) - 1))
                self._consume(drop)
                self.skipped += drop
                return out
            self._consume(idx)
            self.skipped += idx
            self.aligned = True
        pos = _decode_run(self._buf, 0, self.offset, out)
        self._consume(pos)
        return out

    def _consume(self, count):
        if count:
            del self._buf[:count]
            self.offset += count

    def finish(self) -> DecodeDiag:
        if not self.aligned:
            skipped = self.skipped + len(self._buf)
            return DecodeDiag(skipped_bytes=skipped, truncated_tail=False)
        return DecodeDiag(skipped_bytes=self.skipped, truncated_tail=bool(self._buf))


def decode_stream(data, require_alignment: bool = False) -> Tuple[List[TracePacket], DecodeDiag]:
    """Decode a whole byte sequence. A partial final packet is a diagnostic."""
    data = bytes(data)
    skipped = 0
    if require_alignment:
        idx = find_alignment(data)
        if idx is None:
            return [], DecodeDiag(skipped_bytes=len(data))
        skipped = idx
    packets: List[TracePacket] = []
    end = _decode_run(data, skipped, 0, packets)
    return packets, DecodeDiag(skipped_bytes=skipped, truncated_tail=end < len(data))


def packet_text(p: TracePacket) -> str:
    if isinstance(p, ASync):
        return "A-sync"
    if isinstance(p, ISync):
        return f"I-sync addr=0x{p.address:08x} ctx={p.context}"
    if isinstance(p, Atom):
        return "atom E" if p.taken else "atom N"
    if isinstance(p, BranchAddr):
        return f"branch addr=0x{p.address:08x}" + (" exception" if p.exception else "")
    return f"context-id {p.context}"


# --- ETB -------------------------------------------------------------------


@dataclass(frozen=True)
class EtbDump:
    write_ptr: int
    wrapped: bool
    payload: bytes

    def __post_init__(self):
        if len(self.payload) != ETB_SIZE:
            raise ValueError(f"ETB payload must be {ETB_SIZE} bytes, got {len(self.payload)}")
        if not 0 <= self.write_ptr < ETB_SIZE:
            raise ValueError(f"ETB write_ptr {self.write_ptr} out of range")

    def to_bytes(self) -> bytes:
        return ETB_HEADER.pack(self.write_ptr, 1 if self.wrapped else 0) + self.payload

    @classmethod
    def from_bytes(cls, data) -> "EtbDump":
        data = bytes(data)
        if len(data) != ETB_HEADER.size + ETB_SIZE:
            raise ValueError(f"ETB file must be {ETB_HEADER.size + ETB_SIZE} bytes, got {len(data)}")
        if data[5:8] != b"\x00\x00\x00":
            raise ValueError("ETB header pad bytes must be zero")
        write_ptr, wrapped = ETB_HEADER.unpack_from(data)
        if wrapped > 1:
            raise ValueError(f"ETB wrapped flag must be 0 or 1, got {wrapped}")
        return cls(write_ptr, bool(wrapped), data[ETB_HEADER.size:])


class EtbBuffer:
    """Circular 4 KB trace sink. Bytes are written in order; old bytes are overwritten."""

    def __init__(self):
        self._ram = bytearray(ETB_SIZE)
        self.write_ptr = 0
        self.wrapped = False

    def write(self, data) -> None:
        data = memoryview(bytes(data))
        if len(data) >= ETB_SIZE:
            # only the final ETB_SIZE bytes survive; replay them at the right phase
            self.write_ptr = (self.write_ptr + len(data) - ETB_SIZE) % ETB_SIZE
            self.wrapped = True
            data = data[-ETB_SIZE:]
        first = min(len(data), ETB_SIZE - self.write_ptr)
        self._ram[self.write_ptr:self.write_ptr + first] = data[:first]
        rest = len(data) - first
        if rest:
            self._ram[:rest] = data[first:]
        if self.write_ptr + len(data) >= ETB_SIZE:
            self.wrapped = True
        self.write_ptr = (self.write_ptr + len(data)) % ETB_SIZE

    def dump(self) -> EtbDump:
        return EtbDump(self.write_ptr, self.wrapped, bytes(self._ram))


def capture_etb(trace) -> EtbDump:
    buf = EtbBuffer()
    buf.write(trace)
    return buf.dump()


def linearize_etb(dump: EtbDump) -> bytes:
    """Oldest-first byte order of the retained window."""
    if dump.wrapped:
        return dump.payload[dump.write_ptr:] + dump.payload[:dump.write_ptr]
    return dump.payload[:dump.write_ptr]

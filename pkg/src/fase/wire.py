"""Host-Target Protocol frame codec.

Every frame starts with a one-byte opcode. Requests (host to target) carry
their fields in declaration order, little-endian. Responses (target to host)
are ``echo_opcode, status`` followed by a payload whose shape is a function of
the echoed opcode and the status, so frame length is always known after the
first two bytes at most.

Only the 4096-byte page payloads carry a CRC16 (big-endian, CCITT-FALSE).
"""

from __future__ import annotations

import binascii
import enum
import struct
from dataclasses import dataclass
from typing import Union

PAGE_SIZE = 4096
PPN_MASK = (1 << 44) - 1
U64 = (1 << 64) - 1

# Sentinel cause byte in a DirectPoll answer for a core with nothing latched.
NO_EVENT = 0xFF


class Op(enum.IntEnum):
    REDIRECT = 0x01
    NEXT = 0x02
    MMU_SET = 0x03
    SYNC_I = 0x04
    HFUTEX = 0x05
    REG_READ = 0x10
    REG_WRITE = 0x11
    MEM_READ = 0x12
    MEM_WRITE = 0x13
    PAGE_SET = 0x20
    PAGE_COPY = 0x21
    PAGE_READ = 0x22
    PAGE_WRITE = 0x23
    TICK = 0x30
    UTICK = 0x31
    DIRECT_REG = 0x40
    DIRECT_INJECT = 0x41
    DIRECT_POLL = 0x42


class Status(enum.IntEnum):
    OK = 0
    BAD_OPCODE = 1
    CRC_ERROR = 2
    BAD_CPU = 3
    UNALIGNED = 4
    BAD_STATE = 5
    DISABLED = 6
    BAD_PPN = 7
    REJECTED = 8
    FULL = 9


class FutexAction(enum.IntEnum):
    SET = 0
    CLEAR = 1
    CLEAR_ALL = 2


class Direction(enum.Enum):
    HOST_TO_TARGET = "h2t"
    TARGET_TO_HOST = "t2h"


# ---------------------------------------------------------------- messages


@dataclass(frozen=True)
class Redirect:
    cpu: int
    pc: int


@dataclass(frozen=True)
class Next:
    pass


@dataclass(frozen=True)
class MmuSet:
    cpu: int
    satp: int
    flush_tlb: bool


@dataclass(frozen=True)
class SyncI:
    cpu: int


@dataclass(frozen=True)
class HFutex:
    cpu: int
    action: FutexAction
    vaddr: int


@dataclass(frozen=True)
class RegRead:
    cpu: int
    idx: int


@dataclass(frozen=True)
class RegWrite:
    cpu: int
    idx: int
    data: int


@dataclass(frozen=True)
class MemRead:
    cpu: int
    paddr: int


@dataclass(frozen=True)
class MemWrite:
    cpu: int
    paddr: int
    data: int


@dataclass(frozen=True)
class PageSet:
    cpu: int
    ppn: int
    value: int


@dataclass(frozen=True)
class PageCopy:
    cpu: int
    src_ppn: int
    dst_ppn: int


@dataclass(frozen=True)
class PageRead:
    cpu: int
    ppn: int


@dataclass(frozen=True)
class PageWrite:
    cpu: int
    ppn: int
    payload: bytes


@dataclass(frozen=True)
class Tick:
    pass


@dataclass(frozen=True)
class UTick:
    cpu: int


@dataclass(frozen=True)
class DirectRegAccess:
    """Raw Reg-port action. ``idx == 32`` addresses the pc (write resumes)."""

    cpu: int
    idx: int
    wen: bool
    data: int


@dataclass(frozen=True)
class DirectInject:
    cpu: int
    inst: int


@dataclass(frozen=True)
class DirectPoll:
    cpu: int


@dataclass(frozen=True)
class Event:
    cpu: int
    cause: int
    epc: int
    tval: int


@dataclass(frozen=True)
class Response:
    opcode: int
    status: Status = Status.OK
    payload: Union[None, int, Event, bytes] = None


Request = Union[
    Redirect, Next, MmuSet, SyncI, HFutex, RegRead, RegWrite, MemRead, MemWrite,
    PageSet, PageCopy, PageRead, PageWrite, Tick, UTick,
    DirectRegAccess, DirectInject, DirectPoll,
]

# opcode -> (class, struct format of the fields after the opcode byte)
_REQUESTS: dict[int, tuple[type, str]] = {
    Op.REDIRECT: (Redirect, "<BQ"),
    Op.NEXT: (Next, "<"),
    Op.MMU_SET: (MmuSet, "<BQ?"),
    Op.SYNC_I: (SyncI, "<B"),
    Op.HFUTEX: (HFutex, "<BBQ"),
    Op.REG_READ: (RegRead, "<BB"),
    Op.REG_WRITE: (RegWrite, "<BBQ"),
    Op.MEM_READ: (MemRead, "<BQ"),
    Op.MEM_WRITE: (MemWrite, "<BQQ"),
    Op.PAGE_SET: (PageSet, "<BQQ"),
    Op.PAGE_COPY: (PageCopy, "<BQQ"),
    Op.PAGE_READ: (PageRead, "<BQ"),
    Op.PAGE_WRITE: (PageWrite, "<BQ"),  # + payload + crc
    Op.TICK: (Tick, "<"),
    Op.UTICK: (UTick, "<B"),
    Op.DIRECT_REG: (DirectRegAccess, "<BB?Q"),
    Op.DIRECT_INJECT: (DirectInject, "<BI"),
    Op.DIRECT_POLL: (DirectPoll, "<B"),
}
_OPCODE_OF = {cls: op for op, (cls, _) in _REQUESTS.items()}

# payload kinds of an OK response
_WORD, _EVENT, _PAGE = "word", "event", "page"
_RESPONSE_PAYLOAD: dict[int, str | None] = {
    Op.REDIRECT: None, Op.NEXT: _EVENT, Op.MMU_SET: None, Op.SYNC_I: None,
    Op.HFUTEX: None, Op.REG_READ: _WORD, Op.REG_WRITE: None, Op.MEM_READ: _WORD,
    Op.MEM_WRITE: None, Op.PAGE_SET: None, Op.PAGE_COPY: None,
    Op.PAGE_READ: _PAGE, Op.PAGE_WRITE: None, Op.TICK: _WORD, Op.UTICK: _WORD,
    Op.DIRECT_REG: _WORD, Op.DIRECT_INJECT: None, Op.DIRECT_POLL: _EVENT,
}
_PAYLOAD_LEN = {None: 0, _WORD: 8, _EVENT: 18, _PAGE: PAGE_SIZE + 2}
_EVENT_FMT = "<BBQQ"


class WireError(Exception):
    """A decodable-but-invalid frame. ``consumed`` bytes may be skipped."""

    status = Status.BAD_OPCODE

    def __init__(self, message: str, consumed: int = 0, opcode: int = 0):
        super().__init__(message)
        self.consumed = consumed
        self.opcode = opcode


class BadOpcode(WireError):
    status = Status.BAD_OPCODE


class CrcError(WireError):
    status = Status.CRC_ERROR


class BadCpu(WireError):
    status = Status.BAD_CPU


class Unaligned(WireError):
    status = Status.UNALIGNED


class NeedMore(Exception):
    """The buffer holds only a frame prefix; nothing was consumed."""

    def __init__(self, needed: int):
        super().__init__(f"need {needed} bytes")
        self.needed = needed


def crc16(payload: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, unreflected, no xorout."""
    # crc_hqx is the same polynomial with caller-chosen init
    return binascii.crc_hqx(payload, 0xFFFF)


def opcode_of(msg: Request) -> int:
    return _OPCODE_OF[type(msg)]


def request_length(opcode: int) -> int:
    cls, fmt = _REQUESTS[opcode]
    n = 1 + struct.calcsize(fmt)
    if opcode == Op.PAGE_WRITE:
        n += PAGE_SIZE + 2
    return n


def response_length(opcode: int, status: int) -> int:
    if status != Status.OK or opcode not in _RESPONSE_PAYLOAD:
        return 2
    return 2 + _PAYLOAD_LEN[_RESPONSE_PAYLOAD[opcode]]


def _check(msg: Request, n_cores: int | None) -> None:
    cpu = getattr(msg, "cpu", None)
    if cpu is not None:
        if not 0 <= cpu <= 0xFF:
            raise BadCpu(f"cpu {cpu} out of byte range")
        if n_cores is not None and cpu >= n_cores:
            raise BadCpu(f"cpu {cpu} >= {n_cores} cores")
    if isinstance(msg, (MemRead, MemWrite)) and msg.paddr % 8:
        raise Unaligned(f"paddr {msg.paddr:#x} not 8-byte aligned")
    if isinstance(msg, (RegRead, RegWrite)) and not 0 <= msg.idx < 32:
        raise ValueError(f"register index {msg.idx} out of range")
    if isinstance(msg, DirectRegAccess) and not 0 <= msg.idx <= 32:
        raise ValueError(f"register index {msg.idx} out of range")
    if isinstance(msg, PageWrite) and len(msg.payload) != PAGE_SIZE:
        raise ValueError(f"page payload must be {PAGE_SIZE} bytes")


def encode(msg: Request | Response, n_cores: int | None = None) -> bytes:
    """Encode a request or response into its exact frame bytes."""
    if isinstance(msg, Response):
        return _encode_response(msg)
    _check(msg, n_cores)
    op = _OPCODE_OF[type(msg)]
    if isinstance(msg, (Next, Tick)):
        return bytes([op])
    if isinstance(msg, Redirect):
        body = struct.pack("<BQ", msg.cpu, msg.pc & U64)
    elif isinstance(msg, MmuSet):
        body = struct.pack("<BQ?", msg.cpu, msg.satp & U64, msg.flush_tlb)
    elif isinstance(msg, (SyncI, UTick, DirectPoll)):
        body = struct.pack("<B", msg.cpu)
    elif isinstance(msg, HFutex):
        body = struct.pack("<BBQ", msg.cpu, int(msg.action), msg.vaddr & U64)
    elif isinstance(msg, RegRead):
        body = struct.pack("<BB", msg.cpu, msg.idx)
    elif isinstance(msg, RegWrite):
        body = struct.pack("<BBQ", msg.cpu, msg.idx, msg.data & U64)
    elif isinstance(msg, (MemRead,)):
        body = struct.pack("<BQ", msg.cpu, msg.paddr)
    elif isinstance(msg, MemWrite):
        body = struct.pack("<BQQ", msg.cpu, msg.paddr, msg.data & U64)
    elif isinstance(msg, PageSet):
        body = struct.pack("<BQQ", msg.cpu, msg.ppn & PPN_MASK, msg.value & U64)
    elif isinstance(msg, PageCopy):
        body = struct.pack("<BQQ", msg.cpu, msg.src_ppn & PPN_MASK, msg.dst_ppn & PPN_MASK)
    elif isinstance(msg, PageRead):
        body = struct.pack("<BQ", msg.cpu, msg.ppn & PPN_MASK)
    elif isinstance(msg, PageWrite):
        body = (struct.pack("<BQ", msg.cpu, msg.ppn & PPN_MASK) + bytes(msg.payload)
                + crc16(msg.payload).to_bytes(2, "big"))
    elif isinstance(msg, DirectRegAccess):
        body = struct.pack("<BB?Q", msg.cpu, msg.idx, msg.wen, msg.data & U64)
    elif isinstance(msg, DirectInject):
        body = struct.pack("<BI", msg.cpu, msg.inst & 0xFFFFFFFF)
    else:  # pragma: no cover
        raise TypeError(f"cannot encode {msg!r}")
    return bytes([op]) + body


def _encode_response(resp: Response) -> bytes:
    head = bytes([resp.opcode & 0xFF, int(resp.status)])
    if resp.status != Status.OK:
        return head
    kind = _RESPONSE_PAYLOAD.get(resp.opcode)
    if kind is None:
        return head
    if kind == _WORD:
        return head + struct.pack("<Q", resp.payload & U64)
    if kind == _EVENT:
        ev = resp.payload
        return head + struct.pack(_EVENT_FMT, ev.cpu, ev.cause, ev.epc & U64, ev.tval & U64)
    page = bytes(resp.payload)
    if len(page) != PAGE_SIZE:
        raise ValueError(f"page payload must be {PAGE_SIZE} bytes")
    return head + page + crc16(page).to_bytes(2, "big")


def decode(buf: bytes | bytearray | memoryview, direction: Direction,
           n_cores: int | None = None) -> tuple[Request | Response, int]:
    """Decode one frame from the front of ``buf``.

    Returns ``(message, consumed)``. Raises :class:`NeedMore` for a partial
    frame and a :class:`WireError` subclass for a complete but invalid one.
    """
    if not buf:
        raise NeedMore(1)
    if direction is Direction.TARGET_TO_HOST:
        return _decode_response(buf)
    op = buf[0]
    if op not in _REQUESTS:
        raise BadOpcode(f"unknown opcode {op:#04x}", consumed=1, opcode=op)
    n = request_length(op)
    if len(buf) < n:
        raise NeedMore(n)
    cls, fmt = _REQUESTS[op]
    fields = struct.unpack_from(fmt, buf, 1)
    if op == Op.PAGE_WRITE:
        payload = bytes(buf[10:10 + PAGE_SIZE])
        crc = int.from_bytes(buf[10 + PAGE_SIZE:n], "big")
        if crc16(payload) != crc:
            raise CrcError("page payload CRC mismatch", consumed=n, opcode=op)
        msg = PageWrite(fields[0], fields[1], payload)
    elif op == Op.HFUTEX:
        try:
            action = FutexAction(fields[1])
        except ValueError:
            raise BadOpcode(f"unknown hfutex action {fields[1]}", consumed=n, opcode=op) from None
        msg = HFutex(fields[0], action, fields[2])
    else:
        msg = cls(*fields)
    try:
        _check(msg, n_cores)
    except WireError as exc:
        exc.consumed, exc.opcode = n, op
        raise
    except ValueError as exc:
        raise BadOpcode(str(exc), consumed=n, opcode=op) from None
    return msg, n


def _decode_response(buf) -> tuple[Response, int]:
    if len(buf) < 2:
        raise NeedMore(2)
    op, status = buf[0], buf[1]
    try:
        status = Status(status)
    except ValueError:
        raise BadOpcode(f"unknown status {status}", consumed=2, opcode=op) from None
    n = response_length(op, status)
    if len(buf) < n:
        raise NeedMore(n)
    kind = _RESPONSE_PAYLOAD.get(op) if status == Status.OK else None
    if kind is None:
        payload = None
    elif kind == _WORD:
        payload = struct.unpack_from("<Q", buf, 2)[0]
    elif kind == _EVENT:
        payload = Event(*struct.unpack_from(_EVENT_FMT, buf, 2))
    else:
        payload = bytes(buf[2:2 + PAGE_SIZE])
        if crc16(payload) != int.from_bytes(buf[2 + PAGE_SIZE:n], "big"):
            raise CrcError("page payload CRC mismatch", consumed=n, opcode=op)
    return Response(op, status, payload), n

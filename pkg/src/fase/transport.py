"""Byte channel between host runtime and target controller.

Every byte that crosses the channel is charged to a :class:`TrafficLedger`
and, on the in-process backend, advances a shared simulated clock by
``bits_per_frame / baud`` seconds while the target keeps running.
"""

from __future__ import annotations

import math
import socket
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import wire
from .controller import TargetDriver
from .wire import Op

DEFAULT_BAUD = 921600


class ChannelClosed(Exception):
    pass


class ChannelTimeout(Exception):
    pass


class ProtocolError(Exception):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    baud: int = DEFAULT_BAUD
    data_bits: int = 8
    parity: bool = False
    stop_bits: int = 2
    backend: str = "inprocess"
    latency_extra: Fraction = Fraction(0)
    timeout: Optional[float] = 30.0

    def __post_init__(self):
        if self.baud <= 0:
            raise ValueError("baud must be positive")
        if self.backend not in ("inprocess", "socket", "serial"):
            raise ValueError(f"unknown backend {self.backend!r}")

    @property
    def bits_per_frame(self) -> int:
        return 1 + self.data_bits + int(self.parity) + self.stop_bits

    @classmethod
    def parse_frame(cls, spec: str, **kw) -> "ChannelConfig":
        """Build from a ``"8N2"``-style frame string."""
        spec = spec.upper()
        if len(spec) != 3 or spec[1] not in "NEO":
            raise ValueError(f"bad frame spec {spec!r}")
        return cls(data_bits=int(spec[0]), parity=spec[1] != "N", stop_bits=int(spec[2]), **kw)


def frame_time(n_bytes: int, cfg: ChannelConfig) -> Fraction:
    """Exact wire time in seconds for ``n_bytes`` serial frames."""
    if n_bytes < 0:
        raise ValueError("negative byte count")
    if n_bytes == 0:
        return Fraction(0)
    return Fraction(n_bytes * cfg.bits_per_frame, cfg.baud) + Fraction(cfg.latency_extra)


def opcode_name(opcode: int) -> str:
    try:
        return Op(opcode).name
    except ValueError:
        return f"0x{opcode:02x}"


@dataclass
class TrafficLedger:
    bytes_sent: int = 0
    bytes_received: int = 0
    by_opcode: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    frames_by_opcode: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    by_attribution: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    @property
    def total(self) -> int:
        return self.bytes_sent + self.bytes_received

    def charge(self, frame: bytes, sent: bool, label: str) -> None:
        name = opcode_name(frame[0])
        n = len(frame)
        if sent:
            self.bytes_sent += n
            self.frames_by_opcode[name] += 1
        else:
            self.bytes_received += n
        self.by_opcode[name] += n
        self.by_attribution[label] += n

    def snapshot(self) -> "TrafficLedger":
        return TrafficLedger(self.bytes_sent, self.bytes_received,
                             defaultdict(int, self.by_opcode),
                             defaultdict(int, self.frames_by_opcode),
                             defaultdict(int, self.by_attribution))

    def frames(self, op: Op) -> int:
        return self.frames_by_opcode.get(op.name, 0)


def split_frames(data: bytes, direction: wire.Direction) -> list[bytes]:
    """Split a buffer of complete frames (undecodable bytes become 1-byte frames)."""
    out = []
    i = 0
    while i < len(data):
        op = data[i]
        if direction is wire.Direction.HOST_TO_TARGET:
            try:
                n = wire.request_length(op)
            except KeyError:
                n = 1
        else:
            if i + 1 >= len(data):
                raise ProtocolError("truncated response frame")
            n = wire.response_length(op, data[i + 1])
        if i + n > len(data):
            raise ProtocolError("truncated frame")
        out.append(bytes(data[i:i + n]))
        i += n
    return out


class Channel:
    """Host endpoint. Subclasses implement ``_send`` and ``_recv_frame``."""

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self.ledger = TrafficLedger()
        self.clock = Fraction(0)
        self._attr: list[str] = []
        self._stash: list[bytes] = []
        self.closed = False

    # ------------------------------------------------------------ attribution
    @property
    def attribution(self) -> str:
        return self._attr[-1] if self._attr else "idle"

    def push_attribution(self, label: str) -> None:
        self._attr.append(label)

    def pop_attribution(self) -> str:
        if not self._attr:
            raise AssertionError("pop_attribution on empty stack")
        return self._attr.pop()

    # -------------------------------------------------------------- transfer
    def _check_open(self):
        if self.closed:
            raise ChannelClosed("channel closed")

    def write(self, data: bytes) -> None:
        self._check_open()
        frames = split_frames(data, wire.Direction.HOST_TO_TARGET)
        for f in frames:
            self.ledger.charge(f, True, self.attribution)
        self._send(bytes(data))

    def read_frame(self, block: bool = True, slice_ticks: Optional[int] = None) -> Optional[bytes]:
        """Next response frame, or None if none can arrive without host action.

        With ``slice_ticks`` a blocking read gives up (returning None) after
        roughly that much target time.
        """
        self._check_open()
        frame = self._recv_frame(block, slice_ticks)
        if frame is not None:
            self.ledger.charge(frame, False, self.attribution)
        return frame

    def exchange(self, data: bytes) -> bytes:
        """Send complete request frames and return their responses, in order.

        Responses to a Next parked earlier that arrive meanwhile are stashed
        for :meth:`next_unsolicited`.
        """
        frames = split_frames(data, wire.Direction.HOST_TO_TARGET)
        self.write(data)
        out = bytearray()
        for f in frames:
            while True:
                resp = self.read_frame(block=True)
                if resp is None:
                    raise ProtocolError(f"no response to {opcode_name(f[0])}: target idle")
                if resp[0] == f[0] or f[0] not in wire._REQUESTS:
                    out.extend(resp)
                    break
                if resp[0] == Op.NEXT:
                    self._stash.append(resp)
                    continue
                raise ProtocolError(f"unexpected response {opcode_name(resp[0])} to {opcode_name(f[0])}")
        return bytes(out)

    def next_unsolicited(self, block: bool = True, slice_ticks: Optional[int] = None) -> Optional[bytes]:
        if self._stash:
            return self._stash.pop(0)
        return self.read_frame(block, slice_ticks)

    def idle_until(self, seconds: Fraction) -> None:
        """Let simulated time pass with no traffic (no-op on real backends)."""

    def close(self) -> None:
        self.closed = True

    def _send(self, data: bytes) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    def _recv_frame(self, block: bool, slice_ticks: Optional[int] = None) -> Optional[bytes]:  # pragma: no cover
        raise NotImplementedError


class InProcessChannel(Channel):
    """Deterministic co-simulation: the controller lives in this process."""

    def __init__(self, cfg: ChannelConfig, driver: TargetDriver, ns_per_tick: int = 10):
        super().__init__(cfg)
        self.driver = driver
        self.tick_period = Fraction(ns_per_tick, 10 ** 9)
        self.byte_time = frame_time(1, ChannelConfig(cfg.baud, cfg.data_bits, cfg.parity, cfg.stop_bits))

    def _spend(self, n_bytes: int) -> None:
        self.clock += frame_time(n_bytes, self.cfg)
        self.driver.advance_to_tick(math.floor(self.clock / self.tick_period))
        self._sync_clock()

    def _sync_clock(self):
        t = self.driver.target.tick * self.tick_period
        if t > self.clock:
            self.clock = t

    def _send(self, data: bytes) -> None:
        self._spend(len(data))
        self.driver.feed(data)
        busy = self.driver.take_busy_ticks()
        if busy:
            self.driver.advance_to_tick(self.driver.target.tick + busy)
            self._sync_clock()

    def _recv_frame(self, block: bool, slice_ticks: Optional[int] = None) -> Optional[bytes]:
        outbox = self.driver.outbox
        if not outbox:
            if not block:
                return None
            self.driver.run_until_output(slice_ticks)
            self._sync_clock()
            if not outbox:
                return None
        frame = outbox.pop(0)
        self._spend(len(frame))
        return frame

    def idle_until(self, seconds: Fraction) -> None:
        if seconds > self.clock:
            self.clock = seconds
            self.driver.advance_to_tick(math.floor(self.clock / self.tick_period))
            self._sync_clock()

    def close(self) -> None:
        super().close()


# ------------------------------------------------------------------ sockets

_LEN = struct.Struct("<I")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ChannelClosed("peer closed")
        buf.extend(chunk)
    return bytes(buf)


def send_prefixed(sock: socket.socket, frame: bytes) -> None:
    sock.sendall(_LEN.pack(len(frame)) + frame)


def recv_prefixed(sock: socket.socket) -> bytes:
    (n,) = _LEN.unpack(_recv_exact(sock, 4))
    return _recv_exact(sock, n)


class SocketChannel(Channel):
    """Length-prefixed frames over a local stream socket."""

    def __init__(self, cfg: ChannelConfig, address):
        super().__init__(cfg)
        family = socket.AF_UNIX if isinstance(address, str) else socket.AF_INET
        self.sock = socket.socket(family, socket.SOCK_STREAM)
        try:
            self.sock.connect(address)
        except OSError as exc:
            self.sock.close()
            raise ChannelClosed(f"cannot connect to {address}: {exc.strerror or exc}") from None

    def _send(self, data: bytes) -> None:
        for f in split_frames(data, wire.Direction.HOST_TO_TARGET):
            send_prefixed(self.sock, f)
        self.clock += frame_time(len(data), self.cfg)

    def _recv_frame(self, block: bool, slice_ticks: Optional[int] = None) -> Optional[bytes]:
        sliced = block and slice_ticks is not None
        self.sock.settimeout(0.05 if sliced else self.cfg.timeout if block else 0.0)
        try:
            frame = recv_prefixed(self.sock)
        except (BlockingIOError, socket.timeout):
            if block and not sliced:
                raise ChannelTimeout("no response before timeout") from None
            return None
        self.clock += frame_time(len(frame), self.cfg)
        return frame

    def close(self) -> None:
        super().close()
        self.sock.close()


class TargetServer:
    """Serve a :class:`TargetDriver` to one socket client.

    The target only runs while a Next is parked and no request bytes are
    waiting, so host think-time stays free of simulated time.
    """

    def __init__(self, driver: TargetDriver, listener: socket.socket, chunk: int = 20000):
        self.driver = driver
        self.listener = listener
        self.chunk = chunk
        self.stopped = threading.Event()

    def serve_one(self) -> None:
        conn, _ = self.listener.accept()
        with conn:
            while not self.stopped.is_set():
                ctl = self.driver.controller
                busy_target = ctl.parked_next and any(not c.stop_fetch for c in self.driver.target.cores)
                conn.settimeout(0.0 if busy_target else 0.5)
                try:
                    frame = recv_prefixed(conn)
                except (BlockingIOError, socket.timeout):
                    if busy_target:
                        self.driver.run_until_output(self.chunk)
                        self._flush(conn)
                    continue
                except (ChannelClosed, ConnectionError):
                    return
                self.driver.feed(frame)
                busy = self.driver.take_busy_ticks()
                self.driver.advance_to_tick(self.driver.target.tick + busy)
                self._flush(conn)

    def _flush(self, conn):
        outbox = self.driver.outbox
        while outbox:
            send_prefixed(conn, outbox.pop(0))


class SerialChannel(Channel):
    """Raw frames on a character device (requires pyserial)."""

    def __init__(self, cfg: ChannelConfig, port: str):
        super().__init__(cfg)
        import serial  # optional dependency

        parity = serial.PARITY_EVEN if cfg.parity else serial.PARITY_NONE
        self.port = serial.serial_for_url(
            port, baudrate=cfg.baud, bytesize=cfg.data_bits, parity=parity,
            stopbits=cfg.stop_bits, timeout=cfg.timeout)

    def _send(self, data: bytes) -> None:
        self.port.write(data)
        self.clock += frame_time(len(data), self.cfg)

    def _read(self, n):
        data = self.port.read(n)
        if len(data) < n:
            raise ChannelTimeout("serial read timed out")
        return data

    def _recv_frame(self, block: bool, slice_ticks: Optional[int] = None) -> Optional[bytes]:
        if (not block or slice_ticks is not None) and not self.port.in_waiting:
            return None
        head = self._read(2)
        rest = self._read(wire.response_length(head[0], head[1]) - 2)
        frame = head + rest
        self.clock += frame_time(len(frame), self.cfg)
        return frame

    def close(self) -> None:
        super().close()
        self.port.close()

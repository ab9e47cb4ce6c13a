import os
import socket
import threading
from fractions import Fraction

import pytest

from fase import wire
from fase.client import HtpClient, HtpError
from fase.controller import Controller, TargetDriver
from fase.session import in_process
from fase.target import Target
from fase.transport import (ChannelConfig, ChannelTimeout, ProtocolError, SocketChannel, TargetServer,
                            TrafficLedger, frame_time, split_frames)
from fase.wire import Op, Status


def test_frame_time_exact():
    cfg = ChannelConfig.parse_frame("8N2", baud=1_000_000)
    assert cfg.bits_per_frame == 11
    assert frame_time(104, cfg) == Fraction(1144, 10 ** 6)


def test_frame_time_parity_and_latency():
    cfg = ChannelConfig.parse_frame("7E1", baud=9600, latency_extra=Fraction(1, 1000))
    assert cfg.bits_per_frame == 10
    assert frame_time(96, cfg) == Fraction(96 * 10, 9600) + Fraction(1, 1000)
    assert frame_time(0, cfg) == 0


@pytest.mark.parametrize("bad", ["8X2", "8N", "", "N82"])
def test_bad_frame_spec(bad):
    with pytest.raises(ValueError):
        ChannelConfig.parse_frame(bad)


def test_bad_config():
    with pytest.raises(ValueError):
        ChannelConfig(baud=0)
    with pytest.raises(ValueError):
        ChannelConfig(backend="carrier-pigeon")


def test_ledger_charges_by_opcode_and_label():
    led = TrafficLedger()
    led.charge(wire.encode(wire.RegRead(0, 1)), True, "dispatch")
    led.charge(wire.encode(wire.Response(Op.REG_READ, Status.OK, 5)), False, "dispatch")
    led.charge(wire.encode(wire.Next()), True, "idle")
    assert led.bytes_sent == 4 and led.bytes_received == 10 and led.total == 14
    assert led.by_opcode["REG_READ"] == 13
    assert led.frames(Op.REG_READ) == 1
    assert led.by_attribution == {"dispatch": 13, "idle": 1}
    snap = led.snapshot()
    led.charge(wire.encode(wire.Tick()), True, "x")
    assert snap.total == 14


def test_split_frames():
    data = wire.encode(wire.Tick()) + wire.encode(wire.MemRead(0, 8)) + wire.encode(wire.Next())
    assert [len(f) for f in split_frames(data, wire.Direction.HOST_TO_TARGET)] == [1, 10, 1]
    with pytest.raises(ProtocolError):
        split_frames(data[:-2], wire.Direction.HOST_TO_TARGET)


def test_session_ledger_matches_encoded_sizes():
    s = in_process(1)
    s.client.reg_write(0, 5, 42)
    assert s.client.reg_read(0, 5) == 42
    assert s.ledger.bytes_sent == 11 + 3
    assert s.ledger.bytes_received == 2 + 10


def test_clock_advances_by_wire_time():
    cfg = ChannelConfig.parse_frame("8N2", baud=115200)
    s = in_process(1, channel=cfg)
    s.client.tick()
    assert s.channel.clock == frame_time(1, cfg) + frame_time(10, cfg)


def test_attribution_stack():
    s = in_process(1)
    ch = s.channel
    assert ch.attribution == "idle"
    ch.push_attribution("loader")
    ch.push_attribution("page_fault")
    s.client.tick()
    assert ch.pop_attribution() == "page_fault"
    s.client.tick()
    ch.pop_attribution()
    with pytest.raises(AssertionError):
        ch.pop_attribution()
    assert ch.ledger.by_attribution == {"page_fault": 11, "loader": 11}


def test_error_status_raises():
    s = in_process(1)
    with pytest.raises(HtpError) as exc:
        s.client.page_set(0, 0x1, 0)   # outside memory
    assert exc.value.status == Status.BAD_PPN


def test_direct_mode_costs_more_bytes():
    htp, direct = in_process(1), in_process(1, direct=True)
    for s in (htp, direct):
        s.client.mem_write(0, s.mem_base, 7)
        assert s.client.mem_read(0, s.mem_base) == 7
    assert direct.ledger.total > htp.ledger.total


def _serve(tmp_path):
    path = os.path.join(tmp_path, "t.sock")
    target = Target(1, mem_size=1 << 20)
    ctl = Controller(target)
    lst = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    lst.bind(path)
    lst.listen(1)
    server = TargetServer(TargetDriver(target, ctl), lst)
    th = threading.Thread(target=server.serve_one, daemon=True)
    th.start()
    return path, server, th, lst


def test_socket_backend_roundtrip(tmp_path):
    path, server, th, lst = _serve(tmp_path)
    ch = SocketChannel(ChannelConfig(backend="socket", timeout=5), path)
    client = HtpClient(ch, 1)
    base = 0x8000_0000
    client.mem_write(0, base + 8, 0x1234)
    assert client.mem_read(0, base + 8) == 0x1234
    page = bytes(range(256)) * 16
    client.page_write(0, (base >> 12) + 1, page)
    assert client.page_read(0, (base >> 12) + 1) == page
    # no core runs, so a parked Next stays unanswered
    assert client.next_event(block=True, slice_ticks=100) is None
    assert ch.ledger.total > 0
    ch.close()
    server.stopped.set()
    th.join(2)
    lst.close()


def test_socket_timeout(tmp_path):
    path = os.path.join(tmp_path, "mute.sock")
    lst = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    lst.bind(path)
    lst.listen(1)
    ch = SocketChannel(ChannelConfig(backend="socket", timeout=0.2), path)
    with pytest.raises(ChannelTimeout):
        HtpClient(ch, 1).tick()
    ch.close()
    lst.close()

import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from fase import wire
from fase.selftest.msggen import random_message, random_request, random_response
from fase.wire import Direction, Op, Status


def crc_bitwise(data: bytes) -> int:
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else crc << 1
            crc &= 0xFFFF
    return crc


def test_crc_check_value():
    # the standard check string for CCITT-FALSE
    assert wire.crc16(b"123456789") == 0x29B1


@given(st.binary(max_size=512))
def test_crc_matches_bitwise(data):
    assert wire.crc16(data) == crc_bitwise(data)


EXPECTED_REQUEST_LEN = {
    Op.REDIRECT: 10, Op.NEXT: 1, Op.MMU_SET: 11, Op.SYNC_I: 2, Op.HFUTEX: 11,
    Op.REG_READ: 3, Op.REG_WRITE: 11, Op.MEM_READ: 10, Op.MEM_WRITE: 18,
    Op.PAGE_SET: 18, Op.PAGE_COPY: 18, Op.PAGE_READ: 10, Op.PAGE_WRITE: 4108,
    Op.TICK: 1, Op.UTICK: 2, Op.DIRECT_REG: 12, Op.DIRECT_INJECT: 6, Op.DIRECT_POLL: 2,
}


@pytest.mark.parametrize("op", list(Op))
def test_request_lengths(op):
    assert wire.request_length(op) == EXPECTED_REQUEST_LEN[op]
    msg = random_request(random.Random(op), op)
    assert len(wire.encode(msg)) == EXPECTED_REQUEST_LEN[op]


def test_response_lengths():
    assert wire.response_length(Op.REDIRECT, Status.OK) == 2
    assert wire.response_length(Op.REG_READ, Status.OK) == 10
    assert wire.response_length(Op.NEXT, Status.OK) == 20
    assert wire.response_length(Op.PAGE_READ, Status.OK) == 4100
    # errors never carry a payload
    assert wire.response_length(Op.PAGE_READ, Status.CRC_ERROR) == 2


def test_field_layout_is_little_endian():
    raw = wire.encode(wire.MemWrite(1, 0x8000_1000, 0x1122334455667788))
    assert raw == bytes([Op.MEM_WRITE, 1]) + struct.pack("<QQ", 0x8000_1000, 0x1122334455667788)
    raw = wire.encode(wire.HFutex(2, wire.FutexAction.CLEAR, 0xABC))
    assert raw == bytes([Op.HFUTEX, 2, 1]) + (0xABC).to_bytes(8, "little")


def test_page_write_crc_trailer_big_endian():
    page = bytes(range(256)) * 16
    raw = wire.encode(wire.PageWrite(0, 0x80001, page))
    assert raw[-2:] == crc_bitwise(page).to_bytes(2, "big")


def test_event_response_layout():
    ev = wire.Event(3, 8, 0x1000, 0xdead)
    raw = wire.encode(wire.Response(Op.NEXT, Status.OK, ev))
    assert raw == bytes([Op.NEXT, 0, 3, 8]) + struct.pack("<QQ", 0x1000, 0xdead)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_random_roundtrip(seed):
    rng = random.Random(seed)
    msg = random_message(rng)
    d = Direction.TARGET_TO_HOST if isinstance(msg, wire.Response) else Direction.HOST_TO_TARGET
    raw = wire.encode(msg)
    back, used = wire.decode(raw + b"\x00\x01", d)
    assert back == msg and used == len(raw)


def test_partial_frames_need_more():
    raw = wire.encode(wire.RegWrite(0, 5, 7))
    for cut in range(len(raw)):
        with pytest.raises(wire.NeedMore):
            wire.decode(raw[:cut], Direction.HOST_TO_TARGET)


def test_bad_opcode_consumes_one_byte():
    with pytest.raises(wire.BadOpcode) as exc:
        wire.decode(b"\x7f\x00", Direction.HOST_TO_TARGET)
    assert exc.value.consumed == 1


def test_crc_error_on_corrupt_page():
    raw = bytearray(wire.encode(wire.PageWrite(0, 1, bytes(4096))))
    raw[100] ^= 0x10
    with pytest.raises(wire.CrcError) as exc:
        wire.decode(bytes(raw), Direction.HOST_TO_TARGET)
    assert exc.value.consumed == 4108


def test_cpu_range_checked():
    with pytest.raises(wire.BadCpu):
        wire.encode(wire.Redirect(4, 0), n_cores=4)
    raw = wire.encode(wire.Redirect(4, 0))
    with pytest.raises(wire.BadCpu):
        wire.decode(raw, Direction.HOST_TO_TARGET, n_cores=2)


def test_unaligned_mem_access_rejected():
    with pytest.raises(wire.Unaligned):
        wire.encode(wire.MemRead(0, 0x1004))


def test_unknown_hfutex_action():
    raw = bytes([Op.HFUTEX, 0, 9]) + bytes(8)
    with pytest.raises(wire.BadOpcode):
        wire.decode(raw, Direction.HOST_TO_TARGET)


def test_response_error_roundtrip():
    resp = random_response(random.Random(0), Op.PAGE_READ)
    for status in Status:
        r = wire.Response(Op.PAGE_READ, status, resp.payload if status == Status.OK else None)
        back, n = wire.decode(wire.encode(r), Direction.TARGET_TO_HOST)
        assert back == r

"""Random well-formed protocol messages for round-trip checks."""

from __future__ import annotations

import random

from .. import wire
from ..wire import Op

_U64 = (1 << 64) - 1


def _u64(rng: random.Random) -> int:
    r = rng.random()
    if r < 0.1:
        return 0
    if r < 0.2:
        return _U64
    return rng.getrandbits(64)


def random_request(rng: random.Random, op: int, n_cores: int = 4) -> wire.Request:
    cpu = rng.randrange(n_cores)
    ppn = lambda: rng.getrandbits(44)
    if op == Op.REDIRECT:
        return wire.Redirect(cpu, _u64(rng))
    if op == Op.NEXT:
        return wire.Next()
    if op == Op.MMU_SET:
        return wire.MmuSet(cpu, _u64(rng), rng.random() < 0.5)
    if op == Op.SYNC_I:
        return wire.SyncI(cpu)
    if op == Op.HFUTEX:
        return wire.HFutex(cpu, rng.choice(list(wire.FutexAction)), _u64(rng))
    if op == Op.REG_READ:
        return wire.RegRead(cpu, rng.randrange(32))
    if op == Op.REG_WRITE:
        return wire.RegWrite(cpu, rng.randrange(32), _u64(rng))
    if op == Op.MEM_READ:
        return wire.MemRead(cpu, _u64(rng) & ~7)
    if op == Op.MEM_WRITE:
        return wire.MemWrite(cpu, _u64(rng) & ~7, _u64(rng))
    if op == Op.PAGE_SET:
        return wire.PageSet(cpu, ppn(), _u64(rng))
    if op == Op.PAGE_COPY:
        return wire.PageCopy(cpu, ppn(), ppn())
    if op == Op.PAGE_READ:
        return wire.PageRead(cpu, ppn())
    if op == Op.PAGE_WRITE:
        return wire.PageWrite(cpu, ppn(), rng.randbytes(wire.PAGE_SIZE))
    if op == Op.TICK:
        return wire.Tick()
    if op == Op.UTICK:
        return wire.UTick(cpu)
    if op == Op.DIRECT_REG:
        return wire.DirectRegAccess(cpu, rng.randrange(33), rng.random() < 0.5, _u64(rng))
    if op == Op.DIRECT_INJECT:
        return wire.DirectInject(cpu, rng.getrandbits(32))
    if op == Op.DIRECT_POLL:
        return wire.DirectPoll(cpu)
    raise ValueError(f"unknown opcode {op}")


def random_response(rng: random.Random, op: int) -> wire.Response:
    if rng.random() < 0.2:
        return wire.Response(op, rng.choice([s for s in wire.Status if s != wire.Status.OK]))
    kind = wire._RESPONSE_PAYLOAD[op]
    if kind is None:
        payload = None
    elif kind == "word":
        payload = _u64(rng)
    elif kind == "event":
        payload = wire.Event(rng.randrange(256), rng.randrange(256), _u64(rng), _u64(rng))
    else:
        payload = rng.randbytes(wire.PAGE_SIZE)
    return wire.Response(op, wire.Status.OK, payload)


def random_message(rng: random.Random, n_cores: int = 4):
    op = rng.choice(list(Op))
    if rng.random() < 0.5:
        return random_request(rng, op, n_cores)
    return random_response(rng, op)

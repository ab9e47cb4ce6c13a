"""Self-checks runnable from the CLI: ISA differential and codec round trips."""

from __future__ import annotations

import random

from .. import wire
from ..target import Target
from .msggen import random_message
from .progen import CODE_BASE, DATA_OFFSET, DATA_SIZE, Program, generate
from .refmodel import RefMachine


def run_on_target(prog: Program, limit: int = 100_000):
    """Execute on the simulator in bare mode until it traps."""
    t = Target(1, mem_size=1 << 20, mem_base=CODE_BASE)
    t.mem.write(CODE_BASE, prog.image())
    core = t.cores[0]
    core.x[:] = list(prog.regs)
    core.resume(CODE_BASE)
    t.run(limit)
    latch = core.trap_latch
    data = t.mem.read(CODE_BASE + DATA_OFFSET, DATA_SIZE)
    return list(core.x), (latch.cause, latch.epc) if latch else None, data


def run_on_reference(prog: Program, limit: int = 100_000):
    m = RefMachine(CODE_BASE, prog.image())
    m.x[:] = list(prog.regs)
    reason = m.run(limit)
    return list(m.x), reason, m.pc, bytes(m.mem[DATA_OFFSET:DATA_OFFSET + DATA_SIZE])


def compare_program(prog: Program) -> list[str]:
    tx, trap, tdata = run_on_target(prog)
    rx, reason, rpc, rdata = run_on_reference(prog)
    diffs = []
    if reason != "ecall" or trap is None or trap[0] != 8 or trap[1] != rpc:
        diffs.append(f"stop differs: target {trap}, reference {reason} at {rpc:#x}")
    for r in range(32):
        if tx[r] != rx[r]:
            diffs.append(f"x{r}: target {tx[r]:#x} reference {rx[r]:#x}")
    if tdata != rdata:
        first = next(i for i in range(DATA_SIZE) if tdata[i] != rdata[i])
        diffs.append(f"data differs from offset {first:#x}")
    return diffs


def isa_differential(n_programs: int = 50, seed: int = 1, max_len: int = 200) -> list[str]:
    rng = random.Random(seed)
    bad = []
    for i in range(n_programs):
        prog = generate(rng, max_len)
        for d in compare_program(prog):
            bad.append(f"program {i}: {d}")
    return bad


def codec_roundtrip(n: int, seed: int = 1, n_cores: int = 4) -> int:
    rng = random.Random(seed)
    failures = 0
    for _ in range(n):
        msg = random_message(rng, n_cores)
        direction = (wire.Direction.TARGET_TO_HOST if isinstance(msg, wire.Response)
                     else wire.Direction.HOST_TO_TARGET)
        raw = wire.encode(msg, n_cores)
        back, used = wire.decode(raw, direction, n_cores)
        if back != msg or used != len(raw):
            failures += 1
    return failures

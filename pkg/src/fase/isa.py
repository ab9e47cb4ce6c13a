"""RV64IMA + Zicsr + Zifencei decoder.

``decode(word)`` returns a closure ``f(core, pc) -> next_pc`` with all operand
fields pre-extracted, so the hot loop in :mod:`fase.target` only pays one call
per retired instruction. Registers hold unsigned 64-bit values.
"""

from __future__ import annotations

from .asm import CSR_CYCLE, CSR_INSTRET, CSR_SATP, CSR_TIME

M64 = (1 << 64) - 1
M32 = 0xFFFFFFFF
SIGN64 = 1 << 63


class Trap(Exception):
    def __init__(self, cause: int, tval: int = 0):
        super().__init__(cause, tval)
        self.cause = cause
        self.tval = tval


# RISC-V exception codes (privileged spec, mcause/scause values)
class Cause:
    MISALIGNED_FETCH = 0
    ACCESS_FAULT_FETCH = 1
    ILLEGAL_INSTRUCTION = 2
    BREAKPOINT = 3
    MISALIGNED_LOAD = 4
    ACCESS_FAULT_LOAD = 5
    MISALIGNED_STORE = 6
    ACCESS_FAULT_STORE = 7
    ECALL_FROM_U = 8
    PAGE_FAULT_FETCH = 12
    PAGE_FAULT_LOAD = 13
    PAGE_FAULT_STORE = 15


def sx64(v: int) -> int:
    return v - (1 << 64) if v & SIGN64 else v


def sx32(v: int) -> int:
    v &= M32
    return v - (1 << 32) if v & 0x80000000 else v


def _imm_i(w):
    return sx32(w) >> 20


def _imm_s(w):
    return ((sx32(w) >> 25) << 5) | ((w >> 7) & 0x1F)


def _imm_b(w):
    return ((sx32(w) >> 31) << 12) | (((w >> 7) & 1) << 11) | (((w >> 25) & 0x3F) << 5) | (((w >> 8) & 0xF) << 1)


def _imm_j(w):
    return ((sx32(w) >> 31) << 20) | (((w >> 12) & 0xFF) << 12) | (((w >> 20) & 1) << 11) | (((w >> 21) & 0x3FF) << 1)


def _illegal(word):
    def f(c, pc):
        raise Trap(Cause.ILLEGAL_INSTRUCTION, word)
    return f


def _nop(c, pc):
    return pc + 4


def is_control_transfer(word: int) -> bool:
    return (word & 0x7F) in (0x63, 0x6F, 0x67)


def _div(a, b):
    a, b = sx64(a), sx64(b)
    if b == 0:
        return M64
    if a == -SIGN64 and b == -1:
        return SIGN64
    q = abs(a) // abs(b)
    return (-q if (a < 0) != (b < 0) else q) & M64


def _rem(a, b):
    a, b = sx64(a), sx64(b)
    if b == 0:
        return a & M64
    if a == -SIGN64 and b == -1:
        return 0
    r = abs(a) % abs(b)
    return (-r if a < 0 else r) & M64


def _divw(a, b):
    a, b = sx32(a), sx32(b)
    if b == 0:
        return M64
    if a == -(1 << 31) and b == -1:
        return sx32(a) & M64
    q = abs(a) // abs(b)
    return sx32(-q if (a < 0) != (b < 0) else q) & M64


def _remw(a, b):
    a, b = sx32(a), sx32(b)
    if b == 0:
        return a & M64
    if a == -(1 << 31) and b == -1:
        return 0
    r = abs(a) % abs(b)
    return sx32(-r if a < 0 else r) & M64


def _divuw(a, b):
    a, b = a & M32, b & M32
    return M64 if b == 0 else sx32(a // b) & M64


def _remuw(a, b):
    a, b = a & M32, b & M32
    return sx32(a) & M64 if b == 0 else sx32(a % b) & M64


_OP = {
    (0, 0): lambda a, b: (a + b) & M64,
    (0, 0x20): lambda a, b: (a - b) & M64,
    (1, 0): lambda a, b: (a << (b & 63)) & M64,
    (2, 0): lambda a, b: int(sx64(a) < sx64(b)),
    (3, 0): lambda a, b: int(a < b),
    (4, 0): lambda a, b: a ^ b,
    (5, 0): lambda a, b: a >> (b & 63),
    (5, 0x20): lambda a, b: (sx64(a) >> (b & 63)) & M64,
    (6, 0): lambda a, b: a | b,
    (7, 0): lambda a, b: a & b,
    (0, 1): lambda a, b: (a * b) & M64,
    (1, 1): lambda a, b: ((sx64(a) * sx64(b)) >> 64) & M64,
    (2, 1): lambda a, b: ((sx64(a) * b) >> 64) & M64,
    (3, 1): lambda a, b: ((a * b) >> 64) & M64,
    (4, 1): _div,
    (5, 1): lambda a, b: M64 if b == 0 else a // b,
    (6, 1): _rem,
    (7, 1): lambda a, b: a if b == 0 else a % b,
}

_OP32 = {
    (0, 0): lambda a, b: sx32(a + b) & M64,
    (0, 0x20): lambda a, b: sx32(a - b) & M64,
    (1, 0): lambda a, b: sx32(a << (b & 31)) & M64,
    (5, 0): lambda a, b: sx32((a & M32) >> (b & 31)) & M64,
    (5, 0x20): lambda a, b: (sx32(a) >> (b & 31)) & M64,
    (0, 1): lambda a, b: sx32(a * b) & M64,
    (4, 1): _divw,
    (5, 1): _divuw,
    (6, 1): _remw,
    (7, 1): _remuw,
}

_BRANCH = {
    0: lambda a, b: a == b,
    1: lambda a, b: a != b,
    4: lambda a, b: sx64(a) < sx64(b),
    5: lambda a, b: sx64(a) >= sx64(b),
    6: lambda a, b: a < b,
    7: lambda a, b: a >= b,
}

# funct3 -> (size, signed)
_LOADS = {0: (1, True), 1: (2, True), 2: (4, True), 3: (8, False), 4: (1, False), 5: (2, False), 6: (4, False)}
_STORES = {0: 1, 1: 2, 2: 4, 3: 8}


def _amo_fn(f5, width):
    if width == 4:
        sx, mask = sx32, M32
    else:
        sx, mask = sx64, M64
    return {
        0x01: lambda old, src: src,
        0x00: lambda old, src: (old + src) & mask,
        0x04: lambda old, src: (old ^ src) & mask,
        0x0C: lambda old, src: old & src & mask,
        0x08: lambda old, src: (old | src) & mask,
        0x10: lambda old, src: old if sx(old) <= sx(src) else src & mask,
        0x14: lambda old, src: old if sx(old) >= sx(src) else src & mask,
        0x18: lambda old, src: old if old <= (src & mask) else src & mask,
        0x1C: lambda old, src: old if old >= (src & mask) else src & mask,
    }.get(f5)


def decode(word: int):
    """Return ``f(core, pc) -> next_pc`` for one instruction word."""
    opcode = word & 0x7F
    rd = (word >> 7) & 0x1F
    f3 = (word >> 12) & 7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    f7 = word >> 25

    if opcode == 0x13:  # OP-IMM
        imm = _imm_i(word)
        if f3 == 1:
            if f7 >> 1:
                return _illegal(word)
            sh = (word >> 20) & 63
            op = lambda a: (a << sh) & M64
        elif f3 == 5:
            sh = (word >> 20) & 63
            if (f7 >> 1) == 0:
                op = lambda a: a >> sh
            elif (f7 >> 1) == 0x10:
                op = lambda a: (sx64(a) >> sh) & M64
            else:
                return _illegal(word)
        elif f3 == 0:
            if rd == 0:
                return _nop
            uimm = imm & M64

            def f(c, pc):
                x = c.x
                x[rd] = (x[rs1] + uimm) & M64
                return pc + 4
            return f
        else:
            uimm = imm & M64
            op = {2: lambda a: int(sx64(a) < imm), 3: lambda a: int(a < uimm),
                  4: lambda a: a ^ uimm, 6: lambda a: a | uimm, 7: lambda a: a & uimm}[f3]
        if rd == 0:
            return _nop

        def f(c, pc):
            x = c.x
            x[rd] = op(x[rs1])
            return pc + 4
        return f

    if opcode == 0x33 or opcode == 0x3B:  # OP / OP-32
        fn = (_OP if opcode == 0x33 else _OP32).get((f3, f7))
        if fn is None:
            return _illegal(word)
        if rd == 0:
            return _nop

        def f(c, pc):
            x = c.x
            x[rd] = fn(x[rs1], x[rs2])
            return pc + 4
        return f

    if opcode == 0x1B:  # OP-IMM-32
        imm = _imm_i(word)
        sh = (word >> 20) & 31
        if f3 == 0:
            op = lambda a: sx32(a + imm) & M64
        elif f3 == 1 and f7 == 0:
            op = lambda a: sx32(a << sh) & M64
        elif f3 == 5 and f7 == 0:
            op = lambda a: sx32((a & M32) >> sh) & M64
        elif f3 == 5 and f7 == 0x20:
            op = lambda a: (sx32(a) >> sh) & M64
        else:
            return _illegal(word)
        if rd == 0:
            return _nop

        def f(c, pc):
            x = c.x
            x[rd] = op(x[rs1])
            return pc + 4
        return f

    if opcode == 0x03:  # LOAD
        spec = _LOADS.get(f3)
        if spec is None:
            return _illegal(word)
        size, signed = spec
        imm = _imm_i(word)
        sbit = 1 << (size * 8 - 1)

        def f(c, pc):
            x = c.x
            v = c.load((x[rs1] + imm) & M64, size)
            if signed and v & sbit:
                v = (v - (sbit << 1)) & M64
            if rd:
                x[rd] = v
            return pc + 4
        return f

    if opcode == 0x23:  # STORE
        size = _STORES.get(f3)
        if size is None:
            return _illegal(word)
        imm = _imm_s(word)
        mask = (1 << (size * 8)) - 1

        def f(c, pc):
            x = c.x
            c.store((x[rs1] + imm) & M64, size, x[rs2] & mask)
            return pc + 4
        return f

    if opcode == 0x63:  # BRANCH
        cond = _BRANCH.get(f3)
        if cond is None:
            return _illegal(word)
        off = _imm_b(word)

        def f(c, pc):
            x = c.x
            if cond(x[rs1], x[rs2]):
                return (pc + off) & M64
            return pc + 4
        return f

    if opcode == 0x37:  # LUI
        v = (sx32(word & 0xFFFFF000)) & M64
        if rd == 0:
            return _nop

        def f(c, pc):
            c.x[rd] = v
            return pc + 4
        return f

    if opcode == 0x17:  # AUIPC
        v = sx32(word & 0xFFFFF000)
        if rd == 0:
            return _nop

        def f(c, pc):
            c.x[rd] = (pc + v) & M64
            return pc + 4
        return f

    if opcode == 0x6F:  # JAL
        off = _imm_j(word)

        def f(c, pc):
            if rd:
                c.x[rd] = pc + 4
            return (pc + off) & M64
        return f

    if opcode == 0x67 and f3 == 0:  # JALR
        imm = _imm_i(word)

        def f(c, pc):
            x = c.x
            target = (x[rs1] + imm) & M64 & ~1
            if rd:
                x[rd] = pc + 4
            return target
        return f

    if opcode == 0x0F:  # MISC-MEM
        if f3 == 0:
            return _nop
        if f3 == 1:
            def f(c, pc):
                c.target.sync_i()
                return pc + 4
            return f
        return _illegal(word)

    if opcode == 0x2F:  # AMO
        return _decode_amo(word, rd, f3, rs1, rs2, f7)

    if opcode == 0x73:
        return _decode_system(word, rd, f3, rs1, rs2, f7)

    return _illegal(word)


def _decode_amo(word, rd, f3, rs1, rs2, f7):
    if f3 not in (2, 3):
        return _illegal(word)
    width = 4 if f3 == 2 else 8
    f5 = f7 >> 2
    sbit = 1 << (width * 8 - 1)

    def ext(v):
        return (v - (sbit << 1)) & M64 if v & sbit else v

    if f5 == 0x02:  # LR
        if rs2:
            return _illegal(word)

        def f(c, pc):
            v = c.load_reserved(c.x[rs1], width)
            if rd:
                c.x[rd] = ext(v)
            return pc + 4
        return f
    if f5 == 0x03:  # SC
        mask = (1 << (width * 8)) - 1

        def f(c, pc):
            x = c.x
            ok = c.store_conditional(x[rs1], width, x[rs2] & mask)
            if rd:
                x[rd] = 0 if ok else 1
            return pc + 4
        return f
    op = _amo_fn(f5, width)
    if op is None:
        return _illegal(word)

    def f(c, pc):
        x = c.x
        old = c.amo(x[rs1], width, op, x[rs2])
        if rd:
            x[rd] = ext(old)
        return pc + 4
    return f


def _decode_system(word, rd, f3, rs1, rs2, f7):
    if f3 == 0:
        if word == 0x00000073:
            def f(c, pc):
                raise Trap(Cause.ECALL_FROM_U, 0)
            return f
        if word == 0x00100073:
            def f(c, pc):
                raise Trap(Cause.BREAKPOINT, pc)
            return f
        if f7 == 0x09 and rd == 0:  # sfence.vma
            def f(c, pc):
                if not c.debug_mode:
                    raise Trap(Cause.ILLEGAL_INSTRUCTION, word)
                c.flush_tlb()
                return pc + 4
            return f
        return _illegal(word)
    if f3 == 4:
        return _illegal(word)
    csr = word >> 20
    op = f3 & 3
    use_imm = bool(f3 & 4)

    def f(c, pc):
        src = rs1 if use_imm else c.x[rs1]
        old = c.read_csr(csr, word)
        writes = op == 1 or rs1 != 0
        if writes:
            if op == 1:
                new = src
            elif op == 2:
                new = old | src
            else:
                new = old & ~src & M64
            c.write_csr(csr, new, word)
        if rd:
            c.x[rd] = old
        return pc + 4
    return f


READ_ONLY_CSRS = {CSR_CYCLE, CSR_TIME, CSR_INSTRET}
PRIVILEGED_CSRS = {CSR_SATP}

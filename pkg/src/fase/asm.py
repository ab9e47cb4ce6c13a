"""Minimal RV64IMA + Zicsr/Zifencei instruction encoder.

Used to build injected instruction words, the signal trampoline and
generated test programs. Register operands are plain integers 0..31.
"""

from __future__ import annotations

ABI_NAMES = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1",
    "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
    "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11",
    "t3", "t4", "t5", "t6",
]
REG = {name: i for i, name in enumerate(ABI_NAMES)}
REG["fp"] = 8

CSR_SATP = 0x180
CSR_CYCLE = 0xC00
CSR_TIME = 0xC01
CSR_INSTRET = 0xC02


def _r(opcode, rd, f3, rs1, rs2, f7):
    return (f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode


def _i(opcode, rd, f3, rs1, imm):
    if not -2048 <= imm < 2048:
        raise ValueError(f"I-immediate {imm} out of range")
    return ((imm & 0xFFF) << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode


def _s(opcode, f3, rs1, rs2, imm):
    if not -2048 <= imm < 2048:
        raise ValueError(f"S-immediate {imm} out of range")
    imm &= 0xFFF
    return ((imm >> 5) << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | ((imm & 0x1F) << 7) | opcode


def _b(f3, rs1, rs2, off):
    if off % 2 or not -4096 <= off < 4096:
        raise ValueError(f"branch offset {off} invalid")
    o = off & 0x1FFF
    return (((o >> 12) & 1) << 31) | (((o >> 5) & 0x3F) << 25) | (rs2 << 20) | (rs1 << 15) \
        | (f3 << 12) | (((o >> 1) & 0xF) << 8) | (((o >> 11) & 1) << 7) | 0x63


def _u(opcode, rd, imm20):
    return ((imm20 & 0xFFFFF) << 12) | (rd << 7) | opcode


def _j(rd, off):
    if off % 2 or not -(1 << 20) <= off < (1 << 20):
        raise ValueError(f"jump offset {off} invalid")
    o = off & 0x1FFFFF
    return (((o >> 20) & 1) << 31) | (((o >> 1) & 0x3FF) << 21) | (((o >> 11) & 1) << 20) \
        | (((o >> 12) & 0xFF) << 12) | (rd << 7) | 0x6F


# --- RV64I
def lui(rd, imm20): return _u(0x37, rd, imm20)
def auipc(rd, imm20): return _u(0x17, rd, imm20)
def jal(rd, off): return _j(rd, off)
def jalr(rd, rs1, imm=0): return _i(0x67, rd, 0, rs1, imm)
def beq(rs1, rs2, off): return _b(0, rs1, rs2, off)
def bne(rs1, rs2, off): return _b(1, rs1, rs2, off)
def blt(rs1, rs2, off): return _b(4, rs1, rs2, off)
def bge(rs1, rs2, off): return _b(5, rs1, rs2, off)
def bltu(rs1, rs2, off): return _b(6, rs1, rs2, off)
def bgeu(rs1, rs2, off): return _b(7, rs1, rs2, off)
def lb(rd, rs1, imm=0): return _i(0x03, rd, 0, rs1, imm)
def lh(rd, rs1, imm=0): return _i(0x03, rd, 1, rs1, imm)
def lw(rd, rs1, imm=0): return _i(0x03, rd, 2, rs1, imm)
def ld(rd, rs1, imm=0): return _i(0x03, rd, 3, rs1, imm)
def lbu(rd, rs1, imm=0): return _i(0x03, rd, 4, rs1, imm)
def lhu(rd, rs1, imm=0): return _i(0x03, rd, 5, rs1, imm)
def lwu(rd, rs1, imm=0): return _i(0x03, rd, 6, rs1, imm)
def sb(rs2, rs1, imm=0): return _s(0x23, 0, rs1, rs2, imm)
def sh(rs2, rs1, imm=0): return _s(0x23, 1, rs1, rs2, imm)
def sw(rs2, rs1, imm=0): return _s(0x23, 2, rs1, rs2, imm)
def sd(rs2, rs1, imm=0): return _s(0x23, 3, rs1, rs2, imm)
def addi(rd, rs1, imm): return _i(0x13, rd, 0, rs1, imm)
def slti(rd, rs1, imm): return _i(0x13, rd, 2, rs1, imm)
def sltiu(rd, rs1, imm): return _i(0x13, rd, 3, rs1, imm)
def xori(rd, rs1, imm): return _i(0x13, rd, 4, rs1, imm)
def ori(rd, rs1, imm): return _i(0x13, rd, 6, rs1, imm)
def andi(rd, rs1, imm): return _i(0x13, rd, 7, rs1, imm)
def slli(rd, rs1, sh): return _i(0x13, rd, 1, rs1, sh & 0x3F)
def srli(rd, rs1, sh): return _i(0x13, rd, 5, rs1, sh & 0x3F)
def srai(rd, rs1, sh): return _i(0x13, rd, 5, rs1, 0x400 | (sh & 0x3F))
def add(rd, rs1, rs2): return _r(0x33, rd, 0, rs1, rs2, 0)
def sub(rd, rs1, rs2): return _r(0x33, rd, 0, rs1, rs2, 0x20)
def sll(rd, rs1, rs2): return _r(0x33, rd, 1, rs1, rs2, 0)
def slt(rd, rs1, rs2): return _r(0x33, rd, 2, rs1, rs2, 0)
def sltu(rd, rs1, rs2): return _r(0x33, rd, 3, rs1, rs2, 0)
def xor(rd, rs1, rs2): return _r(0x33, rd, 4, rs1, rs2, 0)
def srl(rd, rs1, rs2): return _r(0x33, rd, 5, rs1, rs2, 0)
def sra(rd, rs1, rs2): return _r(0x33, rd, 5, rs1, rs2, 0x20)
def or_(rd, rs1, rs2): return _r(0x33, rd, 6, rs1, rs2, 0)
def and_(rd, rs1, rs2): return _r(0x33, rd, 7, rs1, rs2, 0)
def addiw(rd, rs1, imm): return _i(0x1B, rd, 0, rs1, imm)
def slliw(rd, rs1, sh): return _i(0x1B, rd, 1, rs1, sh & 0x1F)
def srliw(rd, rs1, sh): return _i(0x1B, rd, 5, rs1, sh & 0x1F)
def sraiw(rd, rs1, sh): return _i(0x1B, rd, 5, rs1, 0x400 | (sh & 0x1F))
def addw(rd, rs1, rs2): return _r(0x3B, rd, 0, rs1, rs2, 0)
def subw(rd, rs1, rs2): return _r(0x3B, rd, 0, rs1, rs2, 0x20)
def sllw(rd, rs1, rs2): return _r(0x3B, rd, 1, rs1, rs2, 0)
def srlw(rd, rs1, rs2): return _r(0x3B, rd, 5, rs1, rs2, 0)
def sraw(rd, rs1, rs2): return _r(0x3B, rd, 5, rs1, rs2, 0x20)
def fence(): return 0x0FF0000F
def fence_i(): return 0x0000100F
def ecall(): return 0x00000073
def ebreak(): return 0x00100073
def sfence_vma(rs1=0, rs2=0): return _r(0x73, 0, 0, rs1, rs2, 0x09)

# --- M
def mul(rd, rs1, rs2): return _r(0x33, rd, 0, rs1, rs2, 1)
def mulh(rd, rs1, rs2): return _r(0x33, rd, 1, rs1, rs2, 1)
def mulhsu(rd, rs1, rs2): return _r(0x33, rd, 2, rs1, rs2, 1)
def mulhu(rd, rs1, rs2): return _r(0x33, rd, 3, rs1, rs2, 1)
def div(rd, rs1, rs2): return _r(0x33, rd, 4, rs1, rs2, 1)
def divu(rd, rs1, rs2): return _r(0x33, rd, 5, rs1, rs2, 1)
def rem(rd, rs1, rs2): return _r(0x33, rd, 6, rs1, rs2, 1)
def remu(rd, rs1, rs2): return _r(0x33, rd, 7, rs1, rs2, 1)
def mulw(rd, rs1, rs2): return _r(0x3B, rd, 0, rs1, rs2, 1)
def divw(rd, rs1, rs2): return _r(0x3B, rd, 4, rs1, rs2, 1)
def divuw(rd, rs1, rs2): return _r(0x3B, rd, 5, rs1, rs2, 1)
def remw(rd, rs1, rs2): return _r(0x3B, rd, 6, rs1, rs2, 1)
def remuw(rd, rs1, rs2): return _r(0x3B, rd, 7, rs1, rs2, 1)

# --- A
AMO_FUNCT5 = {
    "lr": 0x02, "sc": 0x03, "amoswap": 0x01, "amoadd": 0x00, "amoxor": 0x04,
    "amoand": 0x0C, "amoor": 0x08, "amomin": 0x10, "amomax": 0x14,
    "amominu": 0x18, "amomaxu": 0x1C,
}


def amo(name: str, width: str, rd: int, rs1: int, rs2: int = 0, aq=False, rl=False) -> int:
    """``amo("amoadd", "w", rd, addr_reg, src_reg)``; width is ``"w"`` or ``"d"``."""
    f3 = {"w": 2, "d": 3}[width]
    f7 = (AMO_FUNCT5[name] << 2) | (int(aq) << 1) | int(rl)
    return _r(0x2F, rd, f3, rs1, rs2, f7)


# --- Zicsr
def csrrw(rd, csr, rs1): return (csr << 20) | (rs1 << 15) | (1 << 12) | (rd << 7) | 0x73
def csrrs(rd, csr, rs1): return (csr << 20) | (rs1 << 15) | (2 << 12) | (rd << 7) | 0x73
def csrrc(rd, csr, rs1): return (csr << 20) | (rs1 << 15) | (3 << 12) | (rd << 7) | 0x73
def csrrwi(rd, csr, uimm): return (csr << 20) | (uimm << 15) | (5 << 12) | (rd << 7) | 0x73
def csrr(rd, csr): return csrrs(rd, csr, 0)
def csrw(csr, rs1): return csrrw(0, csr, rs1)


def li(rd: int, value: int) -> list[int]:
    """Load an arbitrary 64-bit constant (lui/addi/slli sequences)."""
    value &= (1 << 64) - 1
    if value >= 1 << 63:
        value -= 1 << 64
    return _li(rd, value)


def _li(rd, v):
    if -2048 <= v < 2048:
        return [addi(rd, 0, v)]
    if -(1 << 31) <= v < (1 << 31):
        lo = ((v & 0xFFF) ^ 0x800) - 0x800
        hi = ((v - lo) >> 12) & 0xFFFFF
        out = [lui(rd, hi)]
        if lo:
            out.append(addiw(rd, rd, lo))
        return out
    lo = ((v & 0xFFF) ^ 0x800) - 0x800
    rest = (v - lo) >> 12
    shift = 12
    while rest and rest % 2 == 0:
        rest >>= 1
        shift += 1
    out = _li(rd, rest) + [slli(rd, rd, shift)]
    if lo:
        out.append(addi(rd, rd, lo))
    return out


def assemble(words: list[int]) -> bytes:
    return b"".join(w.to_bytes(4, "little") for w in words)

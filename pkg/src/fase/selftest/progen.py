"""Random straight-line-ish RV64IMA programs for differential testing.

Control flow only jumps forward, so every program terminates at its final
ecall. x31 holds the data window base and is never written.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .. import asm

CODE_BASE = 0x8000_0000
DATA_OFFSET = 0x4000
DATA_SIZE = 2048
BASE_REG = 31
EDGE = [0, 1, 2, 0x7FFF_FFFF, 0x8000_0000, 0xFFFF_FFFF, (1 << 63) - 1, 1 << 63, (1 << 64) - 1,
        (1 << 64) - 2, 0x1234_5678_9ABC_DEF0, 31, 32, 63, 64]

_ALU_I = ["addi", "slti", "sltiu", "xori", "ori", "andi"]
_SHIFT_I = ["slli", "srli", "srai"]
_ALU_IW = ["addiw"]
_SHIFT_IW = ["slliw", "srliw", "sraiw"]
_ALU_R = ["add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and",
          "addw", "subw", "sllw", "srlw", "sraw",
          "mul", "mulh", "mulhsu", "mulhu", "div", "divu", "rem", "remu",
          "mulw", "divw", "divuw", "remw", "remuw"]
_LOADS = {"lb": 1, "lh": 2, "lw": 4, "ld": 8, "lbu": 1, "lhu": 2, "lwu": 4}
_STORES = {"sb": 1, "sh": 2, "sw": 4, "sd": 8}
_AMOS = ["swap", "add", "xor", "and", "or", "min", "max", "minu", "maxu"]
_BRANCHES = ["beq", "bne", "blt", "bge", "bltu", "bgeu"]


@dataclass
class Program:
    words: list[int]
    regs: list[int]
    data: bytes

    @property
    def code(self) -> bytes:
        return asm.assemble(self.words)

    def image(self) -> bytes:
        """Code and data laid out as one memory image starting at CODE_BASE."""
        img = bytearray(DATA_OFFSET + DATA_SIZE)
        code = self.code
        img[:len(code)] = code
        img[DATA_OFFSET:] = self.data
        return bytes(img)


def _reg(rng) -> int:
    return rng.randrange(1, 31)


def generate(rng: random.Random, max_len: int = 200) -> Program:
    body: list[list] = []   # groups that must stay contiguous
    n = 0
    budget = max_len - 1
    while n < budget - 8:
        kind = rng.choices(["alu_i", "alu_r", "lui", "load", "store", "amo", "lrsc", "branch",
                            "jal", "jalr", "edge"], weights=[14, 20, 3, 8, 8, 4, 2, 6, 2, 2, 4])[0]
        g = _group(rng, kind)
        body.append(g)
        n += len(g)
    words: list = []
    starts = []
    # branch placeholders are resolved once all group offsets are known
    for g in body:
        starts.append(len(words))
        words.extend(g)
    starts.append(len(words))
    words.append(asm.ecall())
    words = _resolve(rng, words, starts)
    regs = [0] * 32
    for r in range(1, 31):
        regs[r] = rng.choice(EDGE) if rng.random() < 0.2 else rng.getrandbits(64)
    regs[BASE_REG] = CODE_BASE + DATA_OFFSET
    data = bytes(rng.getrandbits(8) for _ in range(DATA_SIZE))
    return Program(words, regs, data)


_FWD = "fwd"   # marker for a forward control transfer, resolved later


def _group(rng, kind) -> list[int]:
    rd, rs1, rs2 = _reg(rng), _reg(rng), _reg(rng)
    if kind == "alu_i":
        pick = rng.random()
        if pick < 0.5:
            return [getattr(asm, rng.choice(_ALU_I))(rd, rs1, rng.randrange(-2048, 2048))]
        if pick < 0.7:
            return [getattr(asm, rng.choice(_SHIFT_I))(rd, rs1, rng.randrange(64))]
        if pick < 0.85:
            return [asm.addiw(rd, rs1, rng.randrange(-2048, 2048))]
        return [getattr(asm, rng.choice(_SHIFT_IW))(rd, rs1, rng.randrange(32))]
    if kind == "alu_r":
        name = rng.choice(_ALU_R)
        fn = getattr(asm, name + "_" if name in ("or", "and") else name)
        return [fn(rd, rs1, rs2)]
    if kind == "lui":
        fn = asm.lui if rng.random() < 0.6 else asm.auipc
        return [fn(rd, rng.randrange(1 << 20))]
    if kind == "edge":
        return asm.li(rd, rng.choice(EDGE))
    if kind in ("load", "store"):
        table = _LOADS if kind == "load" else _STORES
        name = rng.choice(list(table))
        width = table[name]
        off = rng.randrange(0, DATA_SIZE // width) * width
        # reach the upper half of the window through a temporary base
        if off >= 2048 - width:
            off = 0
        if kind == "load":
            return [getattr(asm, name)(rd, BASE_REG, off)]
        return [getattr(asm, name)(rs2, BASE_REG, off)]
    if kind == "amo":
        width = rng.choice([4, 8])
        off = rng.randrange(0, 256 // width) * width
        tmp = _reg(rng)
        op = rng.choice(_AMOS)
        return [asm.addi(tmp, BASE_REG, off), asm.amo("amo" + op, "wd"[width == 8], rd, tmp, rs2, rng.random() < 0.5, rng.random() < 0.5)]
    if kind == "lrsc":
        width = rng.choice([4, 8])
        off = rng.randrange(0, 256 // width) * width
        tmp = _reg(rng)
        rd2 = _reg(rng)
        while rd2 == tmp:
            rd2 = _reg(rng)
        middle = [asm.add(r, r, r) for r in [_reg(rng) for _ in range(rng.randrange(3))] if r != tmp]
        sc_addr = tmp if rng.random() < 0.8 else BASE_REG   # sometimes a different address
        return ([asm.addi(tmp, BASE_REG, off), asm.amo("lr", "wd"[width == 8], rd if rd != tmp else rd2, tmp, 0, False, False)]
                + middle + [asm.amo("sc", "wd"[width == 8], rd2, sc_addr, rs2, False, False)])
    if kind == "branch":
        return [(_FWD, rng.choice(_BRANCHES), rs1, rs2), None]
    if kind == "jal":
        return [(_FWD, "jal", rd, 0), None]
    return [(_FWD, "jalr", rd, 0), None]   # via auipc


def _resolve(rng, words: list, starts: list[int]) -> list[int]:
    """Replace marker pairs with forward transfers that land on a group start."""
    out = list(words)
    i = 0
    while i < len(out):
        w = out[i]
        if not isinstance(w, tuple):
            i += 1
            continue
        _, kind, arg, rs2 = w
        # jump target: one of the next few group starts after the pair
        later = [s for s in starts if s >= i + 2][:6]
        off = 4 * (rng.choice(later) - i)
        if kind in _BRANCHES:
            out[i] = getattr(asm, kind)(arg, rs2, off)
            out[i + 1] = asm.addi(0, 0, 0)
        elif kind == "jal":
            out[i] = asm.jal(arg, off)
            out[i + 1] = asm.addi(0, 0, 0)
        else:
            tmp = arg
            out[i] = asm.auipc(tmp, 0)
            out[i + 1] = asm.jalr(_reg(rng), tmp, off)
        i += 2
    return out

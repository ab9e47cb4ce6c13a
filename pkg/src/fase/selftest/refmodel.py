"""A deliberately naive RV64IMA interpreter used as a differential oracle.

Instructions are matched against bit-pattern strings and immediates are
assembled by slicing the binary text of the word, so it shares no decode
logic with :mod:`fase.isa`. Bare physical addressing, one hart.
"""

from __future__ import annotations

MASK = (1 << 64) - 1

# (name, pattern over bits 31..0, '-' = don't care)
_PATTERNS = [
    ("lui",    "-------------------------0110111"),
    ("auipc",  "-------------------------0010111"),
    ("jal",    "-------------------------1101111"),
    ("jalr",   "-----------------000-----1100111"),
    ("beq",    "-----------------000-----1100011"),
    ("bne",    "-----------------001-----1100011"),
    ("blt",    "-----------------100-----1100011"),
    ("bge",    "-----------------101-----1100011"),
    ("bltu",   "-----------------110-----1100011"),
    ("bgeu",   "-----------------111-----1100011"),
    ("lb",     "-----------------000-----0000011"),
    ("lh",     "-----------------001-----0000011"),
    ("lw",     "-----------------010-----0000011"),
    ("ld",     "-----------------011-----0000011"),
    ("lbu",    "-----------------100-----0000011"),
    ("lhu",    "-----------------101-----0000011"),
    ("lwu",    "-----------------110-----0000011"),
    ("sb",     "-----------------000-----0100011"),
    ("sh",     "-----------------001-----0100011"),
    ("sw",     "-----------------010-----0100011"),
    ("sd",     "-----------------011-----0100011"),
    ("addi",   "-----------------000-----0010011"),
    ("slti",   "-----------------010-----0010011"),
    ("sltiu",  "-----------------011-----0010011"),
    ("xori",   "-----------------100-----0010011"),
    ("ori",    "-----------------110-----0010011"),
    ("andi",   "-----------------111-----0010011"),
    ("slli",   "000000-----------001-----0010011"),
    ("srli",   "000000-----------101-----0010011"),
    ("srai",   "010000-----------101-----0010011"),
    ("addiw",  "-----------------000-----0011011"),
    ("slliw",  "0000000----------001-----0011011"),
    ("srliw",  "0000000----------101-----0011011"),
    ("sraiw",  "0100000----------101-----0011011"),
    ("add",    "0000000----------000-----0110011"),
    ("sub",    "0100000----------000-----0110011"),
    ("sll",    "0000000----------001-----0110011"),
    ("slt",    "0000000----------010-----0110011"),
    ("sltu",   "0000000----------011-----0110011"),
    ("xor",    "0000000----------100-----0110011"),
    ("srl",    "0000000----------101-----0110011"),
    ("sra",    "0100000----------101-----0110011"),
    ("or",     "0000000----------110-----0110011"),
    ("and",    "0000000----------111-----0110011"),
    ("mul",    "0000001----------000-----0110011"),
    ("mulh",   "0000001----------001-----0110011"),
    ("mulhsu", "0000001----------010-----0110011"),
    ("mulhu",  "0000001----------011-----0110011"),
    ("div",    "0000001----------100-----0110011"),
    ("divu",   "0000001----------101-----0110011"),
    ("rem",    "0000001----------110-----0110011"),
    ("remu",   "0000001----------111-----0110011"),
    ("addw",   "0000000----------000-----0111011"),
    ("subw",   "0100000----------000-----0111011"),
    ("sllw",   "0000000----------001-----0111011"),
    ("srlw",   "0000000----------101-----0111011"),
    ("sraw",   "0100000----------101-----0111011"),
    ("mulw",   "0000001----------000-----0111011"),
    ("divw",   "0000001----------100-----0111011"),
    ("divuw",  "0000001----------101-----0111011"),
    ("remw",   "0000001----------110-----0111011"),
    ("remuw",  "0000001----------111-----0111011"),
    ("lr",     "00010--00000-----01------0101111"),
    ("sc",     "00011------------01------0101111"),
    ("amoswap", "00001------------01------0101111"),
    ("amoadd", "00000------------01------0101111"),
    ("amoxor", "00100------------01------0101111"),
    ("amoand", "01100------------01------0101111"),
    ("amoor",  "01000------------01------0101111"),
    ("amomin", "10000------------01------0101111"),
    ("amomax", "10100------------01------0101111"),
    ("amominu", "11000------------01------0101111"),
    ("amomaxu", "11100------------01------0101111"),
    ("fence",  "-----------------000-----0001111"),
    ("ecall",  "00000000000000000000000001110011"),
    ("ebreak", "00000000000100000000000001110011"),
]


def _matches(bits: str, pattern: str) -> bool:
    return all(p == "-" or p == b for p, b in zip(pattern, bits))


def signed(value: int, width: int) -> int:
    value &= (1 << width) - 1
    if value >= 1 << (width - 1):
        value -= 1 << width
    return value


class Stop(Exception):
    def __init__(self, reason: str, pc: int):
        super().__init__(reason)
        self.reason = reason
        self.pc = pc


class RefMachine:
    def __init__(self, base: int, memory: bytes):
        self.base = base
        self.mem = bytearray(memory)
        self.x = [0] * 32
        self.pc = base
        self.reserved = None
        self.steps = 0

    # memory in the obvious way
    def _index(self, addr: int, n: int) -> int:
        i = addr - self.base
        if i < 0 or i + n > len(self.mem):
            raise Stop("access fault", self.pc)
        return i

    def read(self, addr: int, n: int) -> int:
        i = self._index(addr, n)
        return int.from_bytes(self.mem[i:i + n], "little")

    def write(self, addr: int, n: int, value: int) -> None:
        i = self._index(addr, n)
        self.mem[i:i + n] = (value & ((1 << (8 * n)) - 1)).to_bytes(n, "little")

    def setx(self, r: int, value: int) -> None:
        if r:
            self.x[r] = value & MASK

    def run(self, limit: int = 100_000) -> str:
        try:
            while self.steps < limit:
                self.step()
                self.steps += 1
        except Stop as s:
            return s.reason
        return "limit"

    def step(self) -> None:
        word = self.read(self.pc, 4)
        bits = format(word, "032b")

        def f(hi, lo):
            return int(bits[31 - hi:32 - lo], 2)

        name = next((n for n, p in _PATTERNS if _matches(bits, p)), None)
        if name is None:
            raise Stop("illegal", self.pc)
        rd, rs1, rs2 = f(11, 7), f(19, 15), f(24, 20)
        a, b = self.x[rs1], self.x[rs2]
        sa, sb = signed(a, 64), signed(b, 64)
        imm_i = signed(f(31, 20), 12)
        imm_s = signed(int(bits[0:7] + bits[20:25], 2), 12)
        imm_b = signed(int(bits[0] + bits[24] + bits[1:7] + bits[20:24] + "0", 2), 13)
        imm_u = signed(int(bits[0:20] + "0" * 12, 2), 32)
        imm_j = signed(int(bits[0] + bits[12:20] + bits[11] + bits[1:11] + "0", 2), 21)
        pc = self.pc
        nxt = pc + 4

        if name == "ecall":
            raise Stop("ecall", pc)
        if name == "ebreak":
            raise Stop("ebreak", pc)
        if name == "lui":
            self.setx(rd, imm_u)
        elif name == "auipc":
            self.setx(rd, pc + imm_u)
        elif name == "jal":
            self.setx(rd, nxt)
            nxt = pc + imm_j
        elif name == "jalr":
            target = (a + imm_i) & MASK & ~1
            self.setx(rd, pc + 4)
            nxt = target
        elif name in ("beq", "bne", "blt", "bge", "bltu", "bgeu"):
            taken = {"beq": a == b, "bne": a != b, "blt": sa < sb, "bge": sa >= sb,
                     "bltu": a < b, "bgeu": a >= b}[name]
            if taken:
                nxt = pc + imm_b
        elif name in ("lb", "lh", "lw", "ld", "lbu", "lhu", "lwu"):
            n = {"b": 1, "h": 2, "w": 4, "d": 8}[name[1]]
            v = self.read((a + imm_i) & MASK, n)
            self.setx(rd, v if name.endswith("u") else signed(v, 8 * n))
        elif name in ("sb", "sh", "sw", "sd"):
            n = {"b": 1, "h": 2, "w": 4, "d": 8}[name[1]]
            self.write((a + imm_s) & MASK, n, b)
        elif name in ("addi", "slti", "sltiu", "xori", "ori", "andi"):
            uimm = imm_i & MASK
            self.setx(rd, {"addi": a + imm_i, "slti": int(sa < imm_i), "sltiu": int(a < uimm),
                           "xori": a ^ uimm, "ori": a | uimm, "andi": a & uimm}[name])
        elif name in ("slli", "srli", "srai"):
            sh = f(25, 20)
            self.setx(rd, {"slli": a << sh, "srli": a >> sh, "srai": sa >> sh}[name])
        elif name in ("addiw", "slliw", "srliw", "sraiw"):
            sh = f(24, 20)
            lo = a & 0xFFFFFFFF
            r = {"addiw": a + imm_i, "slliw": lo << sh, "srliw": lo >> sh,
                 "sraiw": signed(lo, 32) >> sh}[name]
            self.setx(rd, signed(r, 32))
        elif name in ("add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and"):
            sh = b & 63
            self.setx(rd, {"add": a + b, "sub": a - b, "sll": a << sh, "slt": int(sa < sb),
                           "sltu": int(a < b), "xor": a ^ b, "srl": a >> sh, "sra": sa >> sh,
                           "or": a | b, "and": a & b}[name])
        elif name in ("mul", "mulh", "mulhsu", "mulhu"):
            prod = {"mul": a * b, "mulh": sa * sb, "mulhsu": sa * b, "mulhu": a * b}[name]
            self.setx(rd, prod if name == "mul" else prod >> 64)
        elif name in ("div", "divu", "rem", "remu"):
            self.setx(rd, _divide(name, a, b, 64))
        elif name in ("addw", "subw", "sllw", "srlw", "sraw"):
            lo_a, sh = a & 0xFFFFFFFF, b & 31
            r = {"addw": a + b, "subw": a - b, "sllw": lo_a << sh, "srlw": lo_a >> sh,
                 "sraw": signed(lo_a, 32) >> sh}[name]
            self.setx(rd, signed(r, 32))
        elif name == "mulw":
            self.setx(rd, signed(a * b, 32))
        elif name in ("divw", "divuw", "remw", "remuw"):
            self.setx(rd, signed(_divide(name[:-1], a & 0xFFFFFFFF, b & 0xFFFFFFFF, 32), 32))
        elif name == "fence":
            pass
        else:
            self._atomic(name, f(14, 12), rd, a, b)
        self.pc = nxt & MASK

    def _atomic(self, name: str, width_code: int, rd: int, addr: int, src: int) -> None:
        n = 4 if width_code == 2 else 8
        if addr % n:
            raise Stop("misaligned atomic", self.pc)
        if name == "lr":
            self.setx(rd, signed(self.read(addr, n), 8 * n))
            self.reserved = addr
            return
        if name == "sc":
            if self.reserved == addr:
                self.write(addr, n, src)
                self.setx(rd, 0)
            else:
                self.setx(rd, 1)
            self.reserved = None
            return
        old = self.read(addr, n)
        so, ss = signed(old, 8 * n), signed(src, 8 * n)
        uo, us = old, src & ((1 << (8 * n)) - 1)
        new = {"amoswap": src, "amoadd": old + src, "amoxor": old ^ src, "amoand": old & src,
               "amoor": old | src, "amomin": min(so, ss), "amomax": max(so, ss),
               "amominu": min(uo, us), "amomaxu": max(uo, us)}[name]
        self.write(addr, n, new)
        self.setx(rd, signed(old, 8 * n))


def _divide(name: str, a: int, b: int, width: int) -> int:
    sa, sb = signed(a, width), signed(b, width)
    if name in ("div", "rem"):
        if sb == 0:
            return -1 if name == "div" else sa
        if sa == -(1 << (width - 1)) and sb == -1:
            return sa if name == "div" else 0
        q = abs(sa) // abs(sb)
        if (sa < 0) != (sb < 0):
            q = -q
        return q if name == "div" else sa - q * sb
    if b == 0:
        return (1 << width) - 1 if name == "divu" else a
    return a // b if name == "divu" else a % b

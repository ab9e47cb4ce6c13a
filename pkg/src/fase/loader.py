"""ELF64 loading and the initial user stack."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Optional

from .runtime import abi
from .runtime.vm import PAGE, STACK_SIZE, STACK_TOP, AddressSpace, Segment, page_down, page_up

ET_EXEC, ET_DYN = 2, 3
EM_RISCV = 243
PT_LOAD, PT_INTERP, PT_PHDR = 1, 3, 6
PF_X, PF_W, PF_R = 1, 2, 4
ET_DYN_BASE = 0x2_0000_0000
INTERP_BASE = 0x30_0000_0000

_EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
_PHDR = struct.Struct("<IIQQQQQQ")


class ElfError(Exception):
    pass


@dataclass
class Phdr:
    type: int
    flags: int
    offset: int
    vaddr: int
    filesz: int
    memsz: int

    @property
    def prot(self) -> int:
        return ((abi.PROT_READ if self.flags & PF_R else 0) | (abi.PROT_WRITE if self.flags & PF_W else 0)
                | (abi.PROT_EXEC if self.flags & PF_X else 0))


@dataclass
class Elf:
    type: int
    entry: int
    phoff: int
    phentsize: int
    phdrs: list[Phdr]
    interp: Optional[str] = None

    @property
    def loads(self) -> list[Phdr]:
        return [p for p in self.phdrs if p.type == PT_LOAD]

    def phdr_vaddr(self) -> int:
        """Virtual address of the program header table (before bias)."""
        for p in self.phdrs:
            if p.type == PT_PHDR:
                return p.vaddr
        for p in self.loads:
            if p.offset <= self.phoff < p.offset + p.filesz:
                return p.vaddr + self.phoff - p.offset
        return 0


def parse_elf(data: bytes) -> Elf:
    if len(data) < _EHDR.size or data[:4] != b"\x7fELF":
        raise ElfError("not an ELF file")
    ident, etype, machine, _, entry, phoff, _, _, _, phentsize, phnum, _, _, _ = _EHDR.unpack_from(data)
    if ident[4] != 2 or ident[5] != 1:
        raise ElfError("only little-endian ELF64 is supported")
    if machine != EM_RISCV:
        raise ElfError(f"not a RISC-V binary (e_machine={machine})")
    if etype not in (ET_EXEC, ET_DYN):
        raise ElfError(f"unsupported ELF type {etype}")
    if phentsize != _PHDR.size or phoff + phnum * phentsize > len(data):
        raise ElfError("truncated program headers")
    phdrs = []
    interp = None
    for i in range(phnum):
        ptype, flags, off, vaddr, _, filesz, memsz, _ = _PHDR.unpack_from(data, phoff + i * phentsize)
        phdrs.append(Phdr(ptype, flags, off, vaddr, filesz, memsz))
        if ptype == PT_INTERP:
            interp = data[off:off + filesz].split(b"\0")[0].decode()
        if ptype == PT_LOAD and (vaddr - off) % PAGE:
            raise ElfError("PT_LOAD offset and address disagree modulo the page size")
    return Elf(etype, entry, phoff, phentsize, phdrs, interp)


@dataclass
class Image:
    path: str
    entry: int            # program entry after bias
    start_pc: int         # where the first thread starts (interpreter entry if any)
    phdr: int
    phnum: int
    bias: int
    interp_base: int = 0
    brk: int = 0
    sp: int = 0
    segments: list = field(default_factory=list)


def map_elf(rt, space: AddressSpace, path: str, elf: Elf, bias: int) -> list[Segment]:
    fobj = rt.vm.file_for(path)
    segs = []
    for p in elf.loads:
        if p.memsz == 0:
            continue
        start = page_down(bias + p.vaddr)
        end = page_up(bias + p.vaddr + p.memsz)
        seg = Segment(start, end, p.prot, "elf", file=fobj, offset=page_down(p.offset),
                      file_end=bias + p.vaddr + p.filesz)
        try:
            space.add_segment(seg)
        except ValueError as exc:
            raise ElfError(str(exc)) from None
        segs.append(seg)
        if rt.opts.preload and p.filesz:
            fobj.preload(page_down(p.offset), p.offset + p.filesz)
    return segs


def load_program(rt, space: AddressSpace, path: str, argv: list[str], envp: list[str]) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()
    elf = parse_elf(data)
    bias = ET_DYN_BASE if elf.type == ET_DYN else 0
    segs = map_elf(rt, space, path, elf, bias)
    if not segs:
        raise ElfError("no loadable segments")
    image = Image(path, bias + elf.entry, bias + elf.entry, bias + elf.phdr_vaddr(),
                  len(elf.phdrs), bias, segments=segs)
    image.brk = max(s.end for s in segs)
    space.brk_start = space.brk = image.brk
    if elf.interp:
        ipath = resolve_interp(elf.interp, rt.opts.lib_dir)
        with open(ipath, "rb") as fh:
            ielf = parse_elf(fh.read())
        if ielf.type != ET_DYN:
            raise ElfError(f"interpreter {ipath} is not position independent")
        map_elf(rt, space, ipath, ielf, INTERP_BASE)
        image.interp_base = INTERP_BASE
        image.start_pc = INTERP_BASE + ielf.entry
    space.add_segment(Segment(STACK_TOP - STACK_SIZE, STACK_TOP, abi.PROT_READ | abi.PROT_WRITE,
                              "stack", grows_down=True))
    image.sp = build_stack(space, image, argv, envp, rt.rng.randbytes(16))
    space.commit()
    return image


def resolve_interp(interp: str, lib_dir: Optional[str]) -> str:
    candidates = []
    if lib_dir:
        candidates += [os.path.join(lib_dir, os.path.basename(interp)), os.path.join(lib_dir, interp.lstrip("/"))]
    candidates.append(interp)
    for c in candidates:
        if os.path.isfile(c):
            return c
    raise ElfError(f"interpreter {interp} not found (library dir: {lib_dir})")


def stack_blob(image: Image, argv: list[str], envp: list[str], random16: bytes, top: int = STACK_TOP):
    """Lay out strings, auxv and pointer vectors below ``top``.

    Returns (sp, blob) where blob covers [sp, top).
    """
    strings = bytearray()
    addrs = {}

    def put(key, raw: bytes):
        strings[:0] = raw
        addrs[key] = len(strings)   # distance below top, fixed up later

    put("execfn", os.fsencode(image.path) + b"\0")
    for i, s in reversed(list(enumerate(envp))):
        put(("env", i), s.encode() + b"\0")
    for i, s in reversed(list(enumerate(argv))):
        put(("arg", i), s.encode() + b"\0")
    put("random", random16)

    def at(key):
        return top - addrs[key]

    auxv = [(abi.AT_PHDR, image.phdr), (abi.AT_PHENT, 56), (abi.AT_PHNUM, image.phnum),
            (abi.AT_PAGESZ, PAGE), (abi.AT_BASE, image.interp_base), (abi.AT_FLAGS, 0),
            (abi.AT_ENTRY, image.entry), (abi.AT_UID, 1000), (abi.AT_EUID, 1000), (abi.AT_GID, 1000),
            (abi.AT_EGID, 1000), (abi.AT_HWCAP, abi.HWCAP_RV64IMA), (abi.AT_CLKTCK, 100),
            (abi.AT_SECURE, 0), (abi.AT_RANDOM, at("random")), (abi.AT_EXECFN, at("execfn")),
            (abi.AT_NULL, 0)]
    vec = [len(argv)] + [at(("arg", i)) for i in range(len(argv))] + [0]
    vec += [at(("env", i)) for i in range(len(envp))] + [0]
    for k, v in auxv:
        vec += [k, v]
    strings_lo = (top - len(strings)) & ~15
    sp = (strings_lo - 8 * len(vec)) & ~15
    blob = bytearray(top - sp)
    struct.pack_into(f"<{len(vec)}Q", blob, 0, *vec)
    blob[top - len(strings) - sp:] = strings
    return sp, bytes(blob)


def build_stack(space: AddressSpace, image: Image, argv: list[str], envp: list[str], random16: bytes) -> int:
    sp, blob = stack_blob(image, argv, envp, random16)
    space.write(sp, blob)
    return sp

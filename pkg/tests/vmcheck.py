"""Random VM operation sequences and an independent Sv39 walker.

The walker reads raw target physical memory and decodes PTEs from the
privileged-spec bit layout directly, sharing no code with the runtime.
"""

from __future__ import annotations

import random
import struct

from fase.runtime.abi import MAP_ANONYMOUS, MAP_FIXED, MAP_PRIVATE, MAP_SHARED, PROT_EXEC, PROT_READ, PROT_WRITE
from fase.runtime.vm import VirtualMemory
from fase.session import in_process
from fase.target import Access


def walk(mem: bytes, mem_base: int, satp: int) -> dict[int, int]:
    """All valid leaf PTEs reachable from satp, as {vpn: pte}."""
    assert satp >> 60 == 8, "not Sv39"
    root = satp & ((1 << 44) - 1)
    leaves: dict[int, int] = {}

    def entry(table_ppn: int, i: int) -> int:
        off = table_ppn * 4096 - mem_base + 8 * i
        return struct.unpack_from("<Q", mem, off)[0]

    def visit(table_ppn: int, level: int, prefix: int) -> None:
        for i in range(512):
            pte = entry(table_ppn, i)
            if not pte & 1:
                continue
            vpn = (prefix << 9) | i
            if pte & 0b1110:     # R, W or X set: leaf
                assert level == 0, f"superpage at level {level}"
                leaves[vpn] = pte
            else:
                assert level > 0, "pointer PTE at the last level"
                visit((pte >> 10) & ((1 << 44) - 1), level - 1, vpn)

    visit(root, 2, 0)
    return leaves


def software_leaves(space) -> dict[int, int]:
    out = {}
    tables = space.tables
    for i2, e2 in enumerate(tables.words[tables.root]):
        if not e2 & 1:
            continue
        t1 = (e2 >> 10) & ((1 << 44) - 1)
        for i1, e1 in enumerate(tables.words[t1]):
            if not e1 & 1:
                continue
            t0 = (e1 >> 10) & ((1 << 44) - 1)
            for i0, e0 in enumerate(tables.words[t0]):
                if e0 & 1:
                    out[(i2 << 18) | (i1 << 9) | i0] = e0
    return out


PROTS = [PROT_READ, PROT_READ | PROT_WRITE, PROT_READ | PROT_EXEC, 0, PROT_READ | PROT_WRITE | PROT_EXEC]


def random_ops(seed: int, n_ops: int = 200, file_path: str | None = None, n_cores: int = 2):
    """Apply ``n_ops`` random mmap/munmap/mprotect/brk/fault operations."""
    rng = random.Random(seed)
    sess = in_process(n_cores, mem_size=64 << 20)
    vm = VirtualMemory(sess.client, sess.mem_base, sess.mem_size, n_cores)
    space = vm.new_space()
    space.brk_start = space.brk = 0x1000_0000
    vm.loaded_satp[0] = space.satp
    sess.client.mmu_set(0, space.satp)
    fobj = vm.file_for(file_path) if file_path else None
    counts = {"mmap": 0, "munmap": 0, "mprotect": 0, "brk": 0, "fault": 0}
    for _ in range(n_ops):
        op = rng.choices(list(counts), weights=[3, 2, 2, 1, 6])[0]
        counts[op] += 1
        if op == "mmap":
            pages = rng.randrange(1, 40)
            prot = rng.choice(PROTS)
            flags = MAP_PRIVATE | MAP_ANONYMOUS
            f = None
            if fobj is not None and rng.random() < 0.4:
                f, flags = fobj, rng.choice([MAP_PRIVATE, MAP_SHARED])
            if space.segments and rng.random() < 0.3:
                # fixed mapping over part of an existing one
                seg = rng.choice(space.segments)
                addr = seg.start + rng.randrange(max(1, (seg.end - seg.start) // 4096)) * 4096
                space.mmap(addr, pages * 4096, prot, flags | MAP_FIXED, f, 0)
            else:
                space.mmap(0, pages * 4096, prot, flags, f, 0)
        elif op == "munmap" and space.segments:
            seg = rng.choice(space.segments)
            lo = seg.start + rng.randrange((seg.end - seg.start) // 4096) * 4096
            space.munmap(lo, rng.randrange(1, 20) * 4096)
        elif op == "mprotect" and space.segments:
            seg = rng.choice(space.segments)
            lo = seg.start + rng.randrange((seg.end - seg.start) // 4096) * 4096
            space.mprotect(lo, min(seg.end - lo, rng.randrange(1, 10) * 4096), rng.choice(PROTS))
        elif op == "brk":
            space.set_brk(space.brk_start + rng.randrange(0, 64) * 4096 + rng.randrange(4096))
        elif space.segments:
            seg = rng.choice(space.segments)
            vaddr = seg.start + rng.randrange(seg.end - seg.start)
            space.handle_fault(vaddr, rng.choice([Access.READ, Access.WRITE, Access.EXEC]))
    return sess, vm, space, counts

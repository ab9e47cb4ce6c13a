import os

import pytest

from fase.runtime.abi import MAP_ANONYMOUS, MAP_FIXED, MAP_PRIVATE, MAP_SHARED, PROT_READ, PROT_WRITE
from fase.runtime.vm import (PRELOAD_PAGES, Fault, PhysAllocator, OutOfMemory, Segment, VirtualMemory,
                             pte_for, Page)
from fase.session import in_process
from fase.target import Access

from vmcheck import random_ops, software_leaves, walk

RW = PROT_READ | PROT_WRITE
ANON = MAP_PRIVATE | MAP_ANONYMOUS


@pytest.fixture
def env():
    sess = in_process(2, mem_size=32 << 20)
    vm = VirtualMemory(sess.client, sess.mem_base, sess.mem_size, 2)
    space = vm.new_space()
    vm.loaded_satp[0] = space.satp
    return sess, vm, space


@pytest.fixture
def data_file(tmp_path):
    p = tmp_path / "data.bin"
    p.write_bytes(bytes((i * 31) & 0xFF for i in range(3 * 4096 + 100)))
    return str(p)


def test_allocator_refcounts():
    a = PhysAllocator(100, 3)
    p = a.alloc()
    assert p == 100
    a.incref(p)
    assert not a.decref(p)
    assert a.decref(p)
    [a.alloc() for _ in range(3)]
    with pytest.raises(OutOfMemory):
        a.alloc()


def test_segment_split_keeps_file_offset():
    s = Segment(0x10000, 0x14000, RW, offset=0x1000)
    hi = s.split(0x12000)
    assert (s.end, hi.start, hi.offset) == (0x12000, 0x12000, 0x3000)


def test_pte_flags_for_cow_and_none():
    seg = Segment(0, 0x1000, RW)
    assert pte_for(seg, Page(5, cow=True)) & 0b100 == 0   # W cleared while shared
    assert pte_for(seg, Page(5)) & 0b100
    assert pte_for(Segment(0, 0x1000, 0), Page(5)) == 0


def test_lazy_zero_fault_preloads(env):
    sess, vm, space = env
    addr = space.mmap(0, 64 * 4096, RW, ANON)
    assert space.handle_fault(addr, Access.WRITE) == "fixed"
    assert len(space.pages) == 1 + PRELOAD_PAGES
    assert space.handle_fault(addr + 4096, Access.READ) == "spurious"


def test_stack_preloads_downward(env):
    sess, vm, space = env
    space.add_segment(Segment(0x100_0000, 0x110_0000, RW, "stack", grows_down=True))
    space.handle_fault(0x10F_F000, Access.WRITE)
    assert min(space.pages) == (0x10F_F000 >> 12) - PRELOAD_PAGES


def test_segv_on_unmapped_or_forbidden(env):
    sess, vm, space = env
    addr = space.mmap(0, 4096, PROT_READ, ANON)
    assert space.handle_fault(addr, Access.WRITE) == "segv"
    assert space.handle_fault(0x1000, Access.READ) == "segv"


def test_user_copies_roundtrip(env):
    sess, vm, space = env
    addr = space.mmap(0, 8 * 4096, RW, ANON)
    blob = bytes(range(256)) * 20
    space.write(addr + 100, blob)
    space.write(addr + 7000, b"hi\0")
    assert space.read(addr + 100, len(blob)) == blob
    assert space.read_cstring(addr + 7000) == b"hi"
    with pytest.raises(Fault):
        space.read(addr + 8 * 4096 - 2, 4)


def test_private_file_mapping_is_cow(env, data_file):
    sess, vm, space = env
    f = vm.file_for(data_file)
    addr = space.mmap(0, 4 * 4096, RW, MAP_PRIVATE, f, 0)
    space.handle_fault(addr, Access.READ)
    page = space.pages[addr >> 12]
    assert page.buffer and page.cow and page.ppn == f.pages[0]
    before = sess.ledger.frames_by_opcode.get("PAGE_COPY", 0)
    space.handle_fault(addr, Access.WRITE)
    assert sess.ledger.frames_by_opcode["PAGE_COPY"] == before + 1
    assert space.pages[addr >> 12].ppn != f.pages[0]
    space.write(addr, b"XY")
    assert vm.read_phys(f.pages[0], 0, 2) != b"XY"   # file buffer untouched


def test_boundary_page_zero_fills(env, data_file):
    sess, vm, space = env
    f = vm.file_for(data_file)
    addr = space.mmap(0, 4 * 4096, PROT_READ, MAP_PRIVATE, f, 0)
    space.handle_fault(addr + 3 * 4096, Access.READ)
    raw = sess.target.mem.read(space.pages[(addr >> 12) + 3].ppn << 12, 4096)
    expect = f.data[3 * 4096:].ljust(4096, b"\0")
    assert raw == bytes(expect)
    assert vm.stats["fault_boundary"] == 1


def test_shared_mapping_writes_back(env, data_file):
    sess, vm, space = env
    f = vm.file_for(data_file)
    addr = space.mmap(0, 4096, RW, MAP_SHARED, f, 0)
    space.write(addr + 10, b"shared!")
    assert space.msync(addr, 4096) == 0
    with open(data_file, "rb") as fh:
        assert fh.read()[10:17] == b"shared!"


def test_mprotect_and_munmap_shoot_down_only_changed_ptes(env):
    sess, vm, space = env
    addr = space.mmap(0, 4 * 4096, RW, ANON)
    base = vm.stats["tlb_flushes"]
    space.mprotect(addr, 4096, PROT_READ)          # nothing resident yet
    assert vm.stats["tlb_flushes"] == base
    space.handle_fault(addr + 4096, Access.WRITE)
    space.munmap(addr + 4096, 4096)
    assert vm.stats["tlb_flushes"] == base + 1


def test_shootdown_targets_cores_with_matching_satp(env):
    sess, vm, space = env
    other = vm.new_space()
    vm.loaded_satp = [space.satp, other.satp]
    frames = sess.ledger.frames_by_opcode.get("MMU_SET", 0)
    vm.shootdown(space.satp)
    assert sess.ledger.frames_by_opcode["MMU_SET"] == frames + 1


def test_mmap_fixed_replaces_and_noreplace_refuses(env):
    sess, vm, space = env
    addr = space.mmap(0, 4 * 4096, RW, ANON)
    space.handle_fault(addr, Access.WRITE)
    assert space.mmap(addr, 4096, PROT_READ, ANON | MAP_FIXED) == addr
    assert space.find(addr).prot == PROT_READ
    assert (addr >> 12) not in space.pages
    assert space.mmap(addr, 4096, RW, ANON | 0x100000) < 0


def test_brk_grows_and_shrinks(env):
    sess, vm, space = env
    space.brk_start = space.brk = 0x2000_0000
    assert space.set_brk(0x2000_5000) == 0x2000_5000
    space.handle_fault(0x2000_4000, Access.WRITE)
    space.set_brk(0x2000_1000)
    assert all(v < 0x2000_1 for v in space.pages)
    assert space.set_brk(0x1000) == 0x2000_1000      # below start: unchanged


def test_large_tables_use_page_write(env):
    sess, vm, space = env
    addr = space.mmap(0, 300 * 4096, RW, ANON)
    for k in range(0, 300, 17):
        space.populate((addr >> 12) + k, space.find(addr), Access.WRITE)
    before = sess.ledger.frames_by_opcode.get("PAGE_WRITE", 0)
    space.commit()
    assert sess.ledger.frames_by_opcode.get("PAGE_WRITE", 0) == before + 1


@pytest.mark.parametrize("seed", range(3))
def test_random_ops_tables_match_walker(seed, data_file):
    sess, vm, space, counts = random_ops(seed, 200, data_file)
    hw = walk(bytes(sess.target.mem.data), sess.mem_base, space.satp)
    assert hw == software_leaves(space)
    assert {v: p.ppn for v, p in space.pages.items() if software_leaves(space).get(v)} == \
        {v: (pte >> 10) for v, pte in hw.items()}

"""Host-side virtual memory: segments, a software page table, and its Sv39 image.

The host is the only owner of page tables. Target memory is touched solely
through the client's word and page requests; the Sv39 tables that the target
walks are a materialized copy of the software table, kept in a host mirror so
only changed words go over the wire.
"""

from __future__ import annotations

import bisect
import errno
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .. import sv39
from ..target import Access
from .abi import MAP_ANONYMOUS, MAP_FIXED, MAP_FIXED_NOREPLACE, MAP_PRIVATE, MAP_SHARED
from .abi import PROT_EXEC, PROT_READ, PROT_WRITE

log = logging.getLogger(__name__)

PAGE = 4096
PAGE_SHIFT = 12
USER_TOP = 1 << 38
MMAP_TOP = 0x3F_0000_0000
TRAMPOLINE = 0x3F_FFFF_F000
STACK_TOP = TRAMPOLINE
STACK_SIZE = 8 << 20
PRELOAD_PAGES = 16
SMALL_COPY = 256
# fresh table pages with more live entries than this go out as one PageWrite
TABLE_PAGE_WRITE_MIN = 200
_WORD = 20   # MemRead/MemWrite request + response bytes
_PAGE_WRITE = 4110


def page_down(x: int) -> int:
    return x & ~(PAGE - 1)


def page_up(x: int) -> int:
    return (x + PAGE - 1) & ~(PAGE - 1)


class Fault(Exception):
    """A user pointer the runtime could not access (maps to -EFAULT)."""

    def __init__(self, vaddr: int):
        super().__init__(f"bad user address {vaddr:#x}")
        self.vaddr = vaddr


class OutOfMemory(Exception):
    pass


class PhysAllocator:
    """Refcounted frame allocator over target physical memory."""

    def __init__(self, base_ppn: int, n_pages: int):
        self.base_ppn = base_ppn
        self.n_pages = n_pages
        self._free = list(range(base_ppn + n_pages - 1, base_ppn - 1, -1))
        self.refs: dict[int, int] = {}

    def alloc(self) -> int:
        if not self._free:
            raise OutOfMemory("target physical memory exhausted")
        ppn = self._free.pop()
        self.refs[ppn] = 1
        return ppn

    def incref(self, ppn: int) -> None:
        self.refs[ppn] += 1

    def decref(self, ppn: int) -> bool:
        n = self.refs[ppn] - 1
        if n:
            self.refs[ppn] = n
            return False
        del self.refs[ppn]
        self._free.append(ppn)
        return True

    @property
    def in_use(self) -> int:
        return len(self.refs)


class FileObject:
    """Host copy of a file plus its target-resident buffer pages."""

    def __init__(self, vm: "VirtualMemory", key, path: str, data: bytes):
        self.vm = vm
        self.key = key
        self.path = path
        self.data = bytearray(data)
        self.pages: dict[int, int] = {}

    @property
    def size(self) -> int:
        return len(self.data)

    def page_bytes(self, index: int) -> bytes:
        chunk = bytes(self.data[index * PAGE:(index + 1) * PAGE])
        return chunk.ljust(PAGE, b"\0")

    def full_page(self, index: int) -> bool:
        return (index + 1) * PAGE <= self.size

    def ensure_buffer(self, index: int) -> int:
        ppn = self.pages.get(index)
        if ppn is None:
            vm = self.vm
            ppn = vm.alloc.alloc()
            vm.port.page_write(vm.cpu(), ppn, self.page_bytes(index))
            self.pages[index] = ppn
            vm.stats["buffer_pages"] += 1
        return ppn

    def preload(self, start: int = 0, end: Optional[int] = None) -> int:
        end = self.size if end is None else min(end, self.size)
        n = 0
        for index in range(start // PAGE, page_up(end) // PAGE):
            if index not in self.pages:
                self.ensure_buffer(index)
                n += 1
        return n

    def write_back(self, index: int) -> None:
        """Pull a buffer page back into the host copy and the host file."""
        ppn = self.pages.get(index)
        if ppn is None:
            return
        vm = self.vm
        raw = vm.port.page_read(vm.cpu(), ppn)
        lo = index * PAGE
        n = max(0, min(PAGE, self.size - lo))
        if n == 0 or raw[:n] == self.data[lo:lo + n]:
            return
        self.data[lo:lo + n] = raw[:n]
        try:
            fd = os.open(self.path, os.O_WRONLY)
            try:
                os.pwrite(fd, raw[:n], lo)
            finally:
                os.close(fd)
        except OSError as exc:
            log.warning("write-back to %s failed: %s", self.path, exc)


@dataclass
class Segment:
    start: int
    end: int
    prot: int
    kind: str = "anon"
    shared: bool = False
    file: Optional[FileObject] = None
    offset: int = 0          # file offset backing ``start``
    file_end: int = 0        # bytes at or past this vaddr are zero fill
    grows_down: bool = False

    def contains(self, vaddr: int) -> bool:
        return self.start <= vaddr < self.end

    def split(self, at: int) -> "Segment":
        """Cut at ``at``; self keeps the low part, the high part is returned."""
        hi = Segment(at, self.end, self.prot, self.kind, self.shared, self.file,
                     self.offset + (at - self.start), self.file_end, self.grows_down)
        self.end = at
        return hi

    def file_index(self, vpn: int) -> int:
        return (self.offset + (vpn << PAGE_SHIFT) - self.start) // PAGE

    def page_class(self, vpn: int) -> str:
        """'zero', 'buffer' (whole file page) or 'boundary' (file bytes plus zero fill)."""
        if self.file is None:
            return "zero"
        if self.shared:
            return "buffer"
        lo = vpn << PAGE_SHIFT
        if lo >= self.file_end:
            return "zero"
        if lo + PAGE <= self.file_end and self.file.full_page(self.file_index(vpn)):
            return "buffer"
        return "boundary"

    def host_content(self, vpn: int) -> bytes:
        """Page content as a fresh fault would produce it, computed on the host."""
        if self.file is None:
            return bytes(PAGE)
        lo = vpn << PAGE_SHIFT
        n = max(0, min(PAGE, self.file_end - lo))
        off = self.offset + lo - self.start
        chunk = bytes(self.file.data[off:off + n])
        return chunk.ljust(PAGE, b"\0")


@dataclass
class Page:
    ppn: int
    cow: bool = False
    buffer: bool = False     # maps a file buffer page directly


def pte_for(seg: Segment, page: Page) -> int:
    prot = seg.prot
    if not prot & (PROT_READ | PROT_WRITE | PROT_EXEC):
        return 0
    flags = sv39.PTE_V | sv39.PTE_U | sv39.PTE_A
    if prot & (PROT_READ | PROT_WRITE):
        flags |= sv39.PTE_R
    if prot & PROT_WRITE:
        flags |= sv39.PTE_D
        if not page.cow:
            flags |= sv39.PTE_W
    if prot & PROT_EXEC:
        flags |= sv39.PTE_X
    return sv39.make_pte(page.ppn, flags)


class PageTables:
    """Sv39 tables for one address space, mirrored on the host."""

    def __init__(self, vm: "VirtualMemory"):
        self.vm = vm
        self.words: dict[int, list[int]] = {}
        self.dirty: dict[int, set[int]] = {}
        self.fresh: set[int] = set()
        self.needs_flush = False
        self.root = self._new_table()

    def _new_table(self) -> int:
        ppn = self.vm.alloc.alloc()
        self.words[ppn] = [0] * 512
        self.fresh.add(ppn)
        return ppn

    def _set(self, table: int, idx: int, value: int) -> None:
        self.words[table][idx] = value
        self.dirty.setdefault(table, set()).add(idx)

    def _child(self, table: int, idx: int, create: bool) -> Optional[int]:
        e = self.words[table][idx]
        if e & sv39.PTE_V:
            return sv39.pte_ppn(e)
        if not create:
            return None
        ppn = self._new_table()
        self._set(table, idx, sv39.make_pte(ppn, sv39.PTE_V))
        return ppn

    def leaf(self, vpn: int) -> int:
        t = self.root
        for shift in (18, 9):
            t = self._child(t, (vpn >> shift) & 511, False)
            if t is None:
                return 0
        return self.words[t][vpn & 511]

    def set_leaf(self, vpn: int, pte: int) -> None:
        t = self.root
        for shift in (18, 9):
            t = self._child(t, (vpn >> shift) & 511, pte != 0)
            if t is None:
                return
        old = self.words[t][vpn & 511]
        if old == pte:
            return
        if old & sv39.PTE_V:
            self.needs_flush = True
        self._set(t, vpn & 511, pte)

    def flush(self) -> bool:
        """Write pending changes to the target. True if TLBs must be flushed."""
        vm = self.vm
        port, cpu = vm.port, vm.cpu()
        # fresh tables are complete before anything links to them
        for ppn in sorted(self.fresh):
            words = self.words[ppn]
            live = [i for i, w in enumerate(words) if w]
            if len(live) > TABLE_PAGE_WRITE_MIN:
                port.page_write(cpu, ppn, b"".join(w.to_bytes(8, "little") for w in words))
            else:
                port.page_set(cpu, ppn, 0)
                for i in live:
                    port.mem_write(cpu, (ppn << PAGE_SHIFT) + 8 * i, words[i])
            vm.stats["table_pages"] += 1
        for ppn in sorted(self.dirty):
            if ppn in self.fresh:
                continue
            words = self.words[ppn]
            for i in sorted(self.dirty[ppn]):
                port.mem_write(cpu, (ppn << PAGE_SHIFT) + 8 * i, words[i])
                vm.stats["pte_writes"] += 1
        self.fresh.clear()
        self.dirty.clear()
        flush, self.needs_flush = self.needs_flush, False
        return flush

    def release(self) -> None:
        for ppn in self.words:
            self.vm.alloc.decref(ppn)
        self.words.clear()


class AddressSpace:
    _next_id = 1

    def __init__(self, vm: "VirtualMemory"):
        self.vm = vm
        self.asid = AddressSpace._next_id
        AddressSpace._next_id += 1
        self.segments: list[Segment] = []
        self.pages: dict[int, Page] = {}
        self.tables = PageTables(vm)
        self.brk_start = 0
        self.brk = 0
        self.mmap_top = MMAP_TOP

    @property
    def satp(self) -> int:
        return sv39.make_satp(self.tables.root, self.asid & 0xFFFF)

    # ----------------------------------------------------------- segments
    def find(self, vaddr: int) -> Optional[Segment]:
        i = bisect.bisect_right([s.start for s in self.segments], vaddr) - 1
        if i >= 0 and self.segments[i].contains(vaddr):
            return self.segments[i]
        return None

    def overlaps(self, start: int, end: int) -> bool:
        return any(s.start < end and start < s.end for s in self.segments)

    def add_segment(self, seg: Segment) -> Segment:
        if seg.start % PAGE or seg.end % PAGE or seg.end <= seg.start:
            raise ValueError(f"bad segment bounds {seg.start:#x}-{seg.end:#x}")
        if self.overlaps(seg.start, seg.end):
            raise ValueError(f"segment {seg.start:#x}-{seg.end:#x} overlaps")
        bisect.insort(self.segments, seg, key=lambda s: s.start)
        return seg

    def _carve(self, start: int, end: int) -> list[Segment]:
        """Split segments at start/end and return those inside [start, end)."""
        out = []
        for seg in list(self.segments):
            if seg.end <= start or seg.start >= end:
                continue
            if seg.start < start:
                seg = seg.split(start)
                bisect.insort(self.segments, seg, key=lambda s: s.start)
            if seg.end > end:
                bisect.insort(self.segments, seg.split(end), key=lambda s: s.start)
            out.append(seg)
        return out

    def find_free(self, length: int, hint: int = 0) -> Optional[int]:
        if hint and hint % PAGE == 0 and hint + length <= USER_TOP and not self.overlaps(hint, hint + length):
            return hint
        floor = page_up(self.brk) + (64 << 20) if self.brk else 0x1000_0000
        cand = self.mmap_top - length
        for seg in sorted(self.segments, key=lambda s: s.end, reverse=True):
            if cand < floor:
                return None
            if seg.start < cand + length and cand < seg.end:
                cand = seg.start - length
        return cand if cand >= floor else None

    # --------------------------------------------------------------- pages
    def _install(self, vpn: int, seg: Segment, page: Page) -> None:
        self.pages[vpn] = page
        self.tables.set_leaf(vpn, pte_for(seg, page))
        if seg.prot & PROT_EXEC:
            self.vm.code_epoch += 1

    def _release(self, vpn: int) -> None:
        page = self.pages.pop(vpn, None)
        if page is not None:
            self.vm.alloc.decref(page.ppn)
        self.tables.set_leaf(vpn, 0)

    def _zero_page(self, vpn: int, seg: Segment) -> None:
        vm = self.vm
        ppn = vm.alloc.alloc()
        vm.port.page_set(vm.cpu(), ppn, 0)
        self._install(vpn, seg, Page(ppn))

    def populate(self, vpn: int, seg: Segment, access: Access) -> Page:
        vm = self.vm
        port, cpu = vm.port, vm.cpu()
        kind = seg.page_class(vpn)
        if kind == "zero":
            self._zero_page(vpn, seg)
            vm.stats["fault_zero"] += 1
            step = -1 if seg.grows_down else 1
            for k in range(1, PRELOAD_PAGES + 1):
                v = vpn + step * k
                if not seg.contains(v << PAGE_SHIFT):
                    break
                if v not in self.pages and seg.page_class(v) == "zero":
                    self._zero_page(v, seg)
                    vm.stats["preloaded"] += 1
            return self.pages[vpn]
        if kind == "buffer":
            buf = seg.file.ensure_buffer(seg.file_index(vpn))
            if seg.shared or access is not Access.WRITE:
                vm.alloc.incref(buf)
                page = Page(buf, cow=not seg.shared and bool(seg.prot & PROT_WRITE), buffer=True)
            else:
                ppn = vm.alloc.alloc()
                port.page_copy(cpu, buf, ppn)
                page = Page(ppn)
            vm.stats["fault_file"] += 1
            self._install(vpn, seg, page)
            return page
        # boundary: file bytes then zero fill
        content = seg.host_content(vpn)
        ppn = vm.alloc.alloc()
        buf = seg.file.pages.get(seg.file_index(vpn))
        tail = content.rstrip(b"\0")
        zero_words = (PAGE - len(tail)) // 8
        if buf is not None and _WORD * (1 + zero_words) < _PAGE_WRITE:
            port.page_copy(cpu, buf, ppn)
            raw = seg.file.page_bytes(seg.file_index(vpn))
            for i in range(0, PAGE, 8):
                if raw[i:i + 8] != content[i:i + 8]:
                    port.mem_write(cpu, (ppn << PAGE_SHIFT) + i, int.from_bytes(content[i:i + 8], "little"))
        else:
            port.page_write(cpu, ppn, content)
        vm.stats["fault_boundary"] += 1
        page = Page(ppn)
        self._install(vpn, seg, page)
        return page

    def break_cow(self, vpn: int, seg: Segment, page: Page) -> None:
        vm = self.vm
        if vm.alloc.refs[page.ppn] == 1 and not page.buffer:
            page.cow = False
        else:
            ppn = vm.alloc.alloc()
            vm.port.page_copy(vm.cpu(), page.ppn, ppn)
            vm.alloc.decref(page.ppn)
            page.ppn, page.cow, page.buffer = ppn, False, False
            vm.stats["fault_cow"] += 1
        self.tables.set_leaf(vpn, pte_for(seg, page))

    def handle_fault(self, vaddr: int, access: Access) -> str:
        """Resolve a page fault. Returns 'fixed', 'spurious' or 'segv'."""
        seg = self.find(vaddr)
        need = {Access.READ: PROT_READ | PROT_WRITE, Access.WRITE: PROT_WRITE, Access.EXEC: PROT_EXEC}[access]
        if seg is None or not seg.prot & need:
            return "segv"
        vpn = vaddr >> PAGE_SHIFT
        page = self.pages.get(vpn)
        if page is None:
            self.populate(vpn, seg, access)
        elif access is Access.WRITE and page.cow:
            self.break_cow(vpn, seg, page)
        else:
            return "spurious"
        self.commit()
        return "fixed"

    def commit(self) -> None:
        """Materialize pending PTE changes and shoot down stale TLBs."""
        if self.tables.flush():
            self.vm.shootdown(self.satp)

    # ---------------------------------------------------------- user copies
    def _chunks(self, vaddr: int, n: int):
        while n > 0:
            off = vaddr & (PAGE - 1)
            k = min(n, PAGE - off)
            yield vaddr >> PAGE_SHIFT, off, k
            vaddr += k
            n -= k

    def _check(self, vaddr: int, n: int, prot: int) -> None:
        if vaddr < 0 or vaddr + n > USER_TOP:
            raise Fault(vaddr)
        for vpn, off, k in self._chunks(vaddr, n):
            seg = self.find(vpn << PAGE_SHIFT)
            if seg is None or not seg.prot & prot:
                raise Fault((vpn << PAGE_SHIFT) + off)

    def read(self, vaddr: int, n: int) -> bytes:
        if n == 0:
            return b""
        self._check(vaddr, n, PROT_READ | PROT_WRITE)
        vm = self.vm
        out = bytearray()
        for vpn, off, k in self._chunks(vaddr, n):
            page = self.pages.get(vpn)
            if page is not None:
                out += vm.read_phys(page.ppn, off, k)
                continue
            seg = self.find(vpn << PAGE_SHIFT)
            if seg.shared and seg.file is not None and seg.file_index(vpn) in seg.file.pages:
                out += vm.read_phys(seg.file.pages[seg.file_index(vpn)], off, k)
            else:
                out += seg.host_content(vpn)[off:off + k]
        return bytes(out)

    def write(self, vaddr: int, data: bytes) -> None:
        if not data:
            return
        self._check(vaddr, len(data), PROT_WRITE)
        vm = self.vm
        pos = 0
        for vpn, off, k in self._chunks(vaddr, len(data)):
            chunk = data[pos:pos + k]
            pos += k
            seg = self.find(vpn << PAGE_SHIFT)
            page = self.pages.get(vpn)
            if page is None and k >= SMALL_COPY and not seg.shared:
                content = bytearray(seg.host_content(vpn))
                content[off:off + k] = chunk
                ppn = vm.alloc.alloc()
                vm.port.page_write(vm.cpu(), ppn, bytes(content))
                self._install(vpn, seg, Page(ppn))
                continue
            if page is None:
                page = self.populate(vpn, seg, Access.WRITE)
            elif page.cow:
                self.break_cow(vpn, seg, page)
            vm.write_phys(page.ppn, off, chunk)
        self.commit()

    def read_cstring(self, vaddr: int, limit: int = 4096) -> bytes:
        out = bytearray()
        while len(out) < limit:
            n = min(PAGE - (vaddr & (PAGE - 1)), 64)
            chunk = self.read(vaddr, n)
            z = chunk.find(b"\0")
            if z >= 0:
                return bytes(out + chunk[:z])
            out += chunk
            vaddr += n
        raise Fault(vaddr)

    # ------------------------------------------------------ mapping changes
    def map_segment(self, seg: Segment) -> int:
        self.add_segment(seg)
        return seg.start

    def unmap(self, start: int, end: int) -> None:
        for seg in self._carve(start, end):
            if seg.shared and seg.file is not None and seg.prot & PROT_WRITE:
                self._write_back(seg, seg.start, seg.end)
            self.segments.remove(seg)
        for vpn in [v for v in self.pages if start >> PAGE_SHIFT <= v < end >> PAGE_SHIFT]:
            self._release(vpn)
        self.commit()

    def _write_back(self, seg: Segment, start: int, end: int) -> None:
        for vpn in range(start >> PAGE_SHIFT, end >> PAGE_SHIFT):
            if vpn in self.pages:
                seg.file.write_back(seg.file_index(vpn))

    def protect(self, start: int, end: int, prot: int) -> int:
        covered = sum(min(s.end, end) - max(s.start, start) for s in self.segments
                      if s.start < end and start < s.end)
        if covered != end - start:
            return -errno.ENOMEM
        for seg in self._carve(start, end):
            seg.prot = prot
            for vpn in range(seg.start >> PAGE_SHIFT, seg.end >> PAGE_SHIFT):
                page = self.pages.get(vpn)
                if page is not None:
                    self.tables.set_leaf(vpn, pte_for(seg, page))
                    if prot & PROT_EXEC:
                        self.vm.code_epoch += 1
        self.commit()
        return 0

    def mmap(self, addr: int, length: int, prot: int, flags: int,
             file: Optional[FileObject] = None, offset: int = 0) -> int:
        if length <= 0 or offset % PAGE:
            return -errno.EINVAL
        kind = flags & (MAP_SHARED | MAP_PRIVATE)
        if kind not in (MAP_SHARED, MAP_PRIVATE):
            return -errno.EINVAL
        if not flags & MAP_ANONYMOUS and file is None:
            return -errno.EBADF
        length = page_up(length)
        if flags & (MAP_FIXED | MAP_FIXED_NOREPLACE):
            if addr % PAGE or addr + length > USER_TOP:
                return -errno.EINVAL
            if self.overlaps(addr, addr + length):
                if flags & MAP_FIXED_NOREPLACE:
                    return -errno.EEXIST
                self.unmap(addr, addr + length)
            start = addr
        else:
            start = self.find_free(length, page_down(addr))
            if start is None:
                return -errno.ENOMEM
        seg = Segment(start, start + length, prot, "file" if file else "anon",
                      shared=bool(kind == MAP_SHARED and file is not None))
        if file is not None and not flags & MAP_ANONYMOUS:
            seg.file = file
            seg.offset = offset
            seg.file_end = start + max(0, file.size - offset)
        self.add_segment(seg)
        self.commit()
        return start

    def munmap(self, addr: int, length: int) -> int:
        if addr % PAGE or length <= 0:
            return -errno.EINVAL
        self.unmap(addr, addr + page_up(length))
        return 0

    def mprotect(self, addr: int, length: int, prot: int) -> int:
        if addr % PAGE:
            return -errno.EINVAL
        if length == 0:
            return 0
        return self.protect(addr, addr + page_up(length), prot)

    def msync(self, addr: int, length: int) -> int:
        if addr % PAGE:
            return -errno.EINVAL
        end = addr + page_up(length)
        segs = [s for s in self.segments if s.start < end and addr < s.end]
        if sum(min(s.end, end) - max(s.start, addr) for s in segs) != end - addr:
            return -errno.ENOMEM
        for s in segs:
            if s.shared and s.file is not None:
                self._write_back(s, max(s.start, addr), min(s.end, end))
        return 0

    def set_brk(self, new: int) -> int:
        if new < self.brk_start:
            return self.brk
        old_end, new_end = page_up(self.brk), page_up(new)
        if new_end > old_end:
            if self.overlaps(old_end, new_end):
                return self.brk
            heap = self.find(old_end - 1) if old_end > self.brk_start else None
            if heap is not None and heap.kind == "heap":
                heap.end = new_end
            else:
                self.add_segment(Segment(old_end, new_end, PROT_READ | PROT_WRITE, "heap"))
        elif new_end < old_end:
            self.unmap(new_end, old_end)
        self.brk = new
        return new

    def release(self) -> None:
        for vpn in list(self.pages):
            self.vm.alloc.decref(self.pages.pop(vpn).ppn)
        self.tables.release()
        self.segments.clear()


@dataclass
class VirtualMemory:
    """Physical frames, file caches and address spaces of one target."""

    port: object
    mem_base: int
    mem_size: int
    n_cores: int = 1
    cpu: Callable[[], int] = lambda: 0
    stats: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.alloc = PhysAllocator(self.mem_base >> PAGE_SHIFT, self.mem_size >> PAGE_SHIFT)
        self.files: dict[object, FileObject] = {}
        self.loaded_satp = [0] * self.n_cores
        self.code_epoch = 0

    def new_space(self) -> AddressSpace:
        return AddressSpace(self)

    def file_for(self, path: str, host_fd: Optional[int] = None) -> FileObject:
        st = os.fstat(host_fd) if host_fd is not None else os.stat(path)
        key = (st.st_dev, st.st_ino)
        obj = self.files.get(key)
        if obj is None:
            if host_fd is not None:
                data = os.pread(host_fd, st.st_size, 0) if st.st_size else b""
            else:
                with open(path, "rb") as fh:
                    data = fh.read()
            obj = self.files[key] = FileObject(self, key, path, data)
        return obj

    def shootdown(self, satp: int) -> None:
        for c in range(self.n_cores):
            if self.loaded_satp[c] == satp:
                self.port.tlb_flush(c, satp)
                self.stats["tlb_flushes"] += 1

    def read_phys(self, ppn: int, off: int, n: int) -> bytes:
        port, cpu = self.port, self.cpu()
        base = ppn << PAGE_SHIFT
        if n >= SMALL_COPY:
            return port.page_read(cpu, ppn)[off:off + n]
        lo, hi = off & ~7, (off + n + 7) & ~7
        raw = b"".join(port.mem_read(cpu, base + a).to_bytes(8, "little") for a in range(lo, hi, 8))
        return raw[off - lo:off - lo + n]

    def write_phys(self, ppn: int, off: int, data: bytes) -> None:
        port, cpu = self.port, self.cpu()
        base = ppn << PAGE_SHIFT
        n = len(data)
        if n >= SMALL_COPY:
            if n == PAGE:
                port.page_write(cpu, ppn, data)
            else:
                page = bytearray(port.page_read(cpu, ppn))
                page[off:off + n] = data
                port.page_write(cpu, ppn, bytes(page))
            return
        lo, hi = off & ~7, (off + n + 7) & ~7
        for a in range(lo, hi, 8):
            s, e = max(a, off), min(a + 8, off + n)
            if s == a and e == a + 8:
                word = data[a - off:a - off + 8]
            else:
                word = bytearray(port.mem_read(cpu, base + a).to_bytes(8, "little"))
                word[s - a:e - a] = data[s - off:e - off]
            port.mem_write(cpu, base + a, int.from_bytes(word, "little"))

"""Functional multi-core RV64 target exposing the Priv/Reg/Inject CPU bundles.

The target has no resident trap handler: a trap latches ``(cause, epc, tval)``,
raises the Priv signal and freezes fetch. Whoever owns the target (the
controller) is notified through :attr:`Target.on_trap`.

Time is a global tick counter. Cores run in parallel: one interleave round in
which at least one core retires advances the tick by the largest number of
instructions any core retired in that round (1 per retired instruction on a
single core).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Callable, Optional

from . import sv39
from .asm import CSR_CYCLE, CSR_INSTRET, CSR_SATP, CSR_TIME
from .isa import M64, Cause, Trap, decode, is_control_transfer

DEFAULT_MEM_BASE = 0x8000_0000
DEFAULT_MEM_SIZE = 256 << 20
TLB_ENTRIES = 16

_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")


class TrapCause(enum.IntEnum):
    """Trap causes a core can latch, in RISC-V exception-code encoding."""

    MISALIGNED_FETCH = Cause.MISALIGNED_FETCH
    ACCESS_FAULT_FETCH = Cause.ACCESS_FAULT_FETCH
    ILLEGAL_INSTRUCTION = Cause.ILLEGAL_INSTRUCTION
    BREAKPOINT = Cause.BREAKPOINT
    MISALIGNED_LOAD = Cause.MISALIGNED_LOAD
    ACCESS_FAULT_LOAD = Cause.ACCESS_FAULT_LOAD
    MISALIGNED_STORE = Cause.MISALIGNED_STORE
    ACCESS_FAULT_STORE = Cause.ACCESS_FAULT_STORE
    ECALL_FROM_U = Cause.ECALL_FROM_U
    PAGE_FAULT_FETCH = Cause.PAGE_FAULT_FETCH
    PAGE_FAULT_LOAD = Cause.PAGE_FAULT_LOAD
    PAGE_FAULT_STORE = Cause.PAGE_FAULT_STORE


PAGE_FAULTS = (TrapCause.PAGE_FAULT_FETCH, TrapCause.PAGE_FAULT_LOAD, TrapCause.PAGE_FAULT_STORE)


class Priv(enum.Enum):
    U = "U"
    S_TRAPPED = "S"


class Access(enum.Enum):
    READ = "r"
    WRITE = "w"
    EXEC = "x"


_FAULT_FOR = {Access.READ: Cause.PAGE_FAULT_LOAD, Access.WRITE: Cause.PAGE_FAULT_STORE,
              Access.EXEC: Cause.PAGE_FAULT_FETCH}
_ACCESS_FAULT_FOR = {Access.READ: Cause.ACCESS_FAULT_LOAD, Access.WRITE: Cause.ACCESS_FAULT_STORE,
                     Access.EXEC: Cause.ACCESS_FAULT_FETCH}


class SimulatorError(Exception):
    """Non-architectural failure, e.g. a physical access outside memory."""


class InjectRejected(Exception):
    pass


@dataclass(frozen=True)
class TrapLatch:
    cause: int
    epc: int
    tval: int


class Outcome(enum.Enum):
    RETIRED = "retired"
    TRAPPED = "trapped"
    STALLED = "stalled"


class PhysMemory:
    def __init__(self, base: int = DEFAULT_MEM_BASE, size: int = DEFAULT_MEM_SIZE):
        if size % sv39.PAGE_SIZE:
            raise ValueError("memory size must be page aligned")
        self.base = base
        self.size = size
        self.data = bytearray(size)

    def offset(self, paddr: int, n: int = 1) -> int:
        off = paddr - self.base
        if off < 0 or off + n > self.size:
            raise SimulatorError(f"physical access {paddr:#x}+{n} outside memory")
        return off

    def contains_ppn(self, ppn: int) -> bool:
        return self.base <= ppn << 12 and (ppn + 1) << 12 <= self.base + self.size

    def read(self, paddr: int, n: int) -> bytes:
        off = self.offset(paddr, n)
        return bytes(self.data[off:off + n])

    def write(self, paddr: int, payload: bytes) -> None:
        off = self.offset(paddr, len(payload))
        self.data[off:off + len(payload)] = payload

    def read_u64(self, paddr: int) -> int:
        return _U64.unpack_from(self.data, self.offset(paddr, 8))[0]

    def write_u64(self, paddr: int, value: int) -> None:
        _U64.pack_into(self.data, self.offset(paddr, 8), value & M64)


class CpuCore:
    """Architectural state of one hart plus its interface latches."""

    def __init__(self, cid: int, target: "Target"):
        self.cid = cid
        self.target = target
        self.mem = target.mem
        self.pc = 0
        self.x = [0] * 32
        self.priv = Priv.U
        self.satp = 0
        self.stop_fetch = True
        self.inject_slot: Optional[int] = None
        self.inject_bare = False
        self.trap_latch: Optional[TrapLatch] = None
        self.utick = 0
        self.retired = 0
        self.tlb: dict[int, tuple[int, int]] = {}
        # injected instructions run with debug privilege
        self.debug_mode = False
        self.bare_window = False
        self._fetch_vpn = -1
        self._fetch_base = 0

    # ---------------------------------------------------------- translation
    def flush_tlb(self) -> None:
        self.tlb.clear()
        self._fetch_vpn = -1

    def translate(self, vaddr: int, access: Access) -> int:
        """Return the physical address for ``vaddr`` or raise a page-fault Trap."""
        if self.bare_window or (self.satp >> 60) != sv39.SATP_MODE_SV39:
            return self._pma(vaddr, vaddr, access)
        if not sv39.is_canonical(vaddr):
            raise Trap(_FAULT_FOR[access], vaddr)
        vpn = (vaddr >> 12) & ((1 << 27) - 1)
        hit = self.tlb.get(vpn)
        if hit is None:
            hit = self._walk(vaddr, access)
            if len(self.tlb) >= TLB_ENTRIES:
                del self.tlb[next(iter(self.tlb))]  # FIFO: dicts keep insertion order
            self.tlb[vpn] = hit
        ppn, flags = hit
        if not self._allowed(flags, access):
            raise Trap(_FAULT_FOR[access], vaddr)
        return self._pma((ppn << 12) | (vaddr & 0xFFF), vaddr, access)

    def _pma(self, paddr: int, vaddr: int, access: Access) -> int:
        # anything outside RAM is an access fault, there is no MMIO
        mem = self.mem
        if not 0 <= paddr - mem.base < mem.size:
            raise Trap(_ACCESS_FAULT_FOR[access], vaddr)
        return paddr

    def _allowed(self, flags: int, access: Access) -> bool:
        if not self.debug_mode and not flags & sv39.PTE_U:
            return False
        if not flags & sv39.PTE_A:
            return False
        if access is Access.READ:
            return bool(flags & sv39.PTE_R)
        if access is Access.WRITE:
            return bool(flags & sv39.PTE_W) and bool(flags & sv39.PTE_D)
        return bool(flags & sv39.PTE_X)

    def _walk(self, vaddr: int, access: Access) -> tuple[int, int]:
        mem = self.mem
        table = sv39.satp_root(self.satp) << 12
        for level in (2, 1, 0):
            pte_addr = table + sv39.vpn_index(vaddr, level) * 8
            try:
                pte = mem.read_u64(pte_addr)
            except SimulatorError:
                raise Trap(_FAULT_FOR[access], vaddr) from None
            if not pte & sv39.PTE_V or (pte & sv39.PTE_W and not pte & sv39.PTE_R):
                raise Trap(_FAULT_FOR[access], vaddr)
            if pte & (sv39.PTE_R | sv39.PTE_X):
                ppn = sv39.pte_ppn(pte)
                if level:
                    span = (1 << (9 * level)) - 1
                    if ppn & span:
                        raise Trap(_FAULT_FOR[access], vaddr)  # misaligned superpage
                    ppn |= (vaddr >> 12) & span
                return ppn, pte & 0xFF
            table = sv39.pte_ppn(pte) << 12
        raise Trap(_FAULT_FOR[access], vaddr)

    # --------------------------------------------------------------- memory
    def load(self, vaddr: int, size: int) -> int:
        if (vaddr & 0xFFF) + size > 0x1000:
            return int.from_bytes(bytes(self.load(vaddr + i, 1) for i in range(size)), "little")
        paddr = self.translate(vaddr, Access.READ)
        mem = self.mem
        off = paddr - mem.base
        if off < 0 or off + size > mem.size:
            raise SimulatorError(f"physical load {paddr:#x} outside memory")
        return int.from_bytes(mem.data[off:off + size], "little")

    def store(self, vaddr: int, size: int, value: int) -> None:
        if (vaddr & 0xFFF) + size > 0x1000:
            # translate every byte first so a fault leaves memory untouched
            for i in range(size):
                self.translate(vaddr + i, Access.WRITE)
            for i in range(size):
                self.store(vaddr + i, 1, (value >> (8 * i)) & 0xFF)
            return
        paddr = self.translate(vaddr, Access.WRITE)
        self.target.phys_store(paddr, size, value)

    def _amo_addr(self, vaddr: int, width: int, access: Access) -> int:
        if vaddr % width:
            raise Trap(Cause.MISALIGNED_STORE if access is Access.WRITE else Cause.MISALIGNED_LOAD, vaddr)
        return self.translate(vaddr, access)

    def load_reserved(self, vaddr: int, width: int) -> int:
        paddr = self._amo_addr(vaddr, width, Access.READ)
        self.target.reservations[self.cid] = paddr
        return int.from_bytes(self.mem.read(paddr, width), "little")

    def store_conditional(self, vaddr: int, width: int, value: int) -> bool:
        paddr = self._amo_addr(vaddr, width, Access.WRITE)
        ok = self.target.reservations.pop(self.cid, None) == paddr
        if ok:
            self.target.phys_store(paddr, width, value)
        return ok

    def amo(self, vaddr: int, width: int, op: Callable[[int, int], int], src: int) -> int:
        paddr = self._amo_addr(vaddr, width, Access.WRITE)
        old = int.from_bytes(self.mem.read(paddr, width), "little")
        self.target.phys_store(paddr, width, op(old, src) & ((1 << (8 * width)) - 1))
        return old

    # ----------------------------------------------------------------- CSRs
    def read_csr(self, csr: int, word: int) -> int:
        if csr in (CSR_TIME, CSR_CYCLE):
            return self.target.tick
        if csr == CSR_INSTRET:
            return self.utick
        if csr == CSR_SATP and self.debug_mode:
            return self.satp
        raise Trap(Cause.ILLEGAL_INSTRUCTION, word)

    def write_csr(self, csr: int, value: int, word: int) -> None:
        if csr == CSR_SATP and self.debug_mode:
            mode = value >> 60
            if mode in (sv39.SATP_MODE_BARE, sv39.SATP_MODE_SV39):
                self.satp = value
                self._fetch_vpn = -1
            return
        raise Trap(Cause.ILLEGAL_INSTRUCTION, word)

    # ------------------------------------------------------------ execution
    def fetch(self, pc: int):
        if pc & 3:
            raise Trap(Cause.MISALIGNED_FETCH, pc)
        vpn = pc >> 12
        if vpn == self._fetch_vpn:
            paddr = self._fetch_base | (pc & 0xFFF)
        else:
            paddr = self.translate(pc, Access.EXEC)
            if (self.satp >> 60) == sv39.SATP_MODE_SV39:
                self._fetch_vpn = vpn
                self._fetch_base = paddr & ~0xFFF
        return self.target.decoded(paddr)

    def latch(self, cause: int, epc: int, tval: int) -> TrapLatch:
        latch = TrapLatch(cause, epc, tval & M64)
        self.trap_latch = latch
        self.priv = Priv.S_TRAPPED
        self.stop_fetch = True
        self.target.reservations.pop(self.cid, None)
        return latch

    def resume(self, pc: int) -> None:
        """Interrupt return: jump to ``pc`` in U mode and release fetch."""
        self.pc = pc & M64
        self.trap_latch = None
        self.priv = Priv.U
        self.stop_fetch = False
        self.target.reservations.pop(self.cid, None)

    def execute_injected(self) -> Optional[Trap]:
        word, self.inject_slot = self.inject_slot, None
        fn = self.target.decoded_word(word)
        self.debug_mode = True
        self.bare_window = self.inject_bare
        try:
            fn(self, self.pc)
        except Trap as trap:
            return trap
        finally:
            self.debug_mode = False
            self.bare_window = False
        return None

    def step_fetched(self) -> Optional[TrapLatch]:
        """Fetch and execute one instruction at pc. Returns a latch on trap."""
        pc = self.pc
        try:
            self.pc = self.fetch(pc)(self, pc)
        except Trap as trap:
            return self.latch(trap.cause, pc, trap.tval)
        self.retired += 1
        self.utick += 1
        return None


class Target:
    """All cores plus physical memory, driven by a single owner."""

    def __init__(self, n_cores: int = 1, mem_size: int = DEFAULT_MEM_SIZE,
                 mem_base: int = DEFAULT_MEM_BASE, quantum: int = 1):
        if n_cores < 1:
            raise ValueError("need at least one core")
        self.mem = PhysMemory(mem_base, mem_size)
        self.cores = [CpuCore(i, self) for i in range(n_cores)]
        self.quantum = quantum
        self.tick = 0
        self.reservations: dict[int, int] = {}
        self._icache: dict[int, dict[int, object]] = {}
        self._wordcache: dict[int, object] = {}
        self._rr = 0
        # called as on_trap(core_id, latch) -> True if the trap needs the host
        self.on_trap: Callable[[int, TrapLatch], bool] = lambda cid, latch: True
        # per-core retirement order log, enabled by tests
        self.trace: Optional[list[int]] = None

    @property
    def n_cores(self) -> int:
        return len(self.cores)

    def core(self, cid: int) -> CpuCore:
        if not 0 <= cid < len(self.cores):
            raise IndexError(f"no core {cid}")
        return self.cores[cid]

    # --------------------------------------------------- decoded-inst cache
    def decoded(self, paddr: int):
        page = self._icache.get(paddr >> 12)
        if page is None:
            page = self._icache[paddr >> 12] = {}
        fn = page.get(paddr)
        if fn is None:
            word = _U32.unpack_from(self.mem.data, self.mem.offset(paddr, 4))[0]
            fn = page[paddr] = self.decoded_word(word)
        return fn

    def decoded_word(self, word: int):
        fn = self._wordcache.get(word)
        if fn is None:
            if len(self._wordcache) > 1 << 16:
                self._wordcache.clear()
            fn = self._wordcache[word] = decode(word)
        return fn

    def sync_i(self) -> None:
        self._icache.clear()

    def invalidate_page(self, ppn: int) -> None:
        self._icache.pop(ppn, None)

    def phys_store(self, paddr: int, size: int, value: int) -> None:
        mem = self.mem
        off = paddr - mem.base
        if off < 0 or off + size > mem.size:
            raise SimulatorError(f"physical store {paddr:#x} outside memory")
        mem.data[off:off + size] = value.to_bytes(size, "little")
        if self._icache and (paddr >> 12) in self._icache:
            self._icache.pop(paddr >> 12)
        if self.reservations:
            granule = paddr & ~7
            for cid, g in list(self.reservations.items()):
                if g & ~7 == granule:
                    del self.reservations[cid]

    # ------------------------------------------------------- CPU interface
    def translate(self, cid: int, vaddr: int, access: Access):
        """Translate from ``cid``'s perspective. Returns paddr or a Trap."""
        try:
            return self.core(cid).translate(vaddr, access)
        except Trap as trap:
            return trap

    def reg_port(self, cid: int, idx: int, wen: bool = False, data: int = 0) -> int:
        core = self.core(cid)
        if not (core.trap_latch or core.stop_fetch):
            raise InjectRejected(f"core {cid} is running; reg port unavailable")
        if not 0 <= idx < 32:
            raise IndexError(f"register index {idx}")
        if wen and idx:
            core.x[idx] = data & M64
        return core.x[idx]

    def inject(self, cid: int, inst: int, bare: bool = False) -> bool:
        """Queue a non-branch instruction. Returns False when the slot is busy."""
        core = self.core(cid)
        if not core.stop_fetch:
            raise InjectRejected(f"core {cid} fetch not stopped")
        if is_control_transfer(inst):
            raise InjectRejected(f"instruction {inst:#010x} is a control transfer")
        if core.inject_slot is not None:
            return False
        core.inject_slot = inst & 0xFFFFFFFF
        core.inject_bare = bare
        return True

    def step(self, cid: int):
        """Advance one core by one instruction.

        Returns ``(Outcome, detail)`` where detail is a TrapLatch for traps
        and, for injected instructions that fault, the raw Trap.
        """
        core = self.core(cid)
        if core.inject_slot is not None:
            fault = core.execute_injected()
            return (Outcome.RETIRED, fault)
        if core.stop_fetch:
            return (Outcome.STALLED, None)
        latch = core.step_fetched()
        if latch is None:
            if self.trace is not None:
                self.trace.append(cid)
            return (Outcome.RETIRED, None)
        self.on_trap(cid, latch)
        return (Outcome.TRAPPED, latch)

    def runnable(self) -> list[CpuCore]:
        return [c for c in self.cores if not c.stop_fetch]

    def run(self, budget: Optional[int] = None) -> int:
        """Interleave runnable cores; return elapsed ticks.

        Stops when a trap is handed to the host, all cores stall, or
        ``budget`` ticks have elapsed.
        """
        start = self.tick
        q = self.quantum
        cores = self.cores
        n = len(cores)
        trace = self.trace
        while budget is None or self.tick - start < budget:
            running = [c for c in cores if not c.stop_fetch]
            if not running:
                break
            if len(running) == 1 and trace is None:
                core = running[0]
                limit = 1 << 30 if budget is None else budget - (self.tick - start)
                done, stop = self._burst(core, limit)
                self.tick += done
                if stop:
                    break
                continue
            best = 0
            stop = False
            while self._rr < n:
                core = cores[self._rr]
                self._rr += 1
                if core.stop_fetch:
                    continue
                done = 0
                while done < q and not core.stop_fetch:
                    latch = core.step_fetched()
                    if latch is not None:
                        if self.on_trap(core.cid, latch):
                            stop = True
                        break
                    done += 1
                    if trace is not None:
                        trace.append(core.cid)
                best = max(best, done)
                if stop:
                    break
            if self._rr >= n:
                self._rr = 0
            self.tick += best
            if stop:
                break
        return self.tick - start

    def _burst(self, core: CpuCore, limit: int) -> tuple[int, bool]:
        done = 0
        step = core.step_fetched
        on_trap = self.on_trap
        while done < limit:
            latch = step()
            if latch is not None:
                if on_trap(core.cid, latch):
                    return done, True
                if core.stop_fetch:
                    return done, False
                continue
            done += 1
        return done, False

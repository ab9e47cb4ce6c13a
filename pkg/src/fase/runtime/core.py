"""Host runtime: threads, scheduling and the event loop.

Each iteration drains delegated I/O completions, expires timers, places ready
threads on free cores, then waits for the next trap event and services it.
Thread context is saved lazily: a blocked thread's registers stay on its core
until another thread needs that core.
"""

from __future__ import annotations

import enum
import errno
import itertools
import logging
import math
import queue
import random
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .. import asm
from ..target import Access, TrapCause
from ..wire import FutexAction, U64
from . import abi
from .fdtable import FdTable
from .syscalls import BLOCK, GONE, KEEP, SyscallTable
from .vm import PAGE, TRAMPOLINE, AddressSpace, Fault, Page, Segment, VirtualMemory

log = logging.getLogger(__name__)

SP, TP, T0, A0, A1, A2, A7 = 2, 4, 5, 10, 11, 12, 17
GPRS = range(1, 32)

_FAULT_ACCESS = {TrapCause.PAGE_FAULT_FETCH: Access.EXEC, TrapCause.PAGE_FAULT_LOAD: Access.READ,
                 TrapCause.PAGE_FAULT_STORE: Access.WRITE}
_SIGNAL_FOR = {TrapCause.ILLEGAL_INSTRUCTION: 4, TrapCause.BREAKPOINT: 5,
               TrapCause.MISALIGNED_LOAD: 7, TrapCause.MISALIGNED_STORE: 7,
               TrapCause.MISALIGNED_FETCH: 7}


class State(enum.Enum):
    READY = "ready"
    RUNNING = "running"
    BLOCKED = "blocked"
    ZOMBIE = "zombie"


@dataclass(eq=False)
class Group:
    pid: int
    space: AddressSpace
    fds: FdTable
    exe: str = ""
    sigactions: dict = field(default_factory=dict)
    exit_code: Optional[int] = None
    killed_by: Optional[int] = None
    pending: list = field(default_factory=list)


@dataclass(eq=False)
class Thread:
    tid: int
    group: Group
    pc: int = 0
    regs: list = field(default_factory=lambda: [0] * 32)
    regs_valid: bool = True
    pending_a0: Optional[int] = None
    state: State = State.READY
    core: Optional[int] = None
    resident: Optional[int] = None
    sigmask: int = 0
    pending: list = field(default_factory=list)
    saved_frame: Optional[tuple] = None
    clear_child_tid: int = 0
    wait: Optional[tuple] = None
    deadline: Optional[int] = None
    timeout_value: int = 0
    exit_code: Optional[int] = None

    @property
    def live(self) -> bool:
        return self.state is not State.ZOMBIE


@dataclass
class RuntimeOptions:
    ns_per_tick: int = 10
    epoch_ns: int = 1_700_000_000 * 10**9
    seed: int = 0
    hfutex: bool = True
    lib_dir: Optional[str] = None
    preload: bool = True
    io_workers: int = 2


class Fatal(Exception):
    pass


class Runtime(SyscallTable):
    def __init__(self, client, mem_base: int, mem_size: int, options: Optional[RuntimeOptions] = None,
                 stdin=None, stdout=None, stderr=None):
        import sys
        self.port = client
        self.channel = client.channel
        self.n_cores = client.n_cores
        self.opts = options or RuntimeOptions()
        self.stdio = (stdin if stdin is not None else sys.stdin.buffer,
                      stdout if stdout is not None else sys.stdout.buffer,
                      stderr if stderr is not None else sys.stderr.buffer)
        self.cur_cpu = 0
        self.vm = VirtualMemory(client, mem_base, mem_size, self.n_cores, cpu=lambda: self.cur_cpu)
        self.threads: dict[int, Thread] = {}
        self.groups: list[Group] = []
        self.ready: deque[Thread] = deque()
        self.core_thread: list[Optional[Thread]] = [None] * self.n_cores
        self.core_resident: list[Optional[Thread]] = [None] * self.n_cores
        self.core_masks: list[list[tuple]] = [[] for _ in range(self.n_cores)]
        self.core_epoch = [-1] * self.n_cores
        self.futex_q: dict[tuple, deque[Thread]] = {}
        self.timed: list[Thread] = []
        self.io_pending: dict[int, tuple[Thread, Callable]] = {}
        self.completions: queue.Queue = queue.Queue()
        self._executor: Optional[ThreadPoolExecutor] = None
        self._ids = itertools.count(1000)
        self._io_tokens = itertools.count(1)
        self.rng = random.Random(self.opts.seed)
        self.syscall_counts: Counter = Counter()
        self.events: Counter = Counter()
        self.observers: list[Callable] = []
        self.unknown_logged: set[int] = set()
        self.fatal: Optional[str] = None
        self.main_group: Optional[Group] = None
        self.trampoline_ppn: Optional[int] = None

    # ------------------------------------------------------------- process
    def new_group(self, space: AddressSpace, exe: str = "") -> Group:
        fds = FdTable(*self.stdio)
        g = Group(next(self._ids), space, fds, exe)
        self.groups.append(g)
        if self.main_group is None:
            self.main_group = g
        self._map_trampoline(space)
        return g

    def _map_trampoline(self, space: AddressSpace) -> None:
        code = asm.assemble([asm.jalr(1, T0, 0)] + asm.li(A7, abi.NR["rt_sigreturn"]) + [asm.ecall(), asm.ebreak()])
        if self.trampoline_ppn is None:
            self.trampoline_ppn = self.vm.alloc.alloc()
            self.port.page_write(self.cur_cpu, self.trampoline_ppn, code.ljust(PAGE, b"\0"))
        self.vm.alloc.incref(self.trampoline_ppn)
        seg = space.add_segment(Segment(TRAMPOLINE, TRAMPOLINE + PAGE, abi.PROT_READ | abi.PROT_EXEC, "trampoline"))
        space._install(TRAMPOLINE >> 12, seg, Page(self.trampoline_ppn))
        space.commit()

    def new_thread(self, group: Group, pc: int, regs: Optional[list] = None, tid: Optional[int] = None) -> Thread:
        t = Thread(tid if tid is not None else next(self._ids), group, pc)
        if regs is not None:
            t.regs = list(regs)
        self.threads[t.tid] = t
        self.ready.append(t)
        return t

    def spawn(self, path: str, argv: list[str], envp: list[str]) -> Thread:
        from ..loader import load_program
        self.channel.push_attribution("loader")
        try:
            space = self.vm.new_space()
            group = self.new_group(space, path)
            image = load_program(self, space, path, argv, envp)
        finally:
            self.channel.pop_attribution()
        t = self.new_thread(group, image.start_pc, tid=group.pid)
        t.regs[SP] = image.sp
        return t

    def live_threads(self) -> list[Thread]:
        return [t for t in self.threads.values() if t.live]

    # --------------------------------------------------------------- cores
    def _save(self, t: Thread, c: int) -> None:
        self.channel.push_attribution("context_switch")
        try:
            for i in GPRS:
                t.regs[i] = self.port.reg_read(c, i)
        finally:
            self.channel.pop_attribution()
        t.regs_valid = True

    def full_regs(self, t: Thread) -> list[int]:
        """Register image with any pending return value applied."""
        if not t.regs_valid:
            self._save(t, t.resident)
        if t.pending_a0 is not None:
            t.regs[A0] = t.pending_a0
            t.pending_a0 = None
            self._detach(t)
        return t.regs

    def _detach(self, t: Thread) -> None:
        """Forget that t's registers live on a core; the image is authoritative."""
        if t.resident is not None:
            if not t.regs_valid:
                self._save(t, t.resident)
            self.core_resident[t.resident] = None
            t.resident = None

    def _place(self, t: Thread, c: int) -> None:
        """Start or resume ``t`` on stalled core ``c``."""
        self.cur_cpu = c
        port = self.port
        if not self._deliver_signals(t):
            return
        if t.resident is not None and t.resident != c:
            self._detach(t)
        if self.core_resident[c] is not t:
            prev = self.core_resident[c]
            if prev is not None:
                if not prev.regs_valid:
                    self._save(prev, c)
                prev.resident = None
            if t.pending_a0 is not None:
                t.regs[A0] = t.pending_a0
                t.pending_a0 = None
            self.channel.push_attribution("context_switch")
            try:
                for i in GPRS:
                    port.reg_write(c, i, t.regs[i])
            finally:
                self.channel.pop_attribution()
            self.core_resident[c] = t
            t.resident = c
            if self.core_masks[c]:
                port.hfutex(c, FutexAction.CLEAR_ALL, 0)
                self.core_masks[c].clear()
        elif t.pending_a0 is not None:
            port.reg_write(c, A0, t.pending_a0)
            t.pending_a0 = None
        satp = t.group.space.satp
        if self.vm.loaded_satp[c] != satp:
            port.mmu_set(c, satp, True)
            self.vm.loaded_satp[c] = satp
        if self.core_epoch[c] != self.vm.code_epoch:
            port.sync_i(c)
            self.core_epoch[c] = self.vm.code_epoch
        t.regs_valid = False
        t.state = State.RUNNING
        t.core = c
        self.core_thread[c] = t
        port.redirect(c, t.pc)

    def _schedule(self) -> None:
        free = [c for c in range(self.n_cores) if self.core_thread[c] is None]
        if not free or not self.ready:
            return
        self.channel.push_attribution("scheduler")
        try:
            for t in list(self.ready):
                if t.resident in free and t.state is State.READY:
                    self.ready.remove(t)
                    free.remove(t.resident)
                    self._place(t, t.resident)
            # cores holding nobody's context first, so lazy contexts survive
            free.sort(key=lambda c: self.core_resident[c] is not None)
            while free and self.ready:
                t = self.ready.popleft()
                if t.state is State.READY:
                    self._place(t, free.pop(0))
        finally:
            self.channel.pop_attribution()

    def make_ready(self, t: Thread, value: Optional[int] = None) -> None:
        if value is not None:
            t.pending_a0 = value & U64
        t.wait = None
        if t.deadline is not None:
            t.deadline = None
            if t in self.timed:
                self.timed.remove(t)
        t.state = State.READY
        self.ready.append(t)

    def block(self, t: Thread, wait: tuple, deadline: Optional[int] = None, timeout_value: int = 0) -> None:
        t.state = State.BLOCKED
        t.wait = wait
        if deadline is not None:
            t.deadline = deadline
            t.timeout_value = timeout_value
            self.timed.append(t)

    # ---------------------------------------------------------------- exit
    def exit_thread(self, t: Thread, code: int) -> None:
        if not t.live:
            return
        t.state = State.ZOMBIE
        t.exit_code = code
        self._unwait(t)
        if t.resident is not None:
            self.core_resident[t.resident] = None
            t.resident = None
        if t.core is not None and self.core_thread[t.core] is t:
            self.core_thread[t.core] = None
        t.core = None
        if t.clear_child_tid:
            try:
                t.group.space.write(t.clear_child_tid, b"\0\0\0\0")
            except Fault:
                pass
            self.futex_wake(t.group.space, t.clear_child_tid, 1)
        g = t.group
        if not any(x.live for x in self.threads.values() if x.group is g) and g.exit_code is None:
            g.exit_code = code & 0xFF

    def exit_group(self, g: Group, code: int, signal: Optional[int] = None) -> None:
        if g.exit_code is None:
            g.exit_code = code & 0xFF
            g.killed_by = signal
        for t in list(self.threads.values()):
            if t.group is g and t.live:
                t.clear_child_tid = 0
                self.exit_thread(t, code)
        for c, t in enumerate(self.core_thread):
            if t is not None and t.group is g:
                self.core_thread[c] = None

    def _unwait(self, t: Thread) -> None:
        if t in self.ready:
            self.ready.remove(t)
        if t.wait and t.wait[0] == "futex":
            q = self.futex_q.get(t.wait[1])
            if q and t in q:
                q.remove(t)
        if t in self.timed:
            self.timed.remove(t)
        t.wait = None
        t.deadline = None

    def kill_group(self, g: Group, sig: int, reason: str) -> None:
        log.error("fatal signal %d: %s", sig, reason)
        self.fatal = reason
        self.exit_group(g, 128 + sig, signal=sig)

    # ------------------------------------------------------------- signals
    def send_signal(self, t: Thread, sig: int) -> None:
        t.pending.append(sig)
        if t.state is State.BLOCKED and t.wait and t.wait[0] in ("futex", "sleep"):
            handler = t.group.sigactions.get(sig, (abi.SIG_DFL, 0, 0))[0]
            if handler not in (abi.SIG_IGN,) and not (t.sigmask >> (sig - 1)) & 1:
                self._unwait(t)
                self.make_ready(t, -errno.EINTR)

    def _deliver_signals(self, t: Thread) -> bool:
        """Divert t into a pending handler. False if a default action killed it."""
        while t.pending:
            pick = next((s for s in t.pending if not (t.sigmask >> (s - 1)) & 1), None)
            if pick is None:
                return True
            handler, flags, mask = t.group.sigactions.get(pick, (abi.SIG_DFL, 0, 0))
            if handler == abi.SIG_IGN or (handler == abi.SIG_DFL and pick in abi.DEFAULT_IGNORED):
                t.pending.remove(pick)
                continue
            if handler == abi.SIG_DFL:
                t.pending.remove(pick)
                self.kill_group(t.group, pick, f"signal {pick} with default action")
                return False
            if t.saved_frame is not None:
                return True
            t.pending.remove(pick)
            self._enter_handler(t, pick, handler, flags, mask)
        return True

    def _enter_handler(self, t: Thread, sig: int, handler: int, flags: int, mask: int) -> None:
        regs = self.full_regs(t)
        self._detach(t)
        t.saved_frame = (list(regs), t.pc, t.sigmask)
        sp = (regs[SP] - 128) & ~15
        if flags & abi.SA_SIGINFO:
            info = sig.to_bytes(4, "little") + bytes(4) + (-6).to_bytes(4, "little", signed=True)
            t.group.space.write(sp, info.ljust(128, b"\0"))
            regs[A1], regs[A2] = sp, 0
        regs[SP] = sp
        regs[A0] = sig
        regs[T0] = handler
        t.pc = TRAMPOLINE
        t.sigmask |= mask
        if not flags & abi.SA_NODEFER:
            t.sigmask |= 1 << (sig - 1)
        if flags & abi.SA_RESETHAND:
            t.group.sigactions[sig] = (abi.SIG_DFL, 0, 0)

    def sigreturn(self, t: Thread) -> int:
        if t.saved_frame is None:
            return -errno.EINVAL
        self._detach(t)
        regs, pc, mask = t.saved_frame
        t.regs, t.pc, t.sigmask = list(regs), pc, mask
        t.regs_valid = True
        t.pending_a0 = None
        t.saved_frame = None
        return KEEP

    # --------------------------------------------------------------- futex
    def clear_masks(self, key: tuple) -> None:
        for c in range(self.n_cores):
            if key in self.core_masks[c]:
                self.port.hfutex(c, FutexAction.CLEAR, key[1])
                self.core_masks[c].remove(key)

    def futex_wake(self, space: AddressSpace, uaddr: int, n: int, cpu: Optional[int] = None) -> int:
        key = (space.asid, uaddr)
        q = self.futex_q.get(key)
        woken = 0
        while q and woken < n:
            self.make_ready(q.popleft(), 0)
            woken += 1
        if woken == 0 and cpu is not None and self.opts.hfutex and key not in self.core_masks[cpu]:
            if self.port.hfutex(cpu, FutexAction.SET, uaddr):
                self.core_masks[cpu].append(key)
        return woken

    # --------------------------------------------------------------- clock
    def ticks_to_ns(self, ticks: int) -> int:
        return ticks * self.opts.ns_per_tick

    def clock_ns(self, clk: int, tick: int) -> int:
        ns = self.ticks_to_ns(tick)
        if clk in (abi.CLOCK_REALTIME, abi.CLOCK_REALTIME_COARSE):
            return self.opts.epoch_ns + ns
        return ns

    def clock_read(self, clk: int) -> int:
        return self.clock_ns(clk, self.port.tick(self.cur_cpu))

    def deadline_after(self, ns: int) -> int:
        return self.port.tick(self.cur_cpu) + math.ceil(ns / self.opts.ns_per_tick)

    def _expire_timers(self, force: bool = False) -> None:
        if not self.timed:
            return
        now = self.port.tick(self.cur_cpu)
        due = [t for t in self.timed if t.deadline <= now]
        if not due and force:
            due = [min(self.timed, key=lambda t: (t.deadline, t.tid))]
        for t in sorted(due, key=lambda t: (t.deadline, t.tid)):
            value = t.timeout_value
            self._unwait(t)
            self.make_ready(t, value)

    # ------------------------------------------------------------------ io
    def delegate(self, t: Thread, work: Callable[[], object], finish: Callable[[Thread, object], int]) -> object:
        """Run blocking host work off the main loop; ``finish`` computes the result."""
        if self._executor is None:
            self._executor = ThreadPoolExecutor(self.opts.io_workers, thread_name_prefix="fase-io")
        token = next(self._io_tokens)
        self.io_pending[token] = (t, finish)
        self.block(t, ("io", token))

        def job():
            try:
                res = work()
            except OSError as exc:
                res = exc
            self.completions.put((token, res))

        self._executor.submit(job)
        return BLOCK

    def _io_cpu(self) -> Optional[int]:
        if self.port.can_access_running():
            return self.cur_cpu
        free = [c for c in range(self.n_cores) if self.core_thread[c] is None]
        return free[0] if free else None

    def _drain_completions(self, block: bool = False) -> None:
        while self.io_pending:
            try:
                token, res = self.completions.get(block=block, timeout=None)
            except queue.Empty:
                return
            block = False
            cpu = self._io_cpu()
            if cpu is None:
                self.completions.put((token, res))
                return
            self.cur_cpu = cpu
            t, finish = self.io_pending.pop(token)
            if not t.live:
                continue
            self.channel.push_attribution("io_completion")
            try:
                value = -res.errno if isinstance(res, OSError) else finish(t, res)
            except Fault:
                value = -errno.EFAULT
            finally:
                self.channel.pop_attribution()
            self.make_ready(t, value)

    # ---------------------------------------------------------- event loop
    def running_cores(self) -> list[int]:
        return [c for c, t in enumerate(self.core_thread) if t is not None]

    def run(self, max_events: Optional[int] = None) -> None:
        handled = 0
        while self.main_group is not None and self.main_group.exit_code is None:
            self._drain_completions()
            self._expire_timers()
            self._schedule()
            if self.main_group.exit_code is not None:
                break
            if self.running_cores():
                slice_ticks = 200_000 if self.io_pending else None
                self.channel.push_attribution("scheduler")
                try:
                    ev = self.port.next_event(block=True, slice_ticks=slice_ticks)
                finally:
                    self.channel.pop_attribution()
                if ev is None:
                    continue
                self._on_event(ev)
                handled += 1
                if max_events is not None and handled >= max_events:
                    return
                continue
            if self.ready:
                continue
            if self.io_pending:
                self._drain_completions(block=True)
            elif self.timed:
                earliest = min(t.deadline for t in self.timed)
                self.channel.idle_until(Fraction(earliest * self.opts.ns_per_tick, 10**9))
                self._expire_timers(force=True)
            else:
                blocked = [t.tid for t in self.live_threads()]
                self.fatal = f"deadlock: threads {blocked} blocked with no pending wakeup"
                log.error(self.fatal)
                self.exit_group(self.main_group, 128 + 6, signal=6)
        self.shutdown()

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=False, cancel_futures=True)
            self._executor = None
        for g in self.groups:
            for seg in g.space.segments:
                if seg.shared and seg.file is not None and seg.prot & abi.PROT_WRITE:
                    try:
                        g.space._write_back(seg, seg.start, seg.end)
                    except Exception:   # target may be unreachable at teardown
                        log.debug("write-back at exit failed", exc_info=True)

    def _on_event(self, ev) -> None:
        c = ev.cpu
        t = self.core_thread[c]
        if t is None:
            self.events["stray"] += 1
            log.debug("event on idle core %d ignored", c)
            return
        self.cur_cpu = c
        self.core_thread[c] = None
        t.core = None
        t.state = State.BLOCKED
        t.pc = ev.epc
        cause = ev.cause
        if cause == TrapCause.ECALL_FROM_U:
            self.events["syscall"] += 1
            self._syscall(t, c)
        elif cause in _FAULT_ACCESS:
            self.events["page_fault"] += 1
            self._page_fault(t, ev.tval, _FAULT_ACCESS[cause])
        else:
            self.events["exception"] += 1
            sig = _SIGNAL_FOR.get(cause, 11)
            self.kill_group(t.group, sig, f"exception cause {cause} at pc={ev.epc:#x} tval={ev.tval:#x}")
        if t.live and t.state is State.BLOCKED and t.wait is None:
            # resume on the same core: registers are still there
            t.state = State.READY
            self.channel.push_attribution("scheduler")
            try:
                self._place(t, c)
            finally:
                self.channel.pop_attribution()

    def _page_fault(self, t: Thread, vaddr: int, access: Access) -> None:
        self.channel.push_attribution("page_fault")
        try:
            result = t.group.space.handle_fault(vaddr, access)
            if result == "spurious":
                self.port.tlb_flush(self.cur_cpu, t.group.space.satp)
        finally:
            self.channel.pop_attribution()
        if result == "segv":
            self.kill_group(t.group, abi.SIGSEGV,
                            f"SIGSEGV: {access.name.lower()} at {vaddr:#x}, pc={t.pc:#x}")

    def _syscall(self, t: Thread, c: int) -> None:
        port = self.port
        self.channel.push_attribution("dispatch")
        try:
            nr = port.reg_read(c, A7)
            name = abi.NAMES.get(nr)
            label = name or f"syscall_{nr}"
            first = None
            if name == "futex":
                first = port.reg_read(c, A1)
                cmd = first & 0x7F
                label = {abi.FUTEX_WAIT: "futex_wait", abi.FUTEX_WAKE: "futex_wake"}.get(cmd, "futex")
        finally:
            self.channel.pop_attribution()
        handler, nargs = self.lookup(name)
        self.channel.push_attribution(label)
        try:
            args = []
            for i in range(nargs):
                if i == 1 and first is not None:
                    args.append(first)
                else:
                    args.append(port.reg_read(c, A0 + i))
            try:
                ret = handler(t, *args) if handler else self.unknown(t, nr)
            except Fault:
                ret = -errno.EFAULT
            except OSError as exc:
                ret = -(exc.errno or errno.EIO)
        finally:
            self.channel.pop_attribution()
        self.syscall_counts[label] += 1
        for obs in self.observers:
            obs(t.tid, label, args, ret)
        if ret is GONE or not t.live:
            return
        if ret is KEEP:
            t.wait = None
            return
        t.pc += 4
        if ret is BLOCK:
            if t.state is State.READY:
                return
            return
        t.pending_a0 = ret & U64
        t.wait = None

    def unknown(self, t: Thread, nr: int) -> int:
        if nr not in self.unknown_logged:
            self.unknown_logged.add(nr)
            log.warning("unsupported syscall %d (%s)", nr, abi.NAMES.get(nr, "?"))
        return -errno.ENOSYS

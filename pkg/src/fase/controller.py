"""Behavioral model of the on-target controller.

The controller decodes HTP requests and drives the target only through the
CPU-interface operations: :meth:`Target.reg_port`, :meth:`Target.inject` and
:meth:`Target.step`. Memory and page requests are loops of injected loads and
stores executed through a bare-translation window with x5-x7 as scratch.
"""

from __future__ import annotations

import logging
from collections import deque
from contextlib import contextmanager
from typing import Optional

from . import asm, wire
from .isa import Trap
from .target import InjectRejected, SimulatorError, Target, TrapCause, TrapLatch
from .wire import FutexAction, Op, Response, Status

log = logging.getLogger(__name__)

MASK_SIZE = 4
NR_FUTEX = 98
FUTEX_WAKE = 1
FUTEX_PRIVATE_FLAG = 128
X5, X6, X7 = 5, 6, 7
A0, A1, A7 = 10, 11, 17


class ControllerFatal(Exception):
    pass


class _StatusError(Exception):
    def __init__(self, status: Status):
        super().__init__(status.name)
        self.status = status


class Controller:
    def __init__(self, target: Target, mask_size: int = MASK_SIZE,
                 hfutex: bool = True, direct_mode: bool = False):
        self.target = target
        n = target.n_cores
        self.mask_size = mask_size
        self.hfutex_enabled = hfutex and not direct_mode
        self.direct_mode = direct_mode
        # cores start parked, waiting for their first Redirect
        self.interrupted = [True] * n
        self.event_queue: deque[int] = deque()
        self.hfutex_mask: list[list[int]] = [[] for _ in range(n)]
        self.parked_next = False
        self.page_buffer = bytearray(wire.PAGE_SIZE)
        self.outbox: list[bytes] = []
        self.busy_ticks = 0
        self.absorbed_wakes = 0
        self.injected = 0
        target.on_trap = self.on_trap

    # ----------------------------------------------------------------- traps
    def on_trap(self, cid: int, latch: TrapLatch) -> bool:
        """Handle a freshly latched trap. Returns False if absorbed locally."""
        if self.hfutex_enabled and latch.cause == TrapCause.ECALL_FROM_U and self._absorb_wake(cid, latch):
            return False
        if self.interrupted[cid]:
            raise ControllerFatal(f"core {cid} trapped while already interrupted")
        self.interrupted[cid] = True
        if self.direct_mode:
            return True
        self.event_queue.append(cid)
        if self.parked_next:
            self.parked_next = False
            self.outbox.append(wire.encode(self._pop_event()))
        return True

    def _absorb_wake(self, cid: int, latch: TrapLatch) -> bool:
        mask = self.hfutex_mask[cid]
        if not mask:
            return False
        reg = self.target.reg_port
        if reg(cid, A7) != NR_FUTEX or (reg(cid, A1) & ~FUTEX_PRIVATE_FLAG) != FUTEX_WAKE:
            return False
        if reg(cid, A0) not in mask:
            return False
        reg(cid, A0, True, 0)
        self.target.cores[cid].resume(latch.epc + 4)
        self.absorbed_wakes += 1
        return True

    def _pop_event(self) -> Response:
        cid = self.event_queue.popleft()
        latch = self.target.cores[cid].trap_latch
        return Response(Op.NEXT, Status.OK, wire.Event(cid, latch.cause, latch.epc, latch.tval))

    # --------------------------------------------------------------- service
    def service(self, req: wire.Request) -> Optional[Response]:
        """Serve one decoded request. Returns None only for a parked Next."""
        op = wire.opcode_of(req)
        is_direct = op >= Op.DIRECT_REG
        if is_direct != self.direct_mode:
            return Response(op, Status.DISABLED)
        try:
            return self._dispatch(op, req)
        except _StatusError as exc:
            return Response(op, exc.status)
        except InjectRejected:
            return Response(op, Status.BAD_STATE)

    def _dispatch(self, op: int, req) -> Optional[Response]:
        t = self.target
        if op == Op.NEXT:
            if self.event_queue:
                return self._pop_event()
            if self.parked_next:
                raise _StatusError(Status.BAD_STATE)
            self.parked_next = True
            return None
        if op == Op.TICK:
            return Response(op, Status.OK, t.tick)
        cid = req.cpu
        if cid >= t.n_cores:
            raise _StatusError(Status.BAD_CPU)
        core = t.cores[cid]
        if op == Op.REDIRECT:
            if not self.interrupted[cid]:
                raise _StatusError(Status.BAD_STATE)
            self._resume(cid, req.pc)
            return Response(op)
        if op == Op.MMU_SET:
            with self._halted(cid):
                self._with_scratch(cid, [X5], lambda: self._set_satp(cid, req.satp, req.flush_tlb))
            return Response(op)
        if op == Op.SYNC_I:
            with self._halted(cid):
                self._inject(cid, asm.fence_i())
            return Response(op)
        if op == Op.HFUTEX:
            return Response(op, self._hfutex(cid, req.action, req.vaddr))
        if op == Op.REG_READ:
            self._require_stopped(cid)
            return Response(op, Status.OK, t.reg_port(cid, req.idx))
        if op == Op.REG_WRITE:
            self._require_stopped(cid)
            t.reg_port(cid, req.idx, True, req.data)
            return Response(op)
        if op == Op.MEM_READ:
            return Response(op, Status.OK, self.mem_word(cid, req.paddr, False, 0))
        if op == Op.MEM_WRITE:
            self.mem_word(cid, req.paddr, True, req.data)
            return Response(op)
        if op == Op.PAGE_SET:
            self.page_op("set", cid, req.ppn, value=req.value)
            return Response(op)
        if op == Op.PAGE_COPY:
            self.page_op("copy", cid, req.dst_ppn, src_ppn=req.src_ppn)
            return Response(op)
        if op == Op.PAGE_READ:
            return Response(op, Status.OK, self.page_op("read", cid, req.ppn))
        if op == Op.PAGE_WRITE:
            self.page_buffer[:] = req.payload
            self.page_op("write", cid, req.ppn)
            return Response(op)
        if op == Op.UTICK:
            return Response(op, Status.OK, core.utick)
        return self.direct_service(req)

    def _resume(self, cid: int, pc: int) -> None:
        self.interrupted[cid] = False
        try:
            self.event_queue.remove(cid)
        except ValueError:
            pass
        self.target.cores[cid].resume(pc)

    def _require_stopped(self, cid: int) -> None:
        if not self.target.cores[cid].stop_fetch:
            raise _StatusError(Status.BAD_STATE)

    def _hfutex(self, cid: int, action: FutexAction, vaddr: int) -> Status:
        mask = self.hfutex_mask[cid]
        if action == FutexAction.SET:
            if vaddr in mask:
                return Status.OK
            if len(mask) >= self.mask_size:
                return Status.FULL
            mask.append(vaddr)
        elif action == FutexAction.CLEAR:
            if vaddr in mask:
                mask.remove(vaddr)
        else:
            mask.clear()
        return Status.OK

    # ----------------------------------------------------- injection helpers
    @contextmanager
    def _halted(self, cid: int):
        """Assert StopFetch around an atomic controller operation."""
        core = self.target.cores[cid]
        was_running = not core.stop_fetch
        if was_running:
            core.stop_fetch = True
        try:
            yield
        finally:
            if was_running:
                core.stop_fetch = False

    def _inject(self, cid: int, inst: int, bare: bool = True) -> None:
        t = self.target
        if not t.inject(cid, inst, bare):
            raise _StatusError(Status.REJECTED)
        _, fault = t.step(cid)
        self.busy_ticks += 1
        self.injected += 1
        if fault is not None:
            raise _StatusError(Status.REJECTED)

    def _with_scratch(self, cid: int, regs: list[int], body):
        reg = self.target.reg_port
        saved = [reg(cid, r) for r in regs]
        try:
            return body()
        finally:
            for r, v in zip(regs, saved):
                reg(cid, r, True, v)

    def _set_satp(self, cid: int, satp: int, flush: bool) -> None:
        self.target.reg_port(cid, X5, True, satp)
        self._inject(cid, asm.csrw(asm.CSR_SATP, X5))
        if flush:
            self._inject(cid, asm.sfence_vma())

    def _check_ppn(self, ppn: int) -> None:
        if not self.target.mem.contains_ppn(ppn):
            raise _StatusError(Status.BAD_PPN)

    def mem_word(self, cid: int, paddr: int, wen: bool, data: int) -> int:
        """Aligned physical word access through the Reg and Inject bundles."""
        if paddr % 8:
            raise _StatusError(Status.UNALIGNED)
        try:
            self.target.mem.offset(paddr, 8)
        except SimulatorError:
            raise _StatusError(Status.BAD_PPN) from None
        reg = self.target.reg_port

        def body():
            reg(cid, X5, True, paddr)
            if wen:
                reg(cid, X6, True, data)
                self._inject(cid, asm.sd(X6, X5, 0))
                return data & wire.U64
            self._inject(cid, asm.ld(X6, X5, 0))
            return reg(cid, X6)

        with self._halted(cid):
            return self._with_scratch(cid, [X5, X6], body)

    def page_op(self, kind: str, cid: int, ppn: int, *, value: int = 0,
                src_ppn: Optional[int] = None) -> Optional[bytes]:
        """Whole-page set/copy/read/write as 512 injected word accesses."""
        self._check_ppn(ppn)
        if src_ppn is not None:
            self._check_ppn(src_ppn)
        reg = self.target.reg_port
        inject = lambda inst: self._inject(cid, inst)
        out = bytearray() if kind == "read" else None
        buf = self.page_buffer

        def body():
            reg(cid, X5, True, ppn << 12)
            if kind == "set":
                reg(cid, X6, True, value)
            elif kind == "copy":
                reg(cid, X7, True, src_ppn << 12)
            for half in range(2):
                for off in range(0, 2048, 8):
                    if kind == "set":
                        inject(asm.sd(X6, X5, off))
                    elif kind == "copy":
                        inject(asm.ld(X6, X7, off))
                        inject(asm.sd(X6, X5, off))
                    elif kind == "read":
                        inject(asm.ld(X6, X5, off))
                        out.extend(reg(cid, X6).to_bytes(8, "little"))
                    else:
                        i = half * 2048 + off
                        reg(cid, X6, True, int.from_bytes(buf[i:i + 8], "little"))
                        inject(asm.sd(X6, X5, off))
                if half == 0:
                    inject(asm.addi(X5, X5, 2047))
                    inject(asm.addi(X5, X5, 1))
                    if kind == "copy":
                        inject(asm.addi(X7, X7, 2047))
                        inject(asm.addi(X7, X7, 1))

        with self._halted(cid):
            self._with_scratch(cid, [X5, X6, X7], body)
        return bytes(out) if out is not None else None

    # ------------------------------------------------------------ direct mode
    def direct_service(self, req) -> Response:
        """One raw CPU-interface action per frame (baseline protocol)."""
        op = wire.opcode_of(req)
        cid = req.cpu
        core = self.target.cores[cid]
        if isinstance(req, wire.DirectRegAccess):
            if req.idx == 32:
                if not req.wen:
                    return Response(op, Status.OK, core.pc)
                if not self.interrupted[cid]:
                    raise _StatusError(Status.BAD_STATE)
                self._resume(cid, req.data)
                return Response(op, Status.OK, req.data)
            self._require_stopped(cid)
            return Response(op, Status.OK, self.target.reg_port(cid, req.idx, req.wen, req.data))
        if isinstance(req, wire.DirectInject):
            with self._halted(cid):
                self._inject(cid, req.inst)
            return Response(op)
        # DirectPoll
        latch = core.trap_latch
        if self.interrupted[cid] and latch is not None:
            ev = wire.Event(cid, latch.cause, latch.epc, latch.tval)
        else:
            ev = wire.Event(cid, wire.NO_EVENT, 0, 0)
        return Response(op, Status.OK, ev)


class TargetDriver:
    """Single-threaded owner of target + controller for co-simulation.

    Feeds request bytes to the controller, collects response frames in
    ``outbox`` (including a deferred Next answer) and advances target time.
    """

    def __init__(self, target: Target, controller: Controller):
        self.target = target
        self.controller = controller
        self._rx = bytearray()

    @property
    def outbox(self) -> list[bytes]:
        return self.controller.outbox

    def feed(self, data: bytes) -> None:
        self._rx.extend(data)
        n_cores = self.target.n_cores
        while self._rx:
            try:
                msg, used = wire.decode(self._rx, wire.Direction.HOST_TO_TARGET, n_cores)
            except wire.NeedMore:
                return
            except wire.WireError as exc:
                del self._rx[:max(exc.consumed, 1)]
                self.outbox.append(wire.encode(Response(exc.opcode, exc.status)))
                continue
            del self._rx[:used]
            resp = self.controller.service(msg)
            if resp is not None:
                self.outbox.append(wire.encode(resp))

    def take_busy_ticks(self) -> int:
        busy, self.controller.busy_ticks = self.controller.busy_ticks, 0
        return busy

    def advance_to_tick(self, goal: int) -> None:
        t = self.target
        while t.tick < goal:
            if not any(not c.stop_fetch for c in t.cores):
                t.tick = goal
                return
            t.run(goal - t.tick)

    def run_until_output(self, budget: Optional[int] = None) -> bool:
        """Run until a response is waiting. False if the target went idle."""
        t = self.target
        start = t.tick
        while not self.outbox:
            if not any(not c.stop_fetch for c in t.cores):
                return False
            remaining = None if budget is None else budget - (t.tick - start)
            if remaining is not None and remaining <= 0:
                return False
            t.run(remaining)
        return True

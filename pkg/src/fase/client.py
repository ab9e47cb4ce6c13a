"""Host-side request API over a :class:`~fase.transport.Channel`.

:class:`HtpClient` speaks HTP. :class:`DirectClient` offers the same surface
but expands every operation into raw ``Direct*`` frames (one CPU-interface
action per frame), which is the baseline the traffic comparison runs against.
"""

from __future__ import annotations

from typing import Optional

from . import asm, wire
from .transport import Channel, ProtocolError
from .wire import FutexAction, Op, Status

X5, X6 = 5, 6
WORDS_PER_PAGE = wire.PAGE_SIZE // 8


class HtpError(Exception):
    def __init__(self, op: int, status: Status):
        super().__init__(f"{wire.Op(op).name} failed: {status.name}")
        self.op = op
        self.status = status


class HtpClient:
    direct = False

    def __init__(self, channel: Channel, n_cores: int):
        self.channel = channel
        self.n_cores = n_cores
        self.next_outstanding = False

    def _call(self, msg) -> wire.Response:
        raw = self.channel.exchange(wire.encode(msg, self.n_cores))
        resp, _ = wire.decode(raw, wire.Direction.TARGET_TO_HOST)
        if resp.status != Status.OK:
            raise HtpError(resp.opcode, resp.status)
        return resp

    # instruction stream
    def redirect(self, cpu: int, pc: int) -> None:
        self._call(wire.Redirect(cpu, pc))

    def mmu_set(self, cpu: int, satp: int, flush_tlb: bool = True) -> None:
        self._call(wire.MmuSet(cpu, satp, flush_tlb))

    def tlb_flush(self, cpu: int, satp: int) -> None:
        self.mmu_set(cpu, satp, True)

    def sync_i(self, cpu: int) -> None:
        self._call(wire.SyncI(cpu))

    def hfutex(self, cpu: int, action: FutexAction, vaddr: int = 0) -> bool:
        """Returns False when the core's mask cache is full."""
        try:
            self._call(wire.HFutex(cpu, action, vaddr))
        except HtpError as exc:
            if exc.status == Status.FULL:
                return False
            raise
        return True

    # word access
    def reg_read(self, cpu: int, idx: int) -> int:
        return self._call(wire.RegRead(cpu, idx)).payload

    def reg_write(self, cpu: int, idx: int, data: int) -> None:
        self._call(wire.RegWrite(cpu, idx, data))

    def mem_read(self, cpu: int, paddr: int) -> int:
        return self._call(wire.MemRead(cpu, paddr)).payload

    def mem_write(self, cpu: int, paddr: int, data: int) -> None:
        self._call(wire.MemWrite(cpu, paddr, data))

    # page access
    def page_set(self, cpu: int, ppn: int, value: int = 0) -> None:
        self._call(wire.PageSet(cpu, ppn, value))

    def page_copy(self, cpu: int, src_ppn: int, dst_ppn: int) -> None:
        self._call(wire.PageCopy(cpu, src_ppn, dst_ppn))

    def page_read(self, cpu: int, ppn: int) -> bytes:
        return self._call(wire.PageRead(cpu, ppn)).payload

    def page_write(self, cpu: int, ppn: int, payload: bytes) -> None:
        self._call(wire.PageWrite(cpu, ppn, bytes(payload)))

    # counters
    def tick(self, cpu: int = 0) -> int:
        return self._call(wire.Tick()).payload

    def utick(self, cpu: int) -> int:
        return self._call(wire.UTick(cpu)).payload

    # events
    def next_event(self, block: bool = True, slice_ticks: Optional[int] = None) -> Optional[wire.Event]:
        """Wait for the next trap event; None if the target is idle or the slice ran out."""
        if not self.next_outstanding:
            self.channel.write(wire.encode(wire.Next()))
            self.next_outstanding = True
        raw = self.channel.next_unsolicited(block, slice_ticks)
        if raw is None:
            return None
        resp, _ = wire.decode(raw, wire.Direction.TARGET_TO_HOST)
        if resp.opcode != Op.NEXT:
            raise ProtocolError(f"unexpected unsolicited {resp.opcode:#x}")
        self.next_outstanding = False
        if resp.status != Status.OK:
            raise HtpError(resp.opcode, resp.status)
        return resp.payload

    def can_access_running(self) -> bool:
        return True


class DirectClient(HtpClient):
    """Same operations, but expanded to raw CPU-interface frames."""

    direct = True

    def __init__(self, channel: Channel, n_cores: int):
        super().__init__(channel, n_cores)
        self.running: set[int] = set()
        self._poll_rr = 0

    def _reg(self, cpu, idx, wen=False, data=0) -> int:
        return self._call(wire.DirectRegAccess(cpu, idx, wen, data)).payload

    def _inject(self, cpu, inst) -> None:
        self._call(wire.DirectInject(cpu, inst))

    def redirect(self, cpu, pc):
        self._reg(cpu, 32, True, pc)
        self.running.add(cpu)

    def mmu_set(self, cpu, satp, flush_tlb=True):
        saved = self._reg(cpu, X5)
        self._reg(cpu, X5, True, satp)
        self._inject(cpu, asm.csrw(asm.CSR_SATP, X5))
        if flush_tlb:
            self._inject(cpu, asm.sfence_vma())
        self._reg(cpu, X5, True, saved)

    def tlb_flush(self, cpu, satp):
        # a running core cannot lend scratch registers; sfence.vma needs none
        self._inject(cpu, asm.sfence_vma())

    def sync_i(self, cpu):
        self._inject(cpu, asm.fence_i())

    def hfutex(self, cpu, action, vaddr=0):
        return False

    def reg_read(self, cpu, idx):
        return self._reg(cpu, idx)

    def reg_write(self, cpu, idx, data):
        self._reg(cpu, idx, True, data)

    def mem_read(self, cpu, paddr):
        s5, s6 = self._reg(cpu, X5), self._reg(cpu, X6)
        self._reg(cpu, X5, True, paddr)
        self._inject(cpu, asm.ld(X6, X5, 0))
        value = self._reg(cpu, X6)
        self._reg(cpu, X5, True, s5)
        self._reg(cpu, X6, True, s6)
        return value

    def mem_write(self, cpu, paddr, data):
        s5, s6 = self._reg(cpu, X5), self._reg(cpu, X6)
        self._reg(cpu, X5, True, paddr)
        self._reg(cpu, X6, True, data)
        self._inject(cpu, asm.sd(X6, X5, 0))
        self._reg(cpu, X5, True, s5)
        self._reg(cpu, X6, True, s6)

    def page_set(self, cpu, ppn, value=0):
        for i in range(WORDS_PER_PAGE):
            self.mem_write(cpu, (ppn << 12) + 8 * i, value)

    def page_copy(self, cpu, src_ppn, dst_ppn):
        for i in range(WORDS_PER_PAGE):
            self.mem_write(cpu, (dst_ppn << 12) + 8 * i, self.mem_read(cpu, (src_ppn << 12) + 8 * i))

    def page_read(self, cpu, ppn):
        return b"".join(self.mem_read(cpu, (ppn << 12) + 8 * i).to_bytes(8, "little")
                        for i in range(WORDS_PER_PAGE))

    def page_write(self, cpu, ppn, payload):
        for i in range(WORDS_PER_PAGE):
            self.mem_write(cpu, (ppn << 12) + 8 * i, int.from_bytes(payload[8 * i:8 * i + 8], "little"))

    def _counter(self, cpu, csr):
        saved = self._reg(cpu, X5)
        self._inject(cpu, asm.csrr(X5, csr))
        value = self._reg(cpu, X5)
        self._reg(cpu, X5, True, saved)
        return value

    def tick(self, cpu=0):
        return self._counter(cpu, asm.CSR_TIME)

    def utick(self, cpu):
        return self._counter(cpu, asm.CSR_INSTRET)

    def next_event(self, block=True, slice_ticks=None):
        """Poll running cores round-robin until one reports a latched trap."""
        polls = 0
        while self.running:
            order = sorted(self.running)
            cpu = order[self._poll_rr % len(order)]
            self._poll_rr += 1
            ev = self._call(wire.DirectPoll(cpu)).payload
            if ev.cause != wire.NO_EVENT:
                self.running.discard(cpu)
                return ev
            polls += 1
            if not block or (slice_ticks is not None and polls >= len(order)):
                return None
        return None

    def can_access_running(self) -> bool:
        return False

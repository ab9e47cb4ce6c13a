import random

import pytest

from fase import asm, sv39
from fase.selftest import compare_program, isa_differential
from fase.selftest.progen import generate
from fase.target import TLB_ENTRIES, Access, InjectRejected, Target, TrapCause

BASE = 0x8000_0000


def boot(words, n_cores=1, mem=1 << 20, **regs):
    t = Target(n_cores, mem_size=mem)
    t.mem.write(BASE, asm.assemble(words))
    for cid in range(n_cores):
        for name, v in regs.items():
            t.cores[cid].x[int(name[1:])] = v
        t.cores[cid].resume(BASE)
    return t


def test_arithmetic_until_ecall():
    t = boot(asm.li(10, 6) + asm.li(11, 7) + [asm.mul(12, 10, 11), asm.ecall()])
    t.run()
    core = t.cores[0]
    assert core.x[12] == 42
    assert core.trap_latch.cause == TrapCause.ECALL_FROM_U
    assert core.stop_fetch


def test_x0_hardwired():
    t = boot([asm.addi(0, 0, 5), asm.ecall()])
    t.run()
    assert t.cores[0].x[0] == 0


def test_division_edge_cases():
    t = boot([asm.div(3, 1, 0), asm.rem(4, 1, 0), asm.div(5, 2, 6), asm.ecall()],
             x1=17, x2=1 << 63, x6=(1 << 64) - 1)
    t.run()
    x = t.cores[0].x
    assert x[3] == (1 << 64) - 1      # divide by zero
    assert x[4] == 17
    assert x[5] == 1 << 63            # overflow


def test_illegal_instruction_latched():
    t = boot([0xFFFFFFFF])
    t.run()
    assert t.cores[0].trap_latch.cause == TrapCause.ILLEGAL_INSTRUCTION


def test_access_fault_outside_memory():
    t = boot([asm.ld(1, 2, 0), asm.ecall()], x2=0x10)
    t.run()
    assert t.cores[0].trap_latch.cause == TrapCause.ACCESS_FAULT_LOAD


def test_misaligned_amo():
    t = boot([asm.amo("amoadd", "d", 1, 2, 3), asm.ecall()], x2=BASE + 0x804)
    t.run()
    assert t.cores[0].trap_latch.cause == TrapCause.MISALIGNED_STORE


def test_lr_sc_pair_and_foreign_store():
    words = [asm.amo("lr", "d", 1, 2), asm.amo("sc", "d", 3, 2, 4),
             asm.amo("sc", "d", 5, 2, 4), asm.ecall()]
    t = boot(words, x2=BASE + 0x800, x4=99)
    t.run()
    x = t.cores[0].x
    assert x[3] == 0 and x[5] == 1    # second SC has no reservation
    assert t.mem.read_u64(BASE + 0x800) == 99


def test_global_tick_counts_rounds():
    # two cores retire in parallel: 10 instructions each take 10 ticks,
    # the trapping ecall retires nothing
    t = boot([asm.addi(1, 1, 1)] * 10 + [asm.ecall()], n_cores=2)
    t.run()
    assert t.tick == 10
    assert [c.utick for c in t.cores] == [10, 10]


def test_run_budget():
    t = boot([asm.jal(0, 0)])
    assert t.run(500) == 500
    assert not t.cores[0].stop_fetch


def _map(t, root, vaddr, ppn, flags):
    """Install a 4 KiB leaf, allocating intermediate tables bump-style."""
    table = root
    for level in (2, 1):
        slot = (table << 12) + sv39.vpn_index(vaddr, level) * 8
        pte = t.mem.read_u64(slot)
        if not pte & sv39.PTE_V:
            t._next_table += 1
            pte = sv39.make_pte(t._next_table, sv39.PTE_V)
            t.mem.write_u64(slot, pte)
        table = sv39.pte_ppn(pte)
    t.mem.write_u64((table << 12) + sv39.vpn_index(vaddr, 0) * 8, sv39.make_pte(ppn, flags))


@pytest.fixture
def paged():
    t = Target(1, mem_size=1 << 22)
    root = (BASE >> 12) + 0x100
    t._next_table = root
    core = t.cores[0]
    core.satp = sv39.make_satp(root)
    return t, root, core


URW = sv39.PTE_V | sv39.PTE_R | sv39.PTE_W | sv39.PTE_U | sv39.PTE_A | sv39.PTE_D


def test_sv39_translation_and_fault(paged):
    t, root, core = paged
    _map(t, root, 0x4000_0000, (BASE >> 12) + 5, URW)
    assert core.translate(0x4000_0123, Access.WRITE) == BASE + 0x5123
    with pytest.raises(Exception) as exc:
        core.translate(0x4000_1000, Access.READ)
    assert exc.value.cause == TrapCause.PAGE_FAULT_LOAD


def test_faults_are_not_cached(paged):
    t, root, core = paged
    with pytest.raises(Exception):
        core.translate(0x1000, Access.READ)
    _map(t, root, 0x1000, (BASE >> 12) + 7, URW)
    assert core.translate(0x1000, Access.READ) == BASE + 0x7000


def test_tlb_is_fifo_and_needs_flush(paged):
    t, root, core = paged
    for i in range(TLB_ENTRIES + 1):
        _map(t, root, 0x10_0000 + i * 0x1000, (BASE >> 12) + 0x200 + i, URW)
        core.translate(0x10_0000 + i * 0x1000, Access.READ)
    assert len(core.tlb) == TLB_ENTRIES
    assert (0x10_0000 >> 12) not in core.tlb     # oldest evicted
    # stale entry survives a PTE change until flushed
    _map(t, root, 0x10_1000, (BASE >> 12) + 0x300, URW)
    assert core.translate(0x10_1000, Access.READ) == BASE + 0x201000
    core.flush_tlb()
    assert core.translate(0x10_1000, Access.READ) == BASE + 0x300000


def test_user_bit_required(paged):
    t, root, core = paged
    _map(t, root, 0x2000, (BASE >> 12) + 9, URW & ~sv39.PTE_U)
    with pytest.raises(Exception):
        core.translate(0x2000, Access.READ)


def test_inject_rules():
    t = boot([asm.jal(0, 0)])
    with pytest.raises(InjectRejected):
        t.inject(0, asm.addi(1, 0, 1))     # fetch still running
    core = t.cores[0]
    core.stop_fetch = True
    with pytest.raises(InjectRejected):
        t.inject(0, asm.jal(0, 8))          # control transfers are refused
    assert t.inject(0, asm.addi(1, 0, 9))
    assert not t.inject(0, asm.addi(1, 0, 9))   # slot busy
    t.step(0)
    assert core.x[1] == 9
    assert core.utick == 0                  # injected work is not user time


def test_self_modifying_code_needs_no_stale_decode():
    t = boot([asm.addi(1, 0, 1), asm.ecall()])
    t.run()
    t.mem.write(BASE, asm.assemble([asm.addi(1, 0, 2)]))
    t.sync_i()
    t.cores[0].resume(BASE)
    t.run()
    assert t.cores[0].x[1] == 2


def test_reference_agrees_on_generated_programs():
    assert isa_differential(20, seed=7) == []


def test_differential_detects_a_broken_simulator(monkeypatch):
    from fase import isa
    prog = generate(random.Random(3))
    real = isa.decode

    def broken(word):
        fn = real(word)
        if word & 0x7F == 0x33 and (word >> 12) & 7 == 0 and word >> 25 == 0:  # add
            def f(c, pc, fn=fn):
                out = fn(c, pc)
                rd = (word >> 7) & 31
                if rd:
                    c.x[rd] ^= 1
                return out
            return f
        return fn
    monkeypatch.setattr("fase.target.decode", broken)
    progs = [generate(random.Random(s)) for s in range(5)]
    assert any(compare_program(p) for p in progs + [prog])

import io
import os
import threading

import pytest

from fase.runtime import Runtime, RuntimeOptions
from fase.runtime import abi
from fase.session import in_process

from conftest import run_fixture

pytestmark = pytest.mark.usefixtures("fixtures_bin")

# one RegRead (3+10 bytes) or RegWrite (11+2 bytes) per register, x1..x31
REGS_ONE_WAY = 31 * 13


def test_hello():
    rep, rt, sess, out = run_fixture("hello")
    assert out == b"Hello, FASE!\n"
    assert rep.exit_code == 0 and rep.killed_by is None
    assert {"loader", "dispatch", "write"} <= set(rep.bytes_by_attribution)
    assert sum(rep.bytes_by_attribution.values()) == rep.bytes_total


@pytest.mark.parametrize("cores", [1, 2])
def test_counter_threads(cores):
    rep, rt, sess, out = run_fixture("counter", cores=cores)
    assert out == b"counter=4000\n"
    assert rep.syscalls["clone"] == 4
    assert all(code == 0 for code in rep.threads.values())


def test_context_switch_moves_31_registers_each_way():
    rep, rt, sess, out = run_fixture("counter", cores=1)
    cs = rep.bytes_by_attribution["context_switch"]
    assert cs > 0 and cs % REGS_ONE_WAY == 0


def test_segv_kills_with_signal_11():
    rep, rt, sess, out = run_fixture("segv")
    assert rep.killed_by == 11
    assert "SIGSEGV" in rep.fatal


def test_signal_handler_runs():
    rep, rt, sess, out = run_fixture("signal")
    assert out == b"hits=3\n" and rep.exit_code == 0


def test_file_io(tmp_path):
    p = tmp_path / "in.txt"
    p.write_bytes(b"line one\nline two\n" * 100)
    rep, rt, sess, out = run_fixture("fileio", str(p))
    assert rep.exit_code == 0
    assert out == p.read_bytes()


def test_shared_file_mapping(tmp_path):
    p = tmp_path / "m.bin"
    p.write_bytes(b"." * 5000)
    rep, rt, sess, out = run_fixture("mshared", str(p))
    assert rep.exit_code == 0 and out == b"shared ok\n"
    assert p.read_bytes()[5:6] == b"Z"


def test_dynamic_interpreter():
    rep, rt, sess, out = run_fixture("dyn")
    assert rep.exit_code == 0 and out == b"dyn ok\n"


def test_bss_and_heap():
    rep, rt, sess, out = run_fixture("bss")
    assert rep.exit_code == 0


def test_uncontended_wakes_absorbed():
    rep, rt, sess, out = run_fixture("uwake")
    assert out == b"woken=0\n"
    assert rep.absorbed_wakes >= 1


def test_hfutex_off_absorbs_nothing():
    rep, rt, sess, out = run_fixture("uwake", hfutex=False)
    assert out == b"woken=0\n"
    assert rep.absorbed_wakes == 0


class _Trigger(io.BytesIO):
    """Feeds the pipe once the busy thread has reported in."""

    def __init__(self, wfd):
        super().__init__()
        self.wfd = wfd

    def write(self, data):
        n = super().write(data)
        if b"busy done" in self.getvalue() and self.wfd is not None:
            os.write(self.wfd, b"from pipe\n")
            os.close(self.wfd)
            self.wfd = None
        return n


def test_blocking_read_runs_off_the_event_loop():
    from fase.config import RunConfig
    from fase.runner import run_program
    from conftest import fixture_path
    r, w = os.pipe()
    out = _Trigger(w)
    with os.fdopen(r, "rb", buffering=0) as stdin:
        cfg = RunConfig(program=fixture_path("stdin_read"), cores=2)
        rep, rt, sess = run_program(cfg, stdin=stdin, stdout=out, stderr=io.BytesIO())
    # the read can only finish after the other thread printed, so it must not
    # have stalled the event loop
    assert out.getvalue() == b"busy done\nread: from pipe\n"
    assert rep.exit_code == 0
    assert rep.bytes_by_attribution.get("io_completion", 0) > 0


class _StubTick:
    def __init__(self, client, value):
        self.client, self.value = client, value

    def __getattr__(self, name):
        return getattr(self.client, name)

    def tick(self, cpu=0):
        return self.value


def _bare_runtime(**opts):
    sess = in_process(1, mem_size=16 << 20)
    return Runtime(sess.client, sess.mem_base, sess.mem_size, RuntimeOptions(**opts),
                   stdin=io.BytesIO(), stdout=io.BytesIO(), stderr=io.BytesIO())


def test_clocks_follow_target_ticks():
    rt = _bare_runtime(ns_per_tick=10, epoch_ns=1_700_000_000 * 10**9)
    rt.port = _StubTick(rt.port, 12_345)
    assert rt.clock_read(abi.CLOCK_MONOTONIC) == 123_450
    assert rt.clock_read(abi.CLOCK_REALTIME) == 1_700_000_000 * 10**9 + 123_450
    first = rt.clock_read(abi.CLOCK_MONOTONIC)
    rt.port.value += 1
    assert rt.clock_read(abi.CLOCK_MONOTONIC) > first
    assert rt.deadline_after(1_001) == 12_346 + 101   # rounds up to whole ticks


def test_timespec_and_stat_packing():
    assert abi.unpack_timespec(abi.pack_timespec(5_000_000_123)) == 5_000_000_123
    assert len(abi.pack_stat(os.stat("/"))) == 128


def test_syscall_table_lookup():
    rt = _bare_runtime()
    fn, arity = rt.lookup("getpid")
    assert fn is not None and arity == 0
    assert rt.lookup("no_such_call") == (None, 0)

import subprocess
import sys

import pytest

from fase.cli import main

from conftest import fixture_path


def test_run_hello(fixtures_bin, capfd, tmp_path):
    rep = tmp_path / "r.kv"
    code = main(["run", "--report", str(rep), "--quiet", fixture_path("hello")])
    out, err = capfd.readouterr()
    assert code == 0
    assert out == "Hello, FASE!\n"
    assert rep.read_text().startswith("# fase-report v1")


def test_run_passes_arguments_and_exit_codes(fixtures_bin, capfd, tmp_path):
    f = tmp_path / "t.txt"
    f.write_text("abc\n")
    assert main(["run", "--quiet", fixture_path("fileio"), str(f)]) == 0
    assert capfd.readouterr().out == "abc\n"
    assert main(["run", "--quiet", fixture_path("fileio")]) == 9   # missing argument
    assert main(["run", "--quiet", fixture_path("segv")]) == 128 + 11


def test_compare_and_traffic(fixtures_bin, capfd, tmp_path):
    a, b = tmp_path / "a.kv", tmp_path / "b.kv"
    main(["run", "--quiet", "--report", str(a), fixture_path("hello")])
    main(["run", "--quiet", "--mode", "direct", "--report", str(b), fixture_path("hello")])
    capfd.readouterr()
    assert main(["compare", str(a), str(b)]) == 0
    out = capfd.readouterr().out
    assert out.startswith("bytes.total: +")
    assert main(["traffic", "--by", "attribution", str(a)]) == 0
    assert "loader" in capfd.readouterr().out


def test_usage_errors(capfd, tmp_path):
    assert main(["run", "/no/such/program"]) == 2
    bad = tmp_path / "x.kv"
    bad.write_text("junk\n")
    assert main(["traffic", str(bad)]) == 2
    assert main(["run", "--cores", "0", "/bin/true"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_non_riscv_program_is_a_usage_error(capfd):
    assert main(["run", sys.executable]) == 2
    assert "RISC-V" in capfd.readouterr().err


def test_channel_failure_exit_code(fixtures_bin, tmp_path, capfd):
    code = main(["run", "--backend", "socket", "--address", str(tmp_path / "none.sock"),
                 fixture_path("hello")])
    assert code == 3


def test_selftest_command(capfd):
    assert main(["selftest", "--programs", "3", "--messages", "200"]) == 0
    out = capfd.readouterr().out
    assert "0 mismatches" in out and "0 failures" in out


def test_console_script(fixtures_bin):
    res = subprocess.run([sys.executable, "-m", "fase.cli", "run", "--quiet", fixture_path("hello")],
                         capture_output=True)
    assert res.returncode == 0 and res.stdout == b"Hello, FASE!\n"


def test_serve_and_run_over_socket(fixtures_bin, tmp_path):
    sock = str(tmp_path / "t.sock")
    server = subprocess.Popen([sys.executable, "-m", "fase.cli", "serve", "--address", sock],
                              stderr=subprocess.PIPE)
    try:
        server.stderr.readline()     # "serving ..." once the socket is bound
        res = subprocess.run([sys.executable, "-m", "fase.cli", "run", "--quiet", "--backend", "socket",
                              "--address", sock, fixture_path("hello")], capture_output=True, timeout=120)
        assert res.returncode == 0, res.stderr
        assert res.stdout == b"Hello, FASE!\n"
    finally:
        server.kill()
        server.wait()

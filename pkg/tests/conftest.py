import os
import pathlib
import subprocess

import pytest

HERE = pathlib.Path(__file__).parent
BIN = HERE / "fixtures" / "bin"


@pytest.fixture(scope="session")
def fixtures_bin() -> pathlib.Path:
    """Compiled riscv64 fixtures, rebuilt when a source is newer than its binary."""
    script = HERE.parent / "scripts" / "build_fixtures.sh"
    srcs = list((HERE / "fixtures" / "src").iterdir())
    newest = max(p.stat().st_mtime for p in srcs)
    stale = not BIN.is_dir() or any(not (BIN / n).exists() or (BIN / n).stat().st_mtime < newest
                                    for n in ("hello", "counter"))
    if stale:
        if subprocess.run(["which", "clang"], capture_output=True).returncode:
            pytest.skip("clang not available and fixtures are not built")
        subprocess.run(["bash", str(script)], check=True)
    return BIN


def fixture_path(name: str) -> str:
    return os.fspath(BIN / name)


def run_fixture(name: str, *args: str, stdin: bytes | None = b"", **cfg):
    """Run a compiled fixture in-process; returns (report, runtime, session, stdout)."""
    import io

    from fase.config import RunConfig
    from fase.runner import run_program

    cfg.setdefault("lib_dir", os.fspath(BIN))
    conf = RunConfig(program=fixture_path(name), args=list(args), **cfg)
    out, err = io.BytesIO(), io.BytesIO()
    rep, rt, sess = run_program(conf, stdin=io.BytesIO(stdin) if stdin is not None else None,
                                stdout=out, stderr=err)
    return rep, rt, sess, out.getvalue()

#!/usr/bin/env python3
"""Wire traffic of HTP against the raw CPU-interface baseline.

Prints per-operation costs for the page and word operations, then runs a
workload in both modes (and with HFutex off) and breaks its bytes down by
attribution.

    python3 scripts/traffic_compare.py tests/fixtures/bin/syscalls
"""

import argparse
import io
import os

from fase.config import RunConfig
from fase.runner import run_program
from fase.session import in_process

PPN = 0x8000_0000 >> 12

OPS = {
    "PageWrite": lambda c: c.page_write(0, PPN + 1, os.urandom(4096)),
    "PageRead": lambda c: c.page_read(0, PPN + 1),
    "PageSet": lambda c: c.page_set(0, PPN + 1, 0),
    "PageCopy": lambda c: c.page_copy(0, PPN + 1, PPN + 2),
    "MemWrite": lambda c: c.mem_write(0, PPN << 12, 1),
    "MemRead": lambda c: c.mem_read(0, PPN << 12),
    "RegRead": lambda c: c.reg_read(0, 5),
}


def op_cost(direct: bool, op) -> int:
    s = in_process(1, direct=direct, mem_size=1 << 20)
    op(s.client)
    return s.ledger.total


def run(program, args, **kw):
    cfg = RunConfig(program=program, args=args, **kw)
    rep, _, sess = run_program(cfg, stdin=io.BytesIO(), stdout=io.BytesIO(), stderr=io.BytesIO())
    sess.close()
    return rep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("program", nargs="?")
    ap.add_argument("args", nargs="*")
    ap.add_argument("--cores", type=int, default=1)
    ap.add_argument("--lib-dir")
    a = ap.parse_args()

    print(f"{'operation':<10}  {'htp':>7}  {'direct':>8}  {'ratio':>7}")
    for name, op in OPS.items():
        h, d = op_cost(False, op), op_cost(True, op)
        print(f"{name:<10}  {h:>7}  {d:>8}  {h / d:>7.2%}")
    if not a.program:
        return

    runs = {
        "htp": run(a.program, a.args, cores=a.cores, lib_dir=a.lib_dir),
        "htp/nofutex": run(a.program, a.args, cores=a.cores, lib_dir=a.lib_dir, hfutex=False),
        "direct": run(a.program, a.args, cores=a.cores, lib_dir=a.lib_dir, mode="direct"),
    }
    labels = sorted({k for r in runs.values() for k in r.bytes_by_attribution},
                    key=lambda k: -runs["direct"].bytes_by_attribution.get(k, 0))
    print()
    print(f"{'attribution':<16}" + "".join(f"{m:>14}" for m in runs))
    for lab in labels:
        print(f"{lab:<16}" + "".join(f"{r.bytes_by_attribution.get(lab, 0):>14}" for r in runs.values()))
    print(f"{'total':<16}" + "".join(f"{r.bytes_total:>14}" for r in runs.values()))
    print(f"\nhtp / direct = {runs['htp'].bytes_total / runs['direct'].bytes_total:.2%}")


if __name__ == "__main__":
    main()

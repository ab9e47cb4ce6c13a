#!/usr/bin/env python3
"""Simulated run time of one workload across link speeds.

Wire bytes do not depend on the baud rate, but every byte costs serial time
during which the target keeps running, so simulated seconds and ticks do.

    python3 scripts/baud_sweep.py tests/fixtures/bin/counter --cores 4
"""

import argparse
import io

from fase.config import RunConfig
from fase.runner import run_program

DEFAULT_BAUDS = [115200, 460800, 921600, 3_000_000, 12_000_000]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("program")
    ap.add_argument("args", nargs="*")
    ap.add_argument("--cores", type=int, default=1)
    ap.add_argument("--mode", choices=["htp", "direct"], default="htp")
    ap.add_argument("--frame", default="8N2")
    ap.add_argument("--bauds", type=int, nargs="+", default=DEFAULT_BAUDS)
    ap.add_argument("--lib-dir")
    a = ap.parse_args()

    print(f"{'baud':>10}  {'sim s':>10}  {'ticks':>12}  {'wire bytes':>10}  {'exit':>4}")
    for baud in a.bauds:
        cfg = RunConfig(program=a.program, args=a.args, cores=a.cores, mode=a.mode, baud=baud,
                        frame=a.frame, lib_dir=a.lib_dir)
        rep, _, sess = run_program(cfg, stdin=io.BytesIO(), stdout=io.BytesIO(), stderr=io.BytesIO())
        sess.close()
        print(f"{baud:>10}  {rep.sim_seconds:>10.6f}  {rep.ticks:>12}  {rep.bytes_total:>10}  {rep.exit_code!s:>4}")


if __name__ == "__main__":
    main()

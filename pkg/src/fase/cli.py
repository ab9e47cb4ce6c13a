"""Command-line entry point: run, compare, traffic, selftest, serve."""

from __future__ import annotations

import argparse
import logging
import os
import socket
import sys

from . import report as reportmod
from .config import ConfigError, RunConfig
from .loader import ElfError
from .transport import ChannelClosed, ChannelTimeout, ProtocolError

EXIT_USAGE = 2
EXIT_CHANNEL = 3


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("program")
    p.add_argument("args", nargs=argparse.REMAINDER, help="arguments passed to the program")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--cores", type=int)
    p.add_argument("--mode", choices=["htp", "direct"])
    p.add_argument("--backend", choices=["inprocess", "socket", "serial"])
    p.add_argument("--address", help="socket path, host:port, or serial device")
    p.add_argument("--baud", type=int)
    p.add_argument("--frame", help='serial framing such as "8N2"')
    p.add_argument("--latency-us", type=float, help="extra per-transfer latency")
    p.add_argument("--no-hfutex", dest="hfutex", action="store_const", const=False)
    p.add_argument("--mask-size", type=int)
    p.add_argument("--no-preload", dest="preload", action="store_const", const=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--mem-mb", type=int)
    p.add_argument("--lib-dir", help="where PT_INTERP interpreters are looked up")
    p.add_argument("--stdin", help="file fed to the program's stdin")
    p.add_argument("--env", action="append", default=None, metavar="K=V")
    p.add_argument("--report", help="write the machine-readable report here")
    p.add_argument("--quiet", action="store_true", help="no summary on stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fase", description="Run riscv64 Linux programs on a simulated "
                                 "target with syscalls served by this host.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)
    _run_args(sub.add_parser("run", help="run a program"))

    c = sub.add_parser("compare", help="relative change of a metric between two reports")
    c.add_argument("first")
    c.add_argument("second")
    c.add_argument("--metric", default="bytes.total")

    t = sub.add_parser("traffic", help="wire bytes grouped by opcode or attribution")
    t.add_argument("report")
    t.add_argument("--by", choices=["opcode", "attribution"], default="opcode")

    s = sub.add_parser("selftest", help="ISA differential check and codec round trips")
    s.add_argument("--programs", type=int, default=50)
    s.add_argument("--messages", type=int, default=2000)
    s.add_argument("--seed", type=int, default=1)

    v = sub.add_parser("serve", help="serve an in-process target over a socket")
    v.add_argument("--address", required=True, help="unix socket path or host:port")
    v.add_argument("--cores", type=int, default=1)
    v.add_argument("--mem-mb", type=int, default=256)
    v.add_argument("--mode", choices=["htp", "direct"], default="htp")
    v.add_argument("--no-hfutex", dest="hfutex", action="store_false")
    v.add_argument("--mask-size", type=int, default=4)
    return ap


def cmd_run(a) -> int:
    overrides = {k: getattr(a, k) for k in ("cores", "mode", "backend", "address", "baud", "frame",
                                            "latency_us", "hfutex", "mask_size", "preload", "seed",
                                            "mem_mb", "lib_dir", "stdin", "report")}
    overrides["program"] = a.program
    overrides["args"] = list(a.args)
    if a.env is not None:
        overrides["env"] = a.env
    if a.config:
        cfg = RunConfig.from_file(a.config, **overrides)
    else:
        cfg = RunConfig.from_dict({k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    if not os.path.isfile(cfg.program):
        raise ConfigError(f"program not found: {cfg.program}")
    from .runner import run_program
    rep, _, sess = run_program(cfg)
    sess.close()
    if not a.quiet:
        sys.stderr.write(rep.to_text())
    if rep.killed_by is not None:
        return 128 + rep.killed_by
    return rep.exit_code or 0


def cmd_compare(a) -> int:
    delta = reportmod.compare(reportmod.load(a.first), reportmod.load(a.second), a.metric)
    print(f"{a.metric}: {delta:+.4%}")
    return 0


def cmd_traffic(a) -> int:
    sys.stdout.write(reportmod.traffic_table(reportmod.load(a.report), a.by))
    return 0


def cmd_selftest(a) -> int:
    from .selftest import codec_roundtrip, isa_differential
    bad = isa_differential(a.programs, a.seed)
    print(f"isa: {a.programs} programs, {len(bad)} mismatches")
    for line in bad[:10]:
        print("  " + line)
    errs = codec_roundtrip(a.messages, a.seed)
    print(f"codec: {a.messages} messages, {errs} failures")
    return 0 if not bad and not errs else 1


def cmd_serve(a) -> int:
    from .controller import Controller, TargetDriver
    from .runner import parse_address
    from .target import Target
    from .transport import TargetServer
    target = Target(a.cores, mem_size=a.mem_mb << 20)
    ctrl = Controller(target, a.mask_size, hfutex=a.hfutex, direct_mode=a.mode == "direct")
    addr = parse_address(a.address)
    family = socket.AF_UNIX if isinstance(addr, str) else socket.AF_INET
    with socket.socket(family, socket.SOCK_STREAM) as lst:
        if family == socket.AF_UNIX and os.path.exists(addr):
            os.unlink(addr)
        lst.bind(addr)
        lst.listen(1)
        print(f"serving {a.cores}-core target on {a.address}", file=sys.stderr)
        TargetServer(TargetDriver(target, ctrl), lst).serve_one()
    return 0


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "compare": cmd_compare, "traffic": cmd_traffic,
                "selftest": cmd_selftest, "serve": cmd_serve}
    try:
        return handlers[a.cmd](a)
    except (ConfigError, ElfError, reportmod.ReportError) as exc:
        print(f"fase: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChannelClosed, ChannelTimeout, ProtocolError, ConnectionError) as exc:
        print(f"fase: channel failure: {exc}", file=sys.stderr)
        return EXIT_CHANNEL
    except OSError as exc:
        print(f"fase: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

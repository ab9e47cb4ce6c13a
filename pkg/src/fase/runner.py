"""Build a session from a :class:`RunConfig`, run a program, produce a report."""

from __future__ import annotations

import os
from typing import BinaryIO, Optional

from .client import DirectClient, HtpClient
from .config import RunConfig
from .report import RunReport
from .runtime import Runtime, RuntimeOptions
from .session import Session, in_process
from .target import DEFAULT_MEM_BASE
from .transport import SerialChannel, SocketChannel


def parse_address(address: str):
    if ":" in address and not address.startswith("/"):
        host, port = address.rsplit(":", 1)
        return host, int(port)
    return address


def open_session(cfg: RunConfig) -> Session:
    direct = cfg.mode == "direct"
    mem_size = cfg.mem_mb << 20
    if cfg.backend == "inprocess":
        return in_process(cfg.cores, channel=cfg.channel(), direct=direct, hfutex=cfg.hfutex,
                          mask_size=cfg.mask_size, mem_size=mem_size, ns_per_tick=cfg.ns_per_tick)
    if cfg.backend == "socket":
        chan = SocketChannel(cfg.channel(), parse_address(cfg.address))
    else:
        chan = SerialChannel(cfg.channel(), cfg.address)
    client = (DirectClient if direct else HtpClient)(chan, cfg.cores)
    return Session(chan, client, cfg.cores, DEFAULT_MEM_BASE, mem_size)


def run_program(cfg: RunConfig, stdin: Optional[BinaryIO] = None, stdout: Optional[BinaryIO] = None,
                stderr: Optional[BinaryIO] = None, observers=()) -> tuple[RunReport, Runtime, Session]:
    cfg.validate()
    sess = open_session(cfg)
    opts = RuntimeOptions(ns_per_tick=cfg.ns_per_tick, seed=cfg.seed, hfutex=cfg.hfutex and cfg.mode == "htp",
                          lib_dir=cfg.lib_dir, preload=cfg.preload)
    own_stdin = None
    if stdin is None and cfg.stdin:
        stdin = own_stdin = open(cfg.stdin, "rb")
    try:
        rt = Runtime(sess.client, sess.mem_base, sess.mem_size, opts, stdin=stdin, stdout=stdout, stderr=stderr)
        rt.observers.extend(observers)
        argv = [os.path.basename(cfg.program)] + list(cfg.args)
        rt.spawn(cfg.program, argv, list(cfg.env))
        rt.run()
        report = build_report(cfg, rt, sess)
    finally:
        if own_stdin is not None:
            own_stdin.close()
    if cfg.report:
        with open(cfg.report, "w") as fh:
            fh.write(report.to_kv())
    return report, rt, sess


def build_report(cfg: RunConfig, rt: Runtime, sess: Session) -> RunReport:
    port = rt.port
    uticks = []
    for c in range(sess.n_cores):
        if port.can_access_running() or rt.core_thread[c] is None:
            uticks.append(port.utick(c))
        else:
            uticks.append(-1)
    ticks = port.tick(0)
    led = sess.ledger
    g = rt.main_group
    return RunReport(
        program=os.path.basename(cfg.program), mode=cfg.mode, cores=cfg.cores, baud=cfg.baud,
        frame=cfg.frame.upper(), hfutex=rt.opts.hfutex, seed=cfg.seed,
        exit_code=g.exit_code, killed_by=g.killed_by, fatal=rt.fatal or "",
        ticks=ticks, sim_seconds=float(sess.channel.clock), uticks=uticks,
        bytes_sent=led.bytes_sent, bytes_received=led.bytes_received,
        bytes_by_opcode=dict(led.by_opcode), frames_by_opcode=dict(led.frames_by_opcode),
        bytes_by_attribution=dict(led.by_attribution), syscalls=dict(rt.syscall_counts),
        events=dict(rt.events), memory=dict(rt.vm.stats),
        threads={str(t.tid): (t.exit_code if t.exit_code is not None else -1) for t in rt.threads.values()},
        absorbed_wakes=sess.controller.absorbed_wakes if sess.controller is not None else None,
    )

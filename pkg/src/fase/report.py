"""Run reports: a human summary plus a versioned, line-oriented key=value form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

REPORT_HEADER = "# fase-report v1"

Value = Union[int, float, str]


class ReportError(ValueError):
    pass


@dataclass
class RunReport:
    program: str = ""
    mode: str = "htp"
    cores: int = 1
    baud: int = 0
    frame: str = ""
    hfutex: bool = True
    seed: int = 0
    exit_code: Optional[int] = None
    killed_by: Optional[int] = None
    fatal: str = ""
    ticks: int = 0
    sim_seconds: float = 0.0
    uticks: list[int] = field(default_factory=list)
    bytes_sent: int = 0
    bytes_received: int = 0
    bytes_by_opcode: dict[str, int] = field(default_factory=dict)
    frames_by_opcode: dict[str, int] = field(default_factory=dict)
    bytes_by_attribution: dict[str, int] = field(default_factory=dict)
    syscalls: dict[str, int] = field(default_factory=dict)
    events: dict[str, int] = field(default_factory=dict)
    memory: dict[str, int] = field(default_factory=dict)
    threads: dict[str, int] = field(default_factory=dict)
    absorbed_wakes: Optional[int] = None

    @property
    def bytes_total(self) -> int:
        return self.bytes_sent + self.bytes_received

    def flat(self) -> dict[str, Value]:
        out: dict[str, Value] = {
            "program": self.program, "mode": self.mode, "cores": self.cores, "baud": self.baud,
            "frame": self.frame, "hfutex": int(self.hfutex), "seed": self.seed,
            "exit_code": "" if self.exit_code is None else self.exit_code,
            "killed_by": "" if self.killed_by is None else self.killed_by,
            "fatal": self.fatal, "ticks": self.ticks, "sim_seconds": self.sim_seconds,
            "bytes.sent": self.bytes_sent, "bytes.received": self.bytes_received,
            "bytes.total": self.bytes_total,
        }
        if self.absorbed_wakes is not None:
            out["absorbed_wakes"] = self.absorbed_wakes
        for i, u in enumerate(self.uticks):
            out[f"utick.{i}"] = u
        for prefix, table in (("bytes.opcode", self.bytes_by_opcode), ("frames.opcode", self.frames_by_opcode),
                              ("bytes.attribution", self.bytes_by_attribution), ("syscall", self.syscalls),
                              ("event", self.events), ("memory", self.memory), ("thread", self.threads)):
            for k in sorted(table):
                out[f"{prefix}.{k}"] = table[k]
        return out

    def to_kv(self) -> str:
        lines = [REPORT_HEADER]
        for k, v in self.flat().items():
            if isinstance(v, float):
                v = repr(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        status = f"exit {self.exit_code}" if self.killed_by is None else f"killed by signal {self.killed_by}"
        lines = [
            f"program      {self.program}",
            f"status       {status}" + (f" ({self.fatal})" if self.fatal else ""),
            f"mode         {self.mode}, {self.cores} core(s), {self.baud} baud {self.frame}",
            f"target time  {self.ticks} ticks, {self.sim_seconds:.6f} s simulated",
            f"wire bytes   {self.bytes_total} ({self.bytes_sent} sent, {self.bytes_received} received)",
            f"syscalls     {sum(self.syscalls.values())}",
        ]
        if self.absorbed_wakes is not None:
            lines.append(f"absorbed     {self.absorbed_wakes} futex wakes")
        return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, Value]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != REPORT_HEADER:
        raise ReportError("not a fase report (missing version header)")
    out: dict[str, Value] = {}
    for n, line in enumerate(lines[1:], 2):
        if not line.strip() or line.startswith("#"):
            continue
        if "=" not in line:
            raise ReportError(f"line {n}: expected key=value")
        k, v = line.split("=", 1)
        out[k] = _number(v)
    return out


def _number(v: str) -> Value:
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def load(path: str) -> dict[str, Value]:
    with open(path) as fh:
        return parse_kv(fh.read())


def compare(a: dict, b: dict, metric: str) -> float:
    """Relative change of ``metric`` from report a to report b."""
    for name, rep in (("first", a), ("second", b)):
        if metric not in rep:
            raise ReportError(f"metric {metric!r} missing from {name} report")
        if not isinstance(rep[metric], (int, float)):
            raise ReportError(f"metric {metric!r} is not numeric")
    if a[metric] == 0:
        raise ReportError(f"metric {metric!r} is zero in the baseline report")
    return (b[metric] - a[metric]) / a[metric]


def traffic_table(rep: dict, group_by: str = "opcode") -> str:
    if group_by not in ("opcode", "attribution"):
        raise ReportError("group_by must be opcode or attribution")
    prefix = f"bytes.{group_by}."
    rows = sorted(((k[len(prefix):], v) for k, v in rep.items() if k.startswith(prefix)),
                  key=lambda kv: (-kv[1], kv[0]))
    total = sum(v for _, v in rows) or 1
    width = max([len(k) for k, _ in rows] + [len(group_by)])
    out = [f"{group_by:<{width}}  {'bytes':>10}  {'share':>6}"]
    for k, v in rows:
        frames = rep.get(f"frames.opcode.{k}") if group_by == "opcode" else None
        tail = f"  {frames} frames" if frames is not None else ""
        out.append(f"{k:<{width}}  {v:>10}  {100 * v / total:5.1f}%{tail}")
    out.append(f"{'total':<{width}}  {sum(v for _, v in rows):>10}")
    return "\n".join(out) + "\n"

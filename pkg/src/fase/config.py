"""Run configuration: a dataclass plus a plain key=value file format."""

from __future__ import annotations

import dataclasses
import shlex
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .transport import ChannelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    program: str = ""
    args: list[str] = field(default_factory=list)
    env: list[str] = field(default_factory=list)
    cores: int = 1
    mode: str = "htp"              # htp | direct
    backend: str = "inprocess"     # inprocess | socket | serial
    address: str = ""
    baud: int = 921600
    frame: str = "8N2"
    latency_us: float = 0.0
    timeout: float = 30.0
    hfutex: bool = True
    mask_size: int = 4
    preload: bool = True
    seed: int = 0
    ns_per_tick: int = 10
    mem_mb: int = 256
    lib_dir: Optional[str] = None
    stdin: Optional[str] = None
    report: Optional[str] = None

    def validate(self) -> "RunConfig":
        if not self.program:
            raise ConfigError("no program given")
        if self.cores < 1 or self.cores > 64:
            raise ConfigError(f"cores must be in 1..64, got {self.cores}")
        if self.mode not in ("htp", "direct"):
            raise ConfigError(f"mode must be htp or direct, got {self.mode!r}")
        if self.backend not in ("inprocess", "socket", "serial"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend != "inprocess" and not self.address:
            raise ConfigError(f"backend {self.backend} needs an address")
        if self.baud <= 0:
            raise ConfigError("baud must be positive")
        if self.latency_us < 0:
            raise ConfigError("latency must be non-negative")
        if not 1 <= self.mask_size <= 64:
            raise ConfigError("mask_size must be in 1..64")
        if self.ns_per_tick <= 0 or self.mem_mb <= 0:
            raise ConfigError("ns_per_tick and mem_mb must be positive")
        self.channel()
        return self

    def channel(self) -> ChannelConfig:
        try:
            return ChannelConfig.parse_frame(self.frame, baud=self.baud, backend=self.backend,
                                             latency_extra=Fraction(self.latency_us) / 10**6,
                                             timeout=self.timeout)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path: str, **overrides) -> "RunConfig":
        with open(path) as fh:
            values = parse_kv(fh.read(), path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        out = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _coerce(key, kinds[key], raw)
        return cls(**out)


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def _coerce(key: str, kind: str, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw, 0)
        if kind == "float":
            return float(raw)
        if kind.startswith("list"):
            return shlex.split(raw)
        if kind.startswith("Optional") and raw in ("", "none", "None"):
            return None
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw

"""Wiring of target, controller, channel and client into one bundle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .client import DirectClient, HtpClient
from .controller import MASK_SIZE, Controller, TargetDriver
from .target import DEFAULT_MEM_BASE, DEFAULT_MEM_SIZE, Target
from .transport import Channel, ChannelConfig, InProcessChannel


@dataclass
class Session:
    channel: Channel
    client: HtpClient
    n_cores: int
    mem_base: int
    mem_size: int
    target: Optional[Target] = None
    controller: Optional[Controller] = None

    @property
    def ledger(self):
        return self.channel.ledger

    def close(self) -> None:
        self.channel.close()


def in_process(n_cores: int = 1, *, channel: Optional[ChannelConfig] = None, direct: bool = False,
               hfutex: bool = True, mask_size: int = MASK_SIZE, mem_size: int = DEFAULT_MEM_SIZE,
               mem_base: int = DEFAULT_MEM_BASE, ns_per_tick: int = 10) -> Session:
    target = Target(n_cores, mem_size=mem_size, mem_base=mem_base)
    ctrl = Controller(target, mask_size, hfutex=hfutex, direct_mode=direct)
    chan = InProcessChannel(channel or ChannelConfig(), TargetDriver(target, ctrl), ns_per_tick)
    client = (DirectClient if direct else HtpClient)(chan, n_cores)
    return Session(chan, client, n_cores, mem_base, mem_size, target, ctrl)

"""Target file descriptors backed by host descriptors or Python streams."""

from __future__ import annotations

import errno
import os
import select
import stat
from dataclasses import dataclass, field
from typing import BinaryIO, Optional


@dataclass
class FdEntry:
    kind: str                       # "file", "dir", "pipe", "stream"
    host_fd: Optional[int] = None
    stream: Optional[BinaryIO] = None
    path: str = ""
    flags: int = 0
    cloexec: bool = False
    refs: list = field(default_factory=lambda: [1])   # shared between dup'd entries

    def fileno(self) -> Optional[int]:
        if self.host_fd is not None:
            return self.host_fd
        try:
            return self.stream.fileno()
        except (AttributeError, OSError, ValueError):
            return None

    def isatty(self) -> bool:
        fd = self.fileno()
        if fd is not None:
            return os.isatty(fd)
        return bool(getattr(self.stream, "isatty", lambda: False)())

    def may_block(self) -> bool:
        """True if a read could block for an unbounded time."""
        fd = self.fileno()
        if fd is None:
            return False
        try:
            mode = os.fstat(fd).st_mode
        except OSError:
            return False
        if stat.S_ISREG(mode) or stat.S_ISDIR(mode):
            return False
        ready, _, _ = select.select([fd], [], [], 0)
        return not ready

    def read(self, n: int) -> bytes:
        fd = self.fileno()
        if fd is not None:
            return os.read(fd, n)
        return self.stream.read(n) or b""

    def pread(self, n: int, off: int) -> bytes:
        if self.host_fd is None:
            raise OSError(errno.ESPIPE, "not seekable")
        return os.pread(self.host_fd, n, off)

    def write(self, data: bytes) -> int:
        if self.stream is not None:
            self.stream.write(data)
            flush = getattr(self.stream, "flush", None)
            if flush:
                flush()
            return len(data)
        return os.write(self.host_fd, data)

    def close(self) -> None:
        self.refs[0] -= 1
        if self.refs[0] == 0 and self.host_fd is not None:
            os.close(self.host_fd)


class FdTable:
    def __init__(self, stdin: BinaryIO, stdout: BinaryIO, stderr: BinaryIO, max_fds: int = 1024):
        self.max_fds = max_fds
        self.entries: dict[int, FdEntry] = {
            0: FdEntry("stream", stream=stdin, path="<stdin>"),
            1: FdEntry("stream", stream=stdout, path="<stdout>", flags=1),
            2: FdEntry("stream", stream=stderr, path="<stderr>", flags=1),
        }

    def get(self, fd: int) -> FdEntry:
        e = self.entries.get(fd)
        if e is None:
            raise OSError(errno.EBADF, "bad file descriptor")
        return e

    def lowest_free(self, start: int = 0) -> int:
        fd = start
        while fd in self.entries:
            fd += 1
        if fd >= self.max_fds:
            raise OSError(errno.EMFILE, "too many open files")
        return fd

    def install(self, entry: FdEntry, start: int = 0) -> int:
        fd = self.lowest_free(start)
        self.entries[fd] = entry
        return fd

    def close(self, fd: int) -> None:
        self.get(fd)
        self.entries.pop(fd).close()

    def dup(self, fd: int, target: Optional[int] = None, cloexec: bool = False, start: int = 0) -> int:
        e = self.get(fd)
        clone = FdEntry(e.kind, e.host_fd, e.stream, e.path, e.flags, cloexec, e.refs)
        e.refs[0] += 1
        if target is None:
            return self.install(clone, start)
        if target in self.entries:
            self.entries.pop(target).close()
        self.entries[target] = clone
        return target

    def close_all(self) -> None:
        for fd in list(self.entries):
            self.entries.pop(fd).close()

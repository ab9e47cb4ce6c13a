"""Syscall handlers. Each ``sys_<name>`` takes the thread plus raw argument words."""

from __future__ import annotations

import errno
import inspect
import os
import stat
import struct
from collections import deque

from .. import wire
from . import abi
from .fdtable import FdEntry


class _Sentinel:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


BLOCK = _Sentinel("BLOCK")   # thread parked; result arrives later
GONE = _Sentinel("GONE")     # thread no longer exists
KEEP = _Sentinel("KEEP")     # context already replaced, resume as is

_U32 = struct.Struct("<I")
_IOV = struct.Struct("<QQ")


def s64(v: int) -> int:
    v &= wire.U64
    return v - (1 << 64) if v >> 63 else v


def s32(v: int) -> int:
    v &= 0xFFFF_FFFF
    return v - (1 << 32) if v >> 31 else v


class SyscallTable:
    """Mixin for :class:`~fase.runtime.core.Runtime`."""

    _arity_cache: dict = {}

    def lookup(self, name):
        if name is None:
            return None, 0
        fn = getattr(self, "sys_" + name, None)
        if fn is None:
            return None, 0
        n = self._arity_cache.get(name)
        if n is None:
            n = self._arity_cache[name] = len(inspect.signature(fn).parameters) - 1
        return fn, n

    # ---------------------------------------------------------- lifecycle
    def sys_exit(self, t, code):
        self.exit_thread(t, s32(code))
        return GONE

    def sys_exit_group(self, t, code):
        self.exit_group(t.group, s32(code))
        return GONE

    def sys_set_tid_address(self, t, ptr):
        t.clear_child_tid = ptr
        return t.tid

    def sys_set_robust_list(self, t, head, length):
        return 0

    def sys_getpid(self, t):
        return t.group.pid

    def sys_gettid(self, t):
        return t.tid

    def sys_getppid(self, t):
        return 1

    def sys_getuid(self, t):
        return 1000

    sys_geteuid = sys_getgid = sys_getegid = sys_getuid

    def sys_sched_yield(self, t):
        if not self.ready:
            return 0
        self.make_ready(t, 0)
        return BLOCK

    def sys_clone(self, t, flags, stack, ptid, tls, ctid):
        if flags & abi.CLONE_REQUIRED != abi.CLONE_REQUIRED:
            return -errno.EINVAL
        regs = list(self.full_regs(t))
        child = self.new_thread(t.group, t.pc + 4, regs)
        child.regs[10] = 0
        if stack:
            child.regs[2] = stack
        if flags & abi.CLONE_SETTLS:
            child.regs[4] = tls
        child.sigmask = t.sigmask
        space = t.group.space
        if flags & abi.CLONE_PARENT_SETTID:
            space.write(ptid, _U32.pack(child.tid))
        if flags & abi.CLONE_CHILD_SETTID:
            space.write(ctid, _U32.pack(child.tid))
        if flags & abi.CLONE_CHILD_CLEARTID:
            child.clear_child_tid = ctid
        return child.tid

    def sys_wait4(self, t, pid, status, options, rusage):
        return -errno.ECHILD

    # --------------------------------------------------------------- futex
    def sys_futex(self, t, uaddr, op, val, timeout, uaddr2, val3):
        cmd = op & 0x7F
        if uaddr & 3:
            return -errno.EINVAL
        space = t.group.space
        if cmd == abi.FUTEX_WAKE:
            return self.futex_wake(space, uaddr, s32(val), self.cur_cpu)
        if cmd != abi.FUTEX_WAIT:
            return -errno.ENOSYS
        key = (space.asid, uaddr)
        self.clear_masks(key)
        current = _U32.unpack(space.read(uaddr, 4))[0]
        if current != val & 0xFFFF_FFFF:
            return -errno.EAGAIN
        deadline = None
        if timeout:
            ns = abi.unpack_timespec(space.read(timeout, 16))
            if ns < 0:
                return -errno.EINVAL
            deadline = self.deadline_after(ns)
        self.futex_q.setdefault(key, deque()).append(t)
        self.block(t, ("futex", key), deadline, -errno.ETIMEDOUT)
        return BLOCK

    # ------------------------------------------------------------- signals
    def sys_rt_sigaction(self, t, sig, act, oact, size):
        if not 1 <= sig <= abi.NSIG or sig in (abi.SIGKILL, abi.SIGSTOP) and act:
            return -errno.EINVAL
        space = t.group.space
        old = t.group.sigactions.get(sig, (abi.SIG_DFL, 0, 0))
        if act:
            t.group.sigactions[sig] = struct.unpack("<QQQ", space.read(act, 24))
        if oact:
            space.write(oact, struct.pack("<QQQ", *old))
        return 0

    def sys_rt_sigprocmask(self, t, how, nset, oset, size):
        space = t.group.space
        old = t.sigmask
        if nset:
            mask = struct.unpack("<Q", space.read(nset, 8))[0]
            mask &= ~((1 << (abi.SIGKILL - 1)) | (1 << (abi.SIGSTOP - 1)))
            if how == abi.SIG_BLOCK:
                t.sigmask |= mask
            elif how == abi.SIG_UNBLOCK:
                t.sigmask &= ~mask
            elif how == abi.SIG_SETMASK:
                t.sigmask = mask
            else:
                return -errno.EINVAL
        if oset:
            space.write(oset, struct.pack("<Q", old))
        return 0

    def sys_rt_sigreturn(self, t):
        return self.sigreturn(t)

    def sys_sigaltstack(self, t, ss, old):
        if old:
            t.group.space.write(old, struct.pack("<QiiQ", 0, 2, 0, 0))   # SS_DISABLE
        return 0

    def _signal_target(self, tid):
        target = self.threads.get(tid)
        return target if target is not None and target.live else None

    def sys_tgkill(self, t, tgid, tid, sig):
        target = self._signal_target(s32(tid))
        if target is None or target.group.pid != s32(tgid):
            return -errno.ESRCH
        if not 0 <= sig <= abi.NSIG:
            return -errno.EINVAL
        if sig:
            self.send_signal(target, sig)
        return 0

    def sys_tkill(self, t, tid, sig):
        target = self._signal_target(s32(tid))
        if target is None:
            return -errno.ESRCH
        if sig:
            self.send_signal(target, sig)
        return 0

    def sys_kill(self, t, pid, sig):
        g = next((g for g in self.groups if g.pid == s32(pid)), None)
        if g is None:
            return -errno.ESRCH
        if not sig:
            return 0
        members = [x for x in self.threads.values() if x.group is g and x.live]
        pick = next((x for x in members if not (x.sigmask >> (sig - 1)) & 1), members[0])
        self.send_signal(pick, sig)
        return 0

    # -------------------------------------------------------------- memory
    def sys_brk(self, t, addr):
        space = t.group.space
        if addr == 0:
            return space.brk
        return space.set_brk(addr)

    def sys_mmap(self, t, addr, length, prot, flags, fd, offset):
        space = t.group.space
        file = None
        if not flags & abi.MAP_ANONYMOUS:
            entry = t.group.fds.get(s32(fd))
            host = entry.fileno()
            if host is None or entry.kind != "file":
                return -errno.ENODEV
            if flags & abi.MAP_SHARED and prot & abi.PROT_WRITE and entry.flags & abi.O_ACCMODE != 2:
                return -errno.EACCES
            file = self.vm.file_for(entry.path, host)
        return space.mmap(addr, length, prot, flags, file, offset)

    def sys_munmap(self, t, addr, length):
        return t.group.space.munmap(addr, length)

    def sys_mprotect(self, t, addr, length, prot):
        return t.group.space.mprotect(addr, length, prot)

    def sys_msync(self, t, addr, length, flags):
        return t.group.space.msync(addr, length)

    def sys_madvise(self, t, addr, length, advice):
        return 0

    def sys_mremap(self, t, old, old_len, new_len, flags, new_addr):
        return -errno.ENOMEM

    # ---------------------------------------------------------------- time
    def sys_clock_gettime(self, t, clk, tp):
        if s32(clk) < 0 or clk > abi.CLOCK_BOOTTIME:
            return -errno.EINVAL
        t.group.space.write(tp, abi.pack_timespec(self.clock_read(clk)))
        return 0

    def sys_clock_getres(self, t, clk, tp):
        if tp:
            t.group.space.write(tp, abi.pack_timespec(self.opts.ns_per_tick))
        return 0

    def sys_gettimeofday(self, t, tv, tz):
        if tv:
            ns = self.clock_read(abi.CLOCK_REALTIME)
            t.group.space.write(tv, struct.pack("<qq", ns // 10**9, ns % 10**9 // 1000))
        return 0

    def _sleep(self, t, deadline):
        self.block(t, ("sleep",), deadline, 0)
        return BLOCK

    def sys_nanosleep(self, t, req, rem):
        ns = abi.unpack_timespec(t.group.space.read(req, 16))
        if ns < 0:
            return -errno.EINVAL
        return self._sleep(t, self.deadline_after(ns))

    def sys_clock_nanosleep(self, t, clk, flags, req, rem):
        ns = abi.unpack_timespec(t.group.space.read(req, 16))
        if flags & abi.TIMER_ABSTIME:
            now = self.clock_read(clk)
            return self._sleep(t, self.deadline_after(max(0, ns - now)))
        return self._sleep(t, self.deadline_after(ns))

    # ---------------------------------------------------------------- misc
    def sys_getrandom(self, t, buf, n, flags):
        n = min(n, 1 << 20)
        t.group.space.write(buf, self.rng.randbytes(n))
        return n

    def sys_uname(self, t, buf):
        t.group.space.write(buf, abi.pack_utsname())
        return 0

    def _rlimit(self, res):
        if res == 3:      # RLIMIT_STACK
            return 8 << 20, abi.RLIM_INFINITY
        if res == 7:      # RLIMIT_NOFILE
            return 1024, 1024
        return abi.RLIM_INFINITY, abi.RLIM_INFINITY

    def sys_prlimit64(self, t, pid, res, new, old):
        if old:
            t.group.space.write(old, struct.pack("<QQ", *self._rlimit(res)))
        return 0

    def sys_getrlimit(self, t, res, old):
        return self.sys_prlimit64(t, 0, res, 0, old)

    def sys_umask(self, t, mask):
        return 0o022

    def sys_prctl(self, t, option, a2, a3, a4, a5):
        return -errno.EINVAL

    # ------------------------------------------------------------------ io
    def sys_write(self, t, fd, buf, n):
        entry = t.group.fds.get(s32(fd))
        return entry.write(t.group.space.read(buf, n))

    def sys_writev(self, t, fd, iov, cnt):
        space = t.group.space
        entry = t.group.fds.get(s32(fd))
        data = b"".join(space.read(b, n) for b, n in self._iovecs(space, iov, cnt))
        return entry.write(data)

    def _iovecs(self, space, iov, cnt):
        if cnt > 1024:
            raise OSError(errno.EINVAL, "iovcnt")
        raw = space.read(iov, 16 * cnt)
        return [_IOV.unpack_from(raw, 16 * i) for i in range(cnt)]

    def sys_read(self, t, fd, buf, n):
        entry = t.group.fds.get(s32(fd))
        space = t.group.space
        n = min(n, 1 << 20)
        if entry.kind == "dir":
            return -errno.EISDIR
        if entry.may_block():
            def finish(th, data):
                th.group.space.write(buf, data)
                return len(data)
            return self.delegate(t, lambda: entry.read(n), finish)
        data = entry.read(n)
        space.write(buf, data)
        return len(data)

    def sys_readv(self, t, fd, iov, cnt):
        entry = t.group.fds.get(s32(fd))
        space = t.group.space
        vecs = self._iovecs(space, iov, cnt)
        data = entry.read(sum(n for _, n in vecs))
        pos = 0
        for b, n in vecs:
            part = data[pos:pos + n]
            space.write(b, part)
            pos += len(part)
        return len(data)

    def sys_pread64(self, t, fd, buf, n, off):
        data = t.group.fds.get(s32(fd)).pread(min(n, 1 << 20), off)
        t.group.space.write(buf, data)
        return len(data)

    def sys_pwrite64(self, t, fd, buf, n, off):
        entry = t.group.fds.get(s32(fd))
        if entry.host_fd is None:
            return -errno.ESPIPE
        return os.pwrite(entry.host_fd, t.group.space.read(buf, n), off)

    def sys_lseek(self, t, fd, off, whence):
        entry = t.group.fds.get(s32(fd))
        if entry.host_fd is None or entry.kind == "pipe":
            return -errno.ESPIPE
        return os.lseek(entry.host_fd, s64(off), whence)

    def _path(self, t, dirfd, ptr):
        path = os.fsdecode(t.group.space.read_cstring(ptr))
        if not path:
            raise OSError(errno.ENOENT, "empty path")
        if os.path.isabs(path):
            return path
        dirfd = s32(dirfd)
        if dirfd == abi.AT_FDCWD:
            return os.path.join(os.getcwd(), path)
        return os.path.join(t.group.fds.get(dirfd).path, path)

    def sys_openat(self, t, dirfd, ptr, flags, mode):
        path = self._path(t, dirfd, ptr)
        host_flags = (flags & ~abi.O_CLOEXEC) | os.O_CLOEXEC
        fd = os.open(path, host_flags, mode & 0o7777)
        st = os.fstat(fd)
        kind = "dir" if stat.S_ISDIR(st.st_mode) else "file" if stat.S_ISREG(st.st_mode) else "pipe"
        entry = FdEntry(kind, host_fd=fd, path=path, flags=flags, cloexec=bool(flags & abi.O_CLOEXEC))
        return t.group.fds.install(entry)

    def sys_close(self, t, fd):
        t.group.fds.close(s32(fd))
        return 0

    def sys_dup(self, t, fd):
        return t.group.fds.dup(s32(fd))

    def sys_dup3(self, t, fd, new, flags):
        if s32(fd) == s32(new):
            return -errno.EINVAL
        return t.group.fds.dup(s32(fd), s32(new), bool(flags & abi.O_CLOEXEC))

    def sys_fcntl(self, t, fd, cmd, arg):
        fds = t.group.fds
        entry = fds.get(s32(fd))
        if cmd in (abi.F_DUPFD, abi.F_DUPFD_CLOEXEC):
            return fds.dup(s32(fd), cloexec=cmd == abi.F_DUPFD_CLOEXEC, start=arg)
        if cmd == abi.F_GETFD:
            return abi.FD_CLOEXEC if entry.cloexec else 0
        if cmd == abi.F_SETFD:
            entry.cloexec = bool(arg & abi.FD_CLOEXEC)
            return 0
        if cmd == abi.F_GETFL:
            return entry.flags
        if cmd == abi.F_SETFL:
            entry.flags = (entry.flags & abi.O_ACCMODE) | (arg & ~abi.O_ACCMODE)
            return 0
        return -errno.EINVAL

    def sys_ioctl(self, t, fd, req, arg):
        entry = t.group.fds.get(s32(fd))
        if req == abi.TCGETS:
            if not entry.isatty():
                return -errno.ENOTTY
            t.group.space.write(arg, bytes(36))
            return 0
        if req == abi.TIOCGWINSZ:
            if not entry.isatty():
                return -errno.ENOTTY
            t.group.space.write(arg, struct.pack("<HHHH", 24, 80, 0, 0))
            return 0
        return -errno.ENOTTY

    def sys_pipe2(self, t, fds_ptr, flags):
        r, w = os.pipe2(os.O_CLOEXEC | (flags & abi.O_NONBLOCK))
        fds = t.group.fds
        rfd = fds.install(FdEntry("pipe", host_fd=r, path="<pipe>", flags=0))
        wfd = fds.install(FdEntry("pipe", host_fd=w, path="<pipe>", flags=1))
        t.group.space.write(fds_ptr, struct.pack("<ii", rfd, wfd))
        return 0

    def sys_fstat(self, t, fd, buf):
        entry = t.group.fds.get(s32(fd))
        host = entry.fileno()
        raw = abi.pack_stat(os.fstat(host)) if host is not None else abi.char_device_stat()
        t.group.space.write(buf, raw)
        return 0

    def sys_newfstatat(self, t, dirfd, ptr, buf, flags):
        if flags & abi.AT_EMPTY_PATH and not t.group.space.read_cstring(ptr):
            return self.sys_fstat(t, dirfd, buf)
        path = self._path(t, dirfd, ptr)
        st = os.stat(path, follow_symlinks=not flags & abi.AT_SYMLINK_NOFOLLOW)
        t.group.space.write(buf, abi.pack_stat(st))
        return 0

    def sys_faccessat(self, t, dirfd, ptr, mode):
        return 0 if os.access(self._path(t, dirfd, ptr), mode) else -errno.EACCES

    def sys_getcwd(self, t, buf, size):
        cwd = os.getcwd().encode() + b"\0"
        if len(cwd) > size:
            return -errno.ERANGE
        t.group.space.write(buf, cwd)
        return buf

    def sys_readlinkat(self, t, dirfd, ptr, buf, size):
        raw = t.group.space.read_cstring(ptr)
        if raw == b"/proc/self/exe":
            target = os.path.abspath(t.group.exe).encode()
        else:
            target = os.fsencode(os.readlink(self._path(t, dirfd, ptr)))
        target = target[:size]
        t.group.space.write(buf, target)
        return len(target)

    def sys_fsync(self, t, fd):
        t.group.fds.get(s32(fd))
        return 0


"""riscv64 Linux ABI numbers and struct layouts used by the runtime."""

from __future__ import annotations

import os
import stat as _stat
import struct

# syscall numbers (asm-generic table)
NR = dict(
    getcwd=17, dup=23, dup3=24, fcntl=25, ioctl=29, faccessat=48, chdir=49, openat=56, close=57,
    pipe2=59, getdents64=61, lseek=62, read=63, write=64, readv=65, writev=66, pread64=67,
    pwrite64=68, ppoll=73, readlinkat=78, newfstatat=79, fstat=80, fsync=82, exit=93,
    exit_group=94, set_tid_address=96, futex=98, set_robust_list=99, get_robust_list=100,
    nanosleep=101, clock_gettime=113, clock_getres=114, clock_nanosleep=115, sched_yield=124,
    kill=129, tkill=130, tgkill=131, sigaltstack=132, rt_sigsuspend=133, rt_sigaction=134,
    rt_sigprocmask=135, rt_sigreturn=139, uname=160, getrlimit=163, umask=166, prctl=167,
    gettimeofday=169, getpid=172, getppid=173, getuid=174, geteuid=175, getgid=176, getegid=177,
    gettid=178, sysinfo=179, brk=214, munmap=215, mremap=216, clone=220, execve=221, mmap=222,
    mprotect=226, msync=227, madvise=233, wait4=260, prlimit64=261, getrandom=278, rseq=293,
    clone3=435,
)
NAMES = {v: k for k, v in NR.items()}

# mmap
PROT_READ, PROT_WRITE, PROT_EXEC = 1, 2, 4
MAP_SHARED, MAP_PRIVATE = 0x01, 0x02
MAP_FIXED = 0x10
MAP_ANONYMOUS = 0x20
MAP_FIXED_NOREPLACE = 0x100000
MS_ASYNC, MS_INVALIDATE, MS_SYNC = 1, 2, 4

# futex
FUTEX_WAIT, FUTEX_WAKE = 0, 1
FUTEX_PRIVATE_FLAG = 128
FUTEX_CLOCK_REALTIME = 256

# clone
CLONE_VM = 0x100
CLONE_FS = 0x200
CLONE_FILES = 0x400
CLONE_SIGHAND = 0x800
CLONE_SETTLS = 0x80000
CLONE_PARENT_SETTID = 0x100000
CLONE_CHILD_CLEARTID = 0x200000
CLONE_THREAD = 0x10000
CLONE_CHILD_SETTID = 0x1000000
CLONE_REQUIRED = CLONE_VM | CLONE_THREAD | CLONE_SIGHAND

# clocks
CLOCK_REALTIME, CLOCK_MONOTONIC, CLOCK_PROCESS_CPUTIME, CLOCK_THREAD_CPUTIME = 0, 1, 2, 3
CLOCK_MONOTONIC_RAW, CLOCK_REALTIME_COARSE, CLOCK_MONOTONIC_COARSE, CLOCK_BOOTTIME = 4, 5, 6, 7
TIMER_ABSTIME = 1

# signals
SIG_DFL, SIG_IGN = 0, 1
SA_SIGINFO = 0x4
SA_NODEFER = 0x40000000
SA_RESETHAND = 0x80000000
SIG_BLOCK, SIG_UNBLOCK, SIG_SETMASK = 0, 1, 2
SIGKILL, SIGSEGV, SIGSTOP, SIGCHLD = 9, 11, 19, 17
DEFAULT_IGNORED = frozenset({17, 18, 23, 28})  # CHLD CONT URG WINCH
NSIG = 64

# ioctl / fcntl
TCGETS, TIOCGWINSZ = 0x5401, 0x5413
F_DUPFD, F_GETFD, F_SETFD, F_GETFL, F_SETFL, F_DUPFD_CLOEXEC = 0, 1, 2, 3, 4, 1030
FD_CLOEXEC = 1
O_ACCMODE = 3
O_CLOEXEC = 0o2000000
O_NONBLOCK = 0o4000
AT_FDCWD = -100
AT_EMPTY_PATH = 0x1000
AT_SYMLINK_NOFOLLOW = 0x100

# auxv
AT_NULL, AT_PHDR, AT_PHENT, AT_PHNUM, AT_PAGESZ, AT_BASE, AT_FLAGS, AT_ENTRY = 0, 3, 4, 5, 6, 7, 8, 9
AT_UID, AT_EUID, AT_GID, AT_EGID, AT_HWCAP, AT_CLKTCK = 11, 12, 13, 14, 16, 17
AT_SECURE, AT_RANDOM, AT_EXECFN = 23, 25, 31
HWCAP_RV64IMA = (1 << (ord("I") - ord("A"))) | (1 << (ord("M") - ord("A"))) | 1

_TIMESPEC = struct.Struct("<qq")
_STAT = struct.Struct("<QQIIIIQQqiiqqqqqqqII")
STAT_SIZE = _STAT.size
RLIM_INFINITY = (1 << 64) - 1


def pack_timespec(ns: int) -> bytes:
    return _TIMESPEC.pack(ns // 10**9, ns % 10**9)


def unpack_timespec(raw: bytes) -> int:
    sec, nsec = _TIMESPEC.unpack(raw)
    return sec * 10**9 + nsec


def pack_stat(st: os.stat_result) -> bytes:
    """Host stat result in the generic 128-byte kernel layout."""
    def split(ns):
        return ns // 10**9, ns % 10**9
    a, m, c = split(st.st_atime_ns), split(st.st_mtime_ns), split(st.st_ctime_ns)
    return _STAT.pack(st.st_dev & (2**64 - 1), st.st_ino, st.st_mode, st.st_nlink, st.st_uid, st.st_gid,
                      getattr(st, "st_rdev", 0), 0, st.st_size, st.st_blksize, 0, st.st_blocks,
                      a[0], a[1], m[0], m[1], c[0], c[1], 0, 0)


def char_device_stat() -> bytes:
    """Stat for a stream we cannot fstat on the host (captured stdio)."""
    return _STAT.pack(0, 1, _stat.S_IFCHR | 0o620, 1, 1000, 1000, 0x8801, 0, 0, 1024, 0, 0,
                      0, 0, 0, 0, 0, 0, 0, 0)


def pack_utsname(release: str = "6.1.0-fase", machine: str = "riscv64") -> bytes:
    fields = ["Linux", "fase", release, "#1 SMP", machine, "(none)"]
    return b"".join(f.encode().ljust(65, b"\0")[:65] for f in fields)

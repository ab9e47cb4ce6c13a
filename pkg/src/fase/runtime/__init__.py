"""Host-side runtime: threads, memory and syscalls for one target program."""

from .core import Fatal, Group, Runtime, RuntimeOptions, State, Thread

__all__ = ["Fatal", "Group", "Runtime", "RuntimeOptions", "State", "Thread"]

"""Host-delegated syscall emulation for a simulated RV64 target."""

__version__ = "0.1.0"

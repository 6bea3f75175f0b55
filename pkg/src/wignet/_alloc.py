"""glibc allocator tuning for the training hot path.

Each training step allocates and frees a few hundred MB of im2col buffers,
activations and gradients.  By default glibc serves blocks this large from
fresh mmap regions, so every step pays page-fault and zeroing costs for the
same memory over and over (hundreds of ms per step on small VMs).  Raising
the mmap and trim thresholds keeps those blocks on the ordinary heap, where
free/malloc cycles of identical sizes are reused without touching the
kernel.  Numerics are unaffected.  No-op off glibc.
"""

from __future__ import annotations

import ctypes
import sys

_done = False

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_malloc() -> bool:
    """Idempotent; returns True if the thresholds were raised."""
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        ok = bool(libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30))
        ok = bool(libc.mallopt(_M_TRIM_THRESHOLD, 1 << 29)) and ok
    except OSError:
        return False
    _done = ok
    return ok

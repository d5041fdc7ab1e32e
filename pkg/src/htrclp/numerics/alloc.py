"""Keep large numpy buffers on the heap instead of fresh mmap'd pages.

Training allocates and frees the same multi-megabyte buffers every step.
glibc returns those to the kernel by default, so each step pays page
faults again; raising the mmap and trim thresholds avoids that.
"""
from __future__ import annotations

import ctypes
import ctypes.util

M_TRIM_THRESHOLD = -1
M_TOP_PAD = -2
M_MMAP_THRESHOLD = -3

_done = False


def tune_allocator() -> bool:
    """Best effort; returns False where glibc's mallopt is unavailable."""
    global _done
    if _done:
        return True
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = all(mallopt(opt, val) == 1 for opt, val in
             ((M_MMAP_THRESHOLD, 1 << 30), (M_TRIM_THRESHOLD, (1 << 31) - 1), (M_TOP_PAD, 1 << 28)))
    _done = ok
    return ok

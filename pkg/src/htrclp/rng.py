"""Named random substreams derived from one experiment seed.

Every stochastic stage (init, dropout, augment, corrupt, split, bootstrap, ...)
draws from its own generator so that changing how much one stage consumes
never shifts the numbers seen by another.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed, *names):
    """Return a generator for ``seed`` keyed by the path ``names``.

    >>> substream(3, "init").random() == substream(3, "init").random()
    True
    """
    key = tuple(_key(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def derive_seed(seed, *names):
    """Integer seed for a named child stage (stable across platforms)."""
    return int(substream(seed, *names).integers(0, 2**31 - 1))

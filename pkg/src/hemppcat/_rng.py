"""Named random streams derived from a single 64-bit master seed.

Every stochastic choice in the package pulls a generator from
:func:`stream`, keyed by the master seed plus a tuple of names/ints.  The
underlying bit generator is Philox (counter based), so streams with
different keys are independent and reproducible regardless of the order in
which they are requested.
"""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream keys must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *keys):
    """Return a ``numpy.random.Generator`` for ``(seed, *keys)``."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *keys):
    """A child 64-bit seed, for handing to APIs that take plain seeds."""
    return int(stream(seed, "derive", *keys).integers(0, 2**63))

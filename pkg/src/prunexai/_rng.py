import zlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def derive_rng(seed, *keys):
    """Return a Generator whose stream depends only on ``seed`` and ``keys``.

    Keys may be ints or strings; strings are mapped through CRC32 so the
    stream is stable across processes (unlike ``hash``).
    """
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed, *keys):
    """Derive a 63-bit integer seed, for passing to nested configs."""
    return int(derive_rng(seed, *keys).integers(0, 2**63 - 1))

import hashlib

import numpy as np


def derive_seed(master, *keys):
    """Stable 64-bit child seed for ``(master, *keys)``; independent of run order."""
    text = "/".join([str(int(master))] + [str(k) for k in keys])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def make_rng(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys) if keys else seed)

"""Deterministic derivation of independent seeds from a master seed and labels."""

from __future__ import annotations

import hashlib

import numpy as np


def _word(key) -> int:
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    digest = hashlib.sha256(str(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(master: int, *keys) -> int:
    """63-bit seed that depends only on ``master`` and the ordered ``keys``."""
    ss = np.random.SeedSequence([_word(master), *(_word(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

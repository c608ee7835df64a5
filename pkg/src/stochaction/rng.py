"""Counter-based random streams.

Every consumer of randomness derives its own Philox stream from
``(seed, purpose, index)``, so results never depend on scheduling order or
thread count.  ``purpose`` separates the independent uses of a trial's
randomness (initial draw, sign path, ...).
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_MASK48 = (1 << 48) - 1

# purpose tags
INITIAL = 1
SIGNS = 2
PRIOR = 3
GENERIC = 0


def stream(seed: int, purpose: int = GENERIC, index: int = 0) -> np.random.Generator:
    """Independent generator keyed by (seed, purpose, index)."""
    if index < 0 or index > _MASK48:
        raise ValueError("stream index out of range")
    key = np.array([seed & _MASK64, ((purpose & 0xFFFF) << 48) | (index & _MASK48)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

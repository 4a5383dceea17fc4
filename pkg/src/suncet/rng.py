"""Counter-based random streams.

All randomness comes from Philox-4x64 (numpy's ``Philox`` bit generator).
A stream is addressed by ``(seed, tag, index)``: the 128-bit key is
``[seed, tag]`` and the 256-bit counter starts at ``[0, 0, index, 0]``.
Draws inside one stream advance counter word 0, so streams for distinct
``(tag, index)`` pairs never overlap in practice. Because the address is
explicit, any batch can be regenerated without replaying earlier ones.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream tags
LABEL_SPLIT = 1
INIT = 2
PERMUTATION = 3
UNSUP_AUGMENT = 4
SUP_BATCH = 5
FINETUNE = 6
SYNTHETIC = 7
PROBE = 8


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Return a fresh generator for the stream ``(seed, tag, index)``."""
    key = np.array([seed & MASK64, tag & MASK64], dtype=np.uint64)
    counter = np.array([0, 0, index & MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))

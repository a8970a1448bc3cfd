"""Counter-based random streams.

Every stochastic component derives its own Philox stream from a tuple key
(master seed plus structural indices), so parallel and serial execution,
and any batching order, produce identical draws.
"""

import numpy as np


def stream(*key: int) -> np.random.Generator:
    """Independent generator for a structural key, e.g. (seed, split, index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def derive_seed(*key: int) -> int:
    """64-bit seed derived deterministically from a structural key."""
    return int(np.random.SeedSequence(list(key)).generate_state(1, np.uint64)[0])

"""Deterministic seed derivation.

Every random object in the package (noise core, signal factors, Haar
rotations, QJL projections, evaluation queries) is drawn from a Philox
counter-based generator whose key is derived from a root seed plus a small
tuple of integers (block index, role).  The derivation goes through
``numpy.random.SeedSequence`` so nearby roots give unrelated streams.
"""

import numpy as np

MASK64 = (1 << 64) - 1

ROLES = {
    "noise": 0,
    "left": 1,
    "right": 2,
    "rotation": 3,
    "qjl": 4,
    "factors": 5,
    "queries": 6,
}


def derive_seed(root, *keys):
    """Hash ``root`` and integer/role ``keys`` into a 64-bit seed."""
    words = [int(root) & MASK64]
    for key in keys:
        if isinstance(key, str):
            key = ROLES[key]
        words.append(int(key) & MASK64)
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def generator(seed):
    """Return a Philox-backed ``Generator`` for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & MASK64))

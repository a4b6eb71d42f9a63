"""Counter-based randomness helpers.

Every latent vector and every projection matrix is drawn from its own
Philox stream keyed by (seed, role) with the object index placed in the
top counter word, so results never depend on generation order or thread
count.  Normal variates come from numpy's Generator (ziggurat); uniform
draws for ball radii use the same per-object stream.
"""

import numpy as np
from numpy.random import Generator, Philox

MASK64 = (1 << 64) - 1

# Stream roles: distinct roles never share a Philox key.
ROLE_ALPHA = 0
ROLE_BETA = 1
ROLE_JL = 2
ROLE_GRID = 3

_GAMMA = 0x9E3779B97F4A7C15
_MIX = 0xD1B54A32D192ED03


def splitmix64(x: int) -> int:
    """One splitmix64 step, uint64 -> uint64."""
    x = (x + _GAMMA) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Hash (master, *indices) into a child seed.

    Used for scan cells: adding cells never perturbs other cells' draws.
    """
    h = splitmix64(master & MASK64)
    for ix in indices:
        h = splitmix64(h ^ ((ix & MASK64) * _MIX & MASK64))
    return h


def stream(seed: int, role: int, index: int = 0) -> Generator:
    """Generator for object ``index`` of the (seed, role) stream."""
    key = np.array([seed & MASK64, role & MASK64], dtype=np.uint64)
    counter = np.array([0, 0, 0, index & MASK64], dtype=np.uint64)
    return Generator(Philox(key=key, counter=counter))

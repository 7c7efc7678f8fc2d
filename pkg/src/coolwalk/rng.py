"""Seed derivation and counter-based per-site uniforms.

Every random quantity in the package is a pure function of a 64-bit master
seed plus integer keys, so runs replay bit-exactly and cells can be
evaluated in any order.
"""

import numpy as np

# Sites are shifted by this amount so negative sites map to valid counters.
_SITE_OFFSET = 1 << 63
_MASK64 = (1 << 64) - 1

# Key tags keep the derived streams of different consumers disjoint.
ENV_TAG = 0x454E56  # environment of an interval
WALK_TAG = 0x57414C  # walk increments of an interval
CELL_TAG = 0x43454C  # experiment cells


def derive_seed(master, *keys):
    """Return a 64-bit child seed that depends only on ``master`` and ``keys``."""
    entropy = [int(master) & _MASK64] + [int(k) & _MASK64 for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def generator(seed):
    """Sequential generator for walk increments (prefix-stable in draw count)."""
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))


def site_uniforms(seed, lo, length):
    """Uniforms in [0, 1) for sites ``lo .. lo+length-1``.

    The value at site ``x`` is a function of ``(seed, x)`` alone: Philox is
    keyed by the seed and its block counter addresses the site directly.
    """
    if length <= 0:
        return np.empty(0)
    first = int(lo) + _SITE_OFFSET
    block, lane = divmod(first, 4)
    n_blocks = (lane + length + 3) // 4
    bits = np.random.Philox(key=int(seed) & _MASK64, counter=block).random_raw(4 * n_blocks)
    bits = bits[lane:lane + length]
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

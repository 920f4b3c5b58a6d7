"""Deterministic seed derivation shared by every randomized operation."""

import numpy as np

U64_MASK = (1 << 64) - 1


def mix_seed(seed, *keys):
    """Derive an independent 64-bit sub-seed from ``seed`` and integer ``keys``."""
    entropy = [int(seed) & U64_MASK] + [int(k) & U64_MASK for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def rng_for(seed, *keys):
    return np.random.default_rng(mix_seed(seed, *keys))


def hash_u64(seed, value):
    """Stable 64-bit hash of an integer under ``seed`` (splitmix64 finalizer)."""
    z = (int(value) + mix_seed(seed) + 0x9E3779B97F4A7C15) & U64_MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & U64_MASK
    return z ^ (z >> 31)

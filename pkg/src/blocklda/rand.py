"""Seed handling shared by the samplers and the CLI."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 step; standard constants."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_chain_seed(base_seed: int, chain_index: int) -> int:
    """Per-chain seed: splitmix64(splitmix64(base_seed) ^ (chain_index + 1)).

    Fixed mixing function so that a run is reproducible from its base seed
    alone, and distinct chains get decorrelated streams.
    """
    if chain_index < 0:
        raise ValueError("chain_index must be >= 0")
    return splitmix64(splitmix64(base_seed & _MASK64) ^ (chain_index + 1))


def as_generator(seed) -> np.random.Generator:
    """Accept an int seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)

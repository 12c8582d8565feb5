"""Seeded, splittable random streams (Philox counter-based generator)."""
import numpy as np


def make_rng(seed):
    """Generator for an int seed or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def split(seed, n):
    """``n`` independent child generators derived from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [make_rng(child) for child in ss.spawn(n)]

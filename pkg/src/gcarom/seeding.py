"""Seeded random generators.

All randomness goes through numpy's PCG64 bit generator, whose output stream
is fixed by the seed on every platform numpy supports.
"""
import numpy as np


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def child_rng(seed, *keys):
    """Independent stream for a named purpose (mask, split, init, ...)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *keys])))

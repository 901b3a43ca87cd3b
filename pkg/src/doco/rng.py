"""Deterministic keyed random streams.

Every random draw in the package comes from a generator keyed by a tuple of
nonnegative integers, so any quantity (a round's graph, a node's round-t cost
coefficients) is a pure function of its key and independent of call order.
"""

from __future__ import annotations

import numpy as np


def keyed_rng(*key: int) -> np.random.Generator:
    """Counter-based generator that is a pure function of the integer key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

"""Named random streams derived from one experiment seed.

Every stage of a run (split, init, train, eval sampling) pulls from its own
stream so that, e.g., changing how many evaluation pairs get sampled can
never shift the training trajectory.
"""

from __future__ import annotations

import zlib

import numpy as np


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Return a fresh generator keyed by (seed, name).

    Equal (seed, name) pairs always yield identical streams; distinct names
    under the same seed are statistically independent.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed % (2**63), key]))

"""Deterministic RNG streams.

Every stochastic component draws from its own child generator keyed by a
(seed, stream, *indices) tuple through ``numpy.random.SeedSequence``.  Child
streams are statistically independent and stable across processes, so results
do not depend on scheduling or on how work is split among workers.
"""

from __future__ import annotations

import numpy as np

STREAM_ASSIGN = 1      # rule-to-sequence assignment shuffle
STREAM_SEQUENCE = 2    # per-sequence event generation
STREAM_INIT = 3        # embedding initialisation
STREAM_GUMBEL = 4      # per-step selection noise
STREAM_BATCH = 5       # minibatch order shuffling
STREAM_RESTART = 6     # per-restart fit streams
STREAM_SPLIT = 7       # train/test splitting
STREAM_REP = 8         # experiment repetition streams


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Child generator for the stream identified by ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))

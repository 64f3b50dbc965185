"""Deterministic random streams.

Every stream is a Philox (counter-based, 64-bit) generator keyed by the
master seed plus a spawn key such as ``(stage, chain)`` or
``(stage, draw)``.  Results depend only on these keys, never on the
order in which work is scheduled.
"""
import zlib

import numpy as np

STAGE_MCMC = "mcmc"
STAGE_COMPOSE = "compose"
STAGE_PREDICT = "predict"
STAGE_SIMULATE = "simulate"
STAGE_FOLDS = "folds"


def _code(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def stream(seed, *key) -> np.random.Generator:
    """Philox generator for ``(seed, *key)``; string key parts are hashed with CRC-32."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_code(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))

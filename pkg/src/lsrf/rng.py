"""Counter-based random streams keyed by (seed, purpose, index...)."""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]

# purpose tags; kept stable so streams stay reproducible across versions
MASSES = 1
SITES = 2
NOISE = 3
TRUNCATION = 4
COVARIATES = 5


def _entropy(seed: Seed):
    if isinstance(seed, (int, np.integer)):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        return int(seed)
    vals = [int(s) for s in seed]
    if any(v < 0 for v in vals):
        raise ValueError("seed must be non-negative")
    return vals


def stream(seed: Seed, *key: int) -> np.random.Generator:
    """Independent Philox generator for ``key`` under ``seed``.

    Streams with different keys are statistically independent and do not
    depend on the order in which they are created.
    """
    ss = np.random.SeedSequence(entropy=_entropy(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def seed_words(seed: Seed) -> list[int]:
    e = _entropy(seed)
    return [e] if isinstance(e, int) else list(e)

"""Counter-based random streams.

Every stochastic routine in the package derives its generator from a run seed
plus an integer path (episode index, batch index, trial index, ...), so results
are reproducible regardless of how work is scheduled across workers.
"""

from __future__ import annotations

import os

import numpy as np

# Namespace tags keep unrelated consumers of the same run seed on disjoint
# streams.  Values are arbitrary but frozen: changing them changes every
# seeded result in the package.
NS_EPISODE = 1
NS_BATCH = 2
NS_GENERATIVE = 3
NS_TRIAL = 4
NS_BUILD = 5
NS_MONTE_CARLO = 6


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent Philox generator for (seed, *path).

    Path components must be nonnegative and < 2**32.
    """
    key = tuple(int(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *path: int) -> int:
    """Derived integer seed for a sub-run (trial, worker, ...)."""
    return int(stream(seed, *path).integers(0, 2**63 - 1))


def thread_count(default: int | None = None) -> int:
    """Worker cap from LINRL_THREADS; falls back to cpu count."""
    raw = os.environ.get("LINRL_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    if default is not None:
        return default
    return max(1, os.cpu_count() or 1)

"""
attractor_platform/seeding.py
=============================
Counter-based random streams. Every stochastic component derives its own
generator from the master seed, a fixed stream id and integer counters
(episode, sample index, ...), so results never depend on call order.
"""
from __future__ import annotations
from typing import Dict

import numpy as np

STREAMS: Dict[str, int] = {
    "catalog": 1,
    "boa_split": 2,
    "svm": 3,
    "policy_init": 4,
    "critic_init": 5,
    "cem": 6,
    "cem_update": 7,
    "ddpg": 8,
    "ddpg_sample": 9,
    "eval": 10,
}


def derive_seed_sequence(master_seed: int, stream: str, *counters: int) -> np.random.SeedSequence:
    if stream not in STREAMS:
        raise ValueError(f"unknown random stream {stream!r}; expected one of {sorted(STREAMS)}")
    if master_seed < 0 or any(c < 0 for c in counters):
        raise ValueError("seeds and counters must be non-negative")
    return np.random.SeedSequence([int(master_seed), STREAMS[stream], *(int(c) for c in counters)])


def derive_rng(master_seed: int, stream: str, *counters: int) -> np.random.Generator:
    """Generator for (master_seed, stream, *counters); identical arguments give identical draws."""
    return np.random.default_rng(derive_seed_sequence(master_seed, stream, *counters))


def derive_int(master_seed: int, stream: str, *counters: int) -> int:
    """A plain integer seed for APIs that take one."""
    return int(derive_seed_sequence(master_seed, stream, *counters).generate_state(1)[0])

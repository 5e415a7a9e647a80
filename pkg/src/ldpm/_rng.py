"""Seeding helpers shared by protocols, games and experiments."""
from __future__ import annotations

import hashlib
import os
from typing import NamedTuple

import numpy as np

STREAM_NAMES = ("data", "public", "adversary", "messages", "aggregator")


class Streams(NamedTuple):
    data: np.random.Generator
    public: np.random.Generator
    adversary: np.random.Generator
    messages: np.random.Generator
    aggregator: np.random.Generator


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(seed.integers(0, 2**63, size=2).tolist())
    if seed is None:
        return np.random.SeedSequence()
    if isinstance(seed, (tuple, list)):
        return np.random.SeedSequence([int(s) for s in seed])
    return np.random.SeedSequence(int(seed))


def game_streams(seed) -> Streams:
    """Four independent generators derived from one seed.

    Honest and manipulated runs built from the same seed draw data, public
    randomness and honest messages from identical streams, so only the
    corrupted users' messages differ.
    """
    children = as_seed_sequence(seed).spawn(len(STREAM_NAMES))
    return Streams(*(np.random.default_rng(c) for c in children))


def trial_seed(master: int, grid_index: int, trial_index: int) -> int:
    """Stable 64-bit seed for one trial of one grid point."""
    h = hashlib.blake2b(digest_size=8)
    h.update(f"{int(master)}:{int(grid_index)}:{int(trial_index)}".encode())
    return int.from_bytes(h.digest(), "little")


def default_seed(fallback: int = 0) -> int:
    raw = os.environ.get("LDPM_SEED")
    if raw is None or raw.strip() == "":
        return fallback
    return int(raw)

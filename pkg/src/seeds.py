# src/seeds.py — named, counter-based random sub-streams
from __future__ import annotations

import hashlib

import numpy as np


def _name_words(name: str) -> list:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream_seed(master_seed: int, name: str) -> np.random.SeedSequence:
    """Seed material for sub-stream `name`; streams with different names never share state."""
    return np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *_name_words(name)])


def stream_rng(master_seed: int, name: str) -> np.random.Generator:
    # Philox: counter-based bit generator
    return np.random.Generator(np.random.Philox(stream_seed(master_seed, name)))

"""Seed fan-out: one root seed, independent named streams."""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode())


def stream(root_seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for (root, name, extra...) that never collides with other names."""
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), stream_key(name), *map(int, extra)]))

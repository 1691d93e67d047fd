"""Seeded, splittable random streams.

Every stochastic step in the package takes an explicit ``numpy.random.Generator``.
Named child streams are derived from the root seed so that adding a new
consumer never shifts the draws seen by an existing one.
"""
from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent stream keyed by ``(seed, name)``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, key])))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(n)]

"""Seeded, stream-separated random number generation.

Every random draw in the package goes through :class:`RngSeed`, which maps a
``(seed, stream)`` pair plus optional sub-keys onto a counter-based Philox
generator. Two objects with equal keys produce identical sequences on every
platform; distinct trials use distinct streams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

_U64 = 2**64


@dataclass(frozen=True)
class RngSeed:
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not (0 <= int(v) < _U64):
                raise ParameterError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def generator(self, *subkeys: int) -> np.random.Generator:
        """Independent generator for this (seed, stream) and purpose sub-keys."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), *map(int, subkeys)))
        return np.random.Generator(np.random.Philox(ss))

    @classmethod
    def for_trial(cls, base_seed: int, trial_index: int, attempt: int = 0) -> "RngSeed":
        # attempts occupy the high half so resampled trials never collide
        return cls(int(base_seed), int(trial_index) + (int(attempt) << 32))


def as_generator(rng: RngSeed | np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    return RngSeed(0 if rng is None else int(rng)).generator()

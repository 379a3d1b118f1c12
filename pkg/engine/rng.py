#!/usr/bin/env python3
"""
Seeded, splittable random state built on numpy's counter-based Philox generator.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

ALGORITHM = "philox"
_MAX_SEED = 2 ** 64


@dataclass(frozen=True)
class RngState:
    """
    A seed for a named counter-based generator.

    Identical seeds give bit-identical streams on every platform numpy supports,
    because both SeedSequence hashing and Philox are specified bit-exactly.
    """

    seed: int
    algorithm: str = ALGORITHM

    def __post_init__(self):
        if not 0 <= int(self.seed) < _MAX_SEED:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.algorithm != ALGORITHM:
            raise ValueError(f"Unsupported generator algorithm '{self.algorithm}'")

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this state's stream."""
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(self.seed))))

    def fold_in(self, *keys: int) -> "RngState":
        """
        Derive an independent child state from this seed and integer keys.
        """
        entropy = [int(self.seed)] + [int(k) for k in keys]
        child = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
        return RngState(seed=int(child), algorithm=self.algorithm)

    def split(self, count: int) -> List["RngState"]:
        """``count`` independent child states."""
        return [self.fold_in(i) for i in range(count)]

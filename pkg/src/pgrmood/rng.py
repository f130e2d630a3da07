"""Named, reproducible random streams.

Every stochastic stage draws from ``stream(seed, "stage", ...)`` so that
adding a stage never shifts the numbers another stage sees.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(n) for n in names)])


def stream(seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *names)))


def torch_seed(seed: int, *names) -> int:
    return int(seed_sequence(seed, *names).generate_state(1, dtype=np.uint64)[0] >> 1)

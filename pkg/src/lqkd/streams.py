"""Counter-based random streams.

Every uniform draw is addressed by (master seed, purpose, lane, round):
the lane is usually a user or slot index. The value for a given address
does not depend on which other draws were made or in what order, so
rounds can be generated in any chunking or in parallel.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "setting": 1,
    "noise": 2,
    "outcome": 3,
    "uniform": 4,
    "coin": 5,
    "sacrifice": 6,
    "sample": 7,
}

_BLOCK = 4  # Philox emits four 64-bit words per counter step


def _key(seed: int, purpose: str, lane: int) -> int:
    words = np.random.SeedSequence([seed & (2 ** 64 - 1), PURPOSES[purpose], lane + 1]).generate_state(
        2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def uniforms(seed: int, purpose: str, lane: int, start: int, count: int) -> np.ndarray:
    """Uniforms in [0, 1) for rounds ``start .. start+count-1`` of one stream."""
    bitgen = np.random.Philox(key=_key(seed, purpose, lane))
    bitgen.advance(start // _BLOCK)
    skip = start % _BLOCK
    return np.random.Generator(bitgen).random(skip + count)[skip:]


def generator(seed: int, purpose: str = "sample", lane: int = 0) -> np.random.Generator:
    """A plain Generator on the stream, for code that wants the numpy API."""
    return np.random.Generator(np.random.Philox(key=_key(seed, purpose, lane)))

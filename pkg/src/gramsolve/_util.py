"""Seeded randomness helpers.

Every random draw in the library flows through these functions so that a run
is fully determined by the user-supplied 64-bit seeds.
"""

from __future__ import annotations

import numpy as np


def rng_from(seed: int, *tags: int) -> np.random.Generator:
    """Generator derived deterministically from (seed, tags).

    Distinct tag tuples give statistically independent streams, so callers can
    hand out per-purpose sub-seeds without coordinating counters.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, tags)))))


def polar_normals(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normals via the Marsaglia polar method.

    Pinned algorithm (instead of Generator.standard_normal) so that byte-level
    reproducibility depends only on the PCG64 uniform stream, not on the
    normal-sampling implementation of the running numpy version.
    """
    out = np.empty(size, dtype=np.float64)
    filled = 0
    while filled < size:
        need = size - filled
        # Acceptance rate is pi/4; draw with slack to keep loop count low.
        m = max(16, int(need * 1.45) + 8)
        u = rng.random(m) * 2.0 - 1.0
        v = rng.random(m) * 2.0 - 1.0
        s = u * u + v * v
        ok = (s > 0.0) & (s < 1.0)
        u, v, s = u[ok], v[ok], s[ok]
        f = np.sqrt(-2.0 * np.log(s) / s)
        pair = np.empty(2 * len(s), dtype=np.float64)
        pair[0::2] = u * f
        pair[1::2] = v * f
        take = min(len(pair), need)
        out[filled:filled + take] = pair[:take]
        filled += take
    return out


def polar_normal_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return polar_normals(rng, rows * cols).reshape(rows, cols)


def rademacher_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return (rng.integers(0, 2, size=(rows, cols), dtype=np.int8) * 2 - 1).astype(np.float64)

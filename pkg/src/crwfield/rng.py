"""Counter-based random streams for reproducible, order-independent simulation.

Every uniform variate is a pure function of ``(seed, slot, lane, purpose)``,
computed with the Philox4x32-10 block cipher (Salmon et al., SC'11).  The
counter words are ``(slot, lane, purpose, 0)`` and the key is the 64-bit seed
split into two 32-bit halves.  Because no generator state is carried between
draws, a sweep cell produces identical numbers whether it runs alone, first,
last, or in a worker process.

The algorithm and the counter layout are part of the reproducibility contract:
changing either changes every pinned regression value.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x32-10"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# purpose tags (third counter word)
ARRIVALS = 0
SERVICE = 1


def philox4x32(c0, c1, c2, c3, key0: int, key1: int):
    """Vectorised Philox4x32-10 block function.

    Counter words may be arrays of any common broadcastable shape; each must
    hold values below 2**32.  Returns four ``uint64`` arrays whose values fit
    in 32 bits.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(
        *(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    )
    k0 = np.uint64(key0 & 0xFFFFFFFF)
    k1 = np.uint64(key1 & 0xFFFFFFFF)
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _split_seed(seed: int) -> tuple[int, int]:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    seed &= 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed: int, slots, lanes, purpose: int) -> np.ndarray:
    """Uniform doubles in [0, 1) indexed by a (slot, lane) grid.

    ``slots`` and ``lanes`` are broadcast against each other, so
    ``uniforms(s, np.arange(n)[:, None], np.arange(m)[None, :], ARRIVALS)``
    yields an ``(n, m)`` block.  53 bits of the cipher output are used.
    """
    k0, k1 = _split_seed(int(seed))
    w0, w1, _, _ = philox4x32(slots, lanes, purpose, 0, k0, k1)
    return ((w0 >> np.uint64(5)) * np.uint64(1 << 26) + (w1 >> np.uint64(6))).astype(
        np.float64
    ) / float(1 << 53)

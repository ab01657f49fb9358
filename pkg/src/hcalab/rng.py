"""Counter-based uniform draws (Philox4x32-10), vectorized over numpy arrays.

Every draw is a pure function of ``(seed, index, step, stream)``, so trajectories
can be generated in any order, or in parallel, and still come out identical.
"""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


def philox4x32(counter, key, rounds=10):
    """Apply the Philox4x32 bijection.

    ``counter`` is a sequence of four uint32-valued arrays (broadcastable),
    ``key`` a pair of uint32 values. Returns four uint64 arrays holding 32-bit words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def _to_unit(hi, lo):
    # 53 random bits -> double in [0, 1)
    return ((hi >> np.uint64(5)).astype(np.float64) * 67108864.0
            + (lo >> np.uint64(6)).astype(np.float64)) / 9007199254740992.0


def uniform_pair(seed, index, step):
    """Two independent uniforms in [0, 1) keyed by (seed, index, step).

    ``index`` and ``step`` may be arrays; the result broadcasts over them.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    key = (seed & 0xFFFFFFFF, seed >> 32)
    index = np.asarray(index, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint64)
    w0, w1, w2, w3 = philox4x32(
        (index & _MASK, index >> _SHIFT, step & _MASK, np.zeros_like(step)), key)
    return _to_unit(w0, w1), _to_unit(w2, w3)

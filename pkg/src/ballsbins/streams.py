"""Counter-based random streams.

Every uniform variate is a pure function of ``(seed, replicate, channel, j)``
computed with Philox4x32-10, so a clock can be extended, replayed or
evaluated on another worker and still see exactly the same numbers.
"""

import numba as nb
import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT32 = np.uint64(32)
_TWO_M53 = 1.0 / 9007199254740992.0

# channel ids; bins of the embedding use 0 and 1
CHANNEL_DISCRETE = 16


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds on uint64-held 32-bit words."""
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def _to_open_unit(a, b):
    return (
        float(a >> np.uint64(5)) * 67108864.0 + float(b >> np.uint64(6)) + 0.5
    ) * _TWO_M53


@nb.njit(cache=True)
def uniform_at(k0, k1, rep, channel, j):
    """Uniform on the open unit interval addressed by (replicate, channel, j)."""
    r = np.uint64(rep)
    o0, o1, o2, o3 = philox4x32(
        np.uint64(j) >> np.uint64(1),
        np.uint64(channel),
        r & _MASK32,
        r >> _SHIFT32,
        k0,
        k1,
    )
    if j & 1:
        return _to_open_unit(o2, o3)
    return _to_open_unit(o0, o1)


@nb.njit(cache=True)
def fill_uniforms(out, k0, k1, rep, channel, j0):
    """Write uniforms for indices ``j0 .. j0 + len(out) - 1`` into ``out``."""
    n = out.shape[0]
    r = np.uint64(rep)
    rlo = r & _MASK32
    rhi = r >> _SHIFT32
    ch = np.uint64(channel)
    i = 0
    j = j0
    if j & 1 and n > 0:
        out[0] = uniform_at(k0, k1, rep, channel, j)
        i = 1
        j += 1
    while i < n:
        o0, o1, o2, o3 = philox4x32(np.uint64(j) >> np.uint64(1), ch, rlo, rhi, k0, k1)
        out[i] = _to_open_unit(o0, o1)
        if i + 1 < n:
            out[i + 1] = _to_open_unit(o2, o3)
        i += 2
        j += 2


@nb.njit(cache=True)
def fill_exponentials(out, inv_rate, k0, k1, rep, channel, j0):
    """``out[i] = -ln(U_{j0+i}) / rate[j0+i]`` with ``inv_rate`` indexed by j."""
    fill_uniforms(out, k0, k1, rep, channel, j0)
    for i in range(out.shape[0]):
        out[i] = -np.log(out[i]) * inv_rate[j0 + i]


@nb.njit(cache=True)
def exponential_block(inv_rate, k0, k1, rep_start, count, channel, j0, j1):
    out = np.empty((count, j1 - j0))
    for r in range(count):
        fill_exponentials(out[r], inv_rate, k0, k1, rep_start + r, channel, j0)
    return out


@nb.njit(cache=True)
def uniform_block(k0, k1, rep_start, count, channel, j0, j1):
    out = np.empty((count, j1 - j0))
    for r in range(count):
        fill_uniforms(out[r], k0, k1, rep_start + r, channel, j0)
    return out


def split_seed(seed):
    """Split a 64-bit seed into the two Philox key words."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


class RandomStream:
    """Uniform and exponential variates addressed by position.

    A stream is the pair ``(seed, replicate)``; within it, ``channel`` selects
    an independent sequence (one per bin of the embedding) and ``j`` the
    position in that sequence.
    """

    def __init__(self, seed, replicate=0):
        self.seed = int(seed)
        self.replicate = int(replicate)
        self.key = split_seed(seed)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, replicate={self.replicate})"

    def uniforms(self, channel, start, count):
        out = np.empty(int(count))
        fill_uniforms(out, self.key[0], self.key[1], self.replicate, int(channel), int(start))
        return out

    def exponentials(self, channel, start, rates):
        """Exponentials with the given rates at positions ``start, start+1, ...``."""
        rates = np.asarray(rates, dtype=float)
        return -np.log(self.uniforms(channel, start, rates.size)) / rates

    def spawn(self, replicate):
        return RandomStream(self.seed, replicate)

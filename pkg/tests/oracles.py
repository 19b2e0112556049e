"""Independent reference computations used by the tests.

Nothing here imports the package: each oracle recomputes its quantity by a
different route (lattice recursion, closed-form products, exact rationals).
"""

from fractions import Fraction
import math

import mpmath
import numba as nb
import numpy as np


@nb.njit(cache=True)
def _crossing_mass(m, K, p):
    """Pr[both bins reach m] for f = x^p from (1, 1), split as (lattice part, tail estimate).

    Visit probabilities of states (a, b) with b < m are propagated along
    a = 1..K; the event happens when a bin-2 ball arrives at (a, m - 1) with
    a >= m.  The symmetric crossing doubles it.
    """
    f = np.arange(K + 2, dtype=np.float64) ** p
    prev = np.zeros(m)
    total = 0.0
    last = 0.0
    for a in range(1, K + 1):
        cur = np.zeros(m)
        for b in range(1, m):
            v = 1.0 if (a == 1 and b == 1) else 0.0
            if a > 1:
                v += prev[b] * f[a - 1] / (f[a - 1] + f[b])
            if b > 1:
                v += cur[b - 1] * f[b - 1] / (f[a] + f[b - 1])
            cur[b] = v
        if a >= m:
            total += cur[m - 1] * f[m - 1] / (f[a] + f[m - 1])
        last = cur[m - 1]
        prev = cur
    # beyond K the visit mass at (a, m - 1) is essentially frozen
    tail = last * (m - 1) ** p / (K ** (p - 1) * (p - 1))
    return total, tail


def losing_tail_exact(p, n, K=2 * 10**6):
    """Pr[L > n] from (1, 1) for f = x^p: the loser ends with >= n + 2 balls."""
    total, tail = _crossing_mass(n + 2, K, float(p))
    return 2.0 * (total + tail)


def c_closed_form_p2():
    """c for f = x^2 from (1, 1).

    prod_{j>=1} (1 + t^2 / j^4) = (cosh(pi sqrt(2t)) - cos(pi sqrt(2t))) / (2 pi^2 t)
    """
    with mpmath.workdps(30):
        def integrand(t):
            if t == 0:
                return mpmath.mpf(1)
            s = mpmath.pi * mpmath.sqrt(2 * t)
            return 2 * mpmath.pi**2 * t / (mpmath.cosh(s) - mpmath.cos(s))

        val = 2 / mpmath.pi * mpmath.quad(integrand, [0, 1, 10, 100, mpmath.inf])
        return float(val)


C_POWER2 = 0.7622356679533348  # c_closed_form_p2(), frozen


def exact_chain_law(p, start, m):
    """Law of the two-bin state after m steps, by brute force over all 2^m paths."""
    law = {}
    for mask in range(1 << m):
        a, b = start
        prob = Fraction(1)
        for s in range(m):
            fa, fb = Fraction(a) ** p, Fraction(b) ** p
            if mask >> s & 1:
                prob *= fa / (fa + fb)
                a += 1
            else:
                prob *= fb / (fa + fb)
                b += 1
        law[(a, b)] = law.get((a, b), 0) + prob
    return law


def direct_sum(p, n, m):
    """sum_{j=n}^{m-1} j^-p with exact rationals for integer p."""
    return float(sum(Fraction(1, j**p) for j in range(n, m)))


def hurwitz_tail(p, n):
    """S_1(n) = zeta(p, n) for f = x^p."""
    return float(mpmath.zeta(p, n))


# Random123 known-answer vectors for Philox4x32-10: (counter, key, output)
PHILOX_KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    (
        (0xFFFFFFFF,) * 4,
        (0xFFFFFFFF,) * 2,
        (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD),
    ),
    (
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
        (0xA4093822, 0x299F31D0),
        (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
    ),
]


def binomial_se(p, n):
    return math.sqrt(p * (1 - p) / n)

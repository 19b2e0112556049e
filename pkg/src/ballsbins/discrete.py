"""The discrete-time chain: a new ball joins bin i with probability
f(I_i) / sum_j f(I_j).

Bins are 0-indexed throughout the package.
"""

import csv
from dataclasses import dataclass
from fractions import Fraction
import io
import math

import mpmath
import numba as nb
import numpy as np

from .errors import DomainError
from .streams import CHANNEL_DISCRETE, RandomStream, fill_uniforms, split_seed


def as_fraction(value):
    """Exact rational for a user-facing number; floats are read as their shortest repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(repr(float(value)))


def ceil_fraction(alpha, n):
    """ceil(alpha * n) computed exactly."""
    return math.ceil(as_fraction(alpha) * n)


@dataclass(frozen=True)
class UrnState:
    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) < 2:
            raise DomainError("an urn needs at least two bins")
        if min(counts) < 1:
            raise DomainError(f"every bin must hold at least one ball, got {counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self):
        return sum(self.counts)

    @property
    def bins(self):
        return len(self.counts)

    @classmethod
    def of(cls, *counts):
        return cls(tuple(counts))

    @classmethod
    def from_fraction(cls, n, alpha):
        """The two-bin state (ceil(alpha n), n - ceil(alpha n))."""
        k = ceil_fraction(alpha, n)
        return cls((k, n - k))

    def added(self, i):
        c = list(self.counts)
        c[i] += 1
        return UrnState(tuple(c))

    def permuted(self, perm):
        return UrnState(tuple(self.counts[k] for k in perm))


def step_probability(fb, state, i):
    """Probability that the next ball goes to bin ``i``."""
    if not 0 <= i < state.bins:
        raise DomainError(f"bin index {i} out of range for {state.bins} bins")
    lf = fb.log_f(np.asarray(state.counts, dtype=float))
    w = np.exp(lf - lf.max())
    return float(w[i] / w.sum())


def _log_f_table(fb, top):
    table = np.full(top + 1, -np.inf)
    table[1:] = fb.log_f(np.arange(1, top + 1, dtype=float))
    return table


@nb.njit(cache=True)
def _choose(c, lf, w, u):
    b = c.shape[0]
    mx = -np.inf
    for i in range(b):
        if lf[c[i]] > mx:
            mx = lf[c[i]]
    tot = 0.0
    for i in range(b):
        w[i] = np.exp(lf[c[i]] - mx)
        tot += w[i]
    thr = u * tot
    acc = 0.0
    for i in range(b):
        acc += w[i]
        if thr < acc:
            return i
    return b - 1


@nb.njit(cache=True)
def _walk(counts0, lf, u, out):
    c = counts0.copy()
    w = np.empty(c.shape[0])
    out[0] = c
    for s in range(u.shape[0]):
        c[_choose(c, lf, w, u[s])] += 1
        out[s + 1] = c


@nb.njit(cache=True)
def _terminal(counts0, lf, m, k0, k1, rep_start, reps, channel):
    b = counts0.shape[0]
    out = np.empty((reps, b), dtype=np.int64)
    u = np.empty(m)
    w = np.empty(b)
    for r in range(reps):
        fill_uniforms(u, k0, k1, rep_start + r, channel, 0)
        c = counts0.copy()
        for s in range(m):
            c[_choose(c, lf, w, u[s])] += 1
        out[r] = c
    return out


def simulate_steps(fb, state, m, rng):
    """Run ``m`` steps; returns an (m + 1, B) integer array of states.

    The step choices consume ``rng`` positions 0..m-1 of its discrete channel,
    so the trajectory is a function of the stream's seed and replicate.
    """
    if m < 0:
        raise DomainError("number of steps must be nonnegative")
    counts = np.asarray(state.counts, dtype=np.int64)
    lf = _log_f_table(fb, int(counts.max()) + m)
    out = np.empty((m + 1, counts.size), dtype=np.int64)
    _walk(counts, lf, rng.uniforms(CHANNEL_DISCRETE, 0, m), out)
    return out


def simulate_terminal_counts(fb, state, m, seed, replicates, rep_start=0):
    """Terminal counts after ``m`` steps for replicates rep_start .. rep_start+replicates-1.

    Replicate r reproduces ``simulate_steps(..., RandomStream(seed, r))[-1]``.
    """
    counts = np.asarray(state.counts, dtype=np.int64)
    lf = _log_f_table(fb, int(counts.max()) + m)
    k0, k1 = split_seed(seed)
    return _terminal(counts, lf, m, k0, k1, rep_start, replicates, CHANNEL_DISCRETE)


def trajectory_csv(trajectory, out=None):
    """Write ``step, bin_1, ..., bin_B`` rows; returns the text when ``out`` is None."""
    buf = io.StringIO() if out is None else out
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step"] + [f"bin_{i + 1}" for i in range(trajectory.shape[1])])
    for s, row in enumerate(trajectory):
        writer.writerow([s, *(int(v) for v in row)])
    return buf.getvalue() if out is None else None


# -- exact oracle -----------------------------------------------------------

MAX_HORIZON = {2: 12, 3: 7}


@dataclass
class PathDistribution:
    horizon: int
    entries: dict
    exact: bool

    def total(self):
        return sum(self.entries.values())

    def probability(self, counts):
        return self.entries.get(tuple(counts), 0)

    def as_floats(self):
        return {k: float(v) for k, v in self.entries.items()}


def _exact_weights(fb, top):
    """f(1..top) as Fractions when they are all integers, else as mpf."""
    vals = fb.f(np.arange(1, top + 1, dtype=float))
    if np.all(np.isfinite(vals)) and np.all(vals == np.round(vals)) and vals.max() < 2**53:
        return {k + 1: Fraction(int(v)) for k, v in enumerate(vals)}, True
    with mpmath.workdps(40):
        return {k: mpmath.exp(mpmath.mpf(float(fb.log_f(k)))) for k in range(1, top + 1)}, False


def enumerate_paths(fb, state, m):
    """Exact law of the state after ``m`` steps, merging paths by state."""
    b = state.bins
    limit = MAX_HORIZON.get(b, 0)
    if b > 3:
        limit = int(math.log(3**7) / math.log(b))
    if not 0 <= m <= limit:
        raise DomainError(f"enumeration horizon {m} too large for {b} bins (max {limit})")
    weights, exact = _exact_weights(fb, max(state.counts) + m)
    with mpmath.workdps(40):
        one = Fraction(1) if exact else mpmath.mpf(1)
        layer = {state.counts: one}
        for _ in range(m):
            nxt = {}
            for counts, prob in layer.items():
                ws = [weights[c] for c in counts]
                tot = sum(ws)
                for i, w in enumerate(ws):
                    c = list(counts)
                    c[i] += 1
                    c = tuple(c)
                    nxt[c] = nxt.get(c, 0) + prob * w / tot
            layer = nxt
    return PathDistribution(horizon=m, entries=layer, exact=exact)


def total_variation(p, q):
    """Total-variation distance between two mappings state -> probability."""
    keys = set(p) | set(q)
    return 0.5 * sum(abs(float(p.get(k, 0)) - float(q.get(k, 0))) for k in keys)


def empirical_law(terminal_counts):
    """Mapping state -> frequency from an (R, B) array of terminal states."""
    uniq, freq = np.unique(terminal_counts, axis=0, return_counts=True)
    n = terminal_counts.shape[0]
    return {tuple(int(v) for v in row): c / n for row, c in zip(uniq, freq)}


__all__ = [
    "PathDistribution",
    "RandomStream",
    "UrnState",
    "as_fraction",
    "ceil_fraction",
    "empirical_law",
    "enumerate_paths",
    "simulate_steps",
    "simulate_terminal_counts",
    "step_probability",
    "total_variation",
    "trajectory_csv",
]

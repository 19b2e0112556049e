"""Exponential embedding of the two-bin process.

Bin i owns independent clocks X(i, j) ~ exp(f(j)); bin i holds k balls from
time A_i(k) = sum_{j=start_i}^{k-1} X(i, j) on, and explodes at
F_i = lim A_i(k).  Merging the arrival times of the bins reproduces the
discrete chain, and the bin with the smaller explosion time wins.

Tail sums beyond a horizon H are never sampled.  Instead the explosion time
is certified to lie in

    A_i(H) + S_1(H) +- t sqrt(S_2(H)),

which fails with probability at most e^2 e^-t per side (Chernoff bound with
s = 1 / sqrt(S_2(H)), valid once 1 / sqrt(S_2(H)) <= f(H) / 2).
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numba as nb
import numpy as np

from .discrete import UrnState, as_fraction
from .errors import DomainError
from .feedback import sum_table
from .streams import exponential_block, fill_exponentials, split_seed

CHERNOFF_CONSTANT = math.e**2
DEFAULT_DELTA = 1e-9
DEFAULT_CAP = 10**6
_MIN_HORIZON = 32


class RaceTables:
    """Rates and tail sums shared by every race for one (f, cap)."""

    def __init__(self, fb, cap):
        if cap < 2 * _MIN_HORIZON:
            raise DomainError(f"cap must be at least {2 * _MIN_HORIZON}")
        self.fb = fb
        self.cap = int(cap)
        j = np.arange(self.cap + 2, dtype=float)
        j[0] = 1.0
        inv = fb.inverse_power(j)
        inv[0] = 0.0
        self.inv_rate = inv
        self.s1 = sum_table(fb, 1.0, self.cap + 1).values
        self.s2 = sum_table(fb, 2.0, self.cap + 1).values
        self.sqrt_s2 = np.sqrt(self.s2)
        self.h0 = self._first_valid_horizon()
        self.rounds = int(math.floor(math.log2(self.cap / self.h0))) + 1
        for arr in (self.inv_rate, self.sqrt_s2):
            arr.setflags(write=False)

    def _first_valid_horizon(self):
        powers = []
        h = _MIN_HORIZON
        while h <= self.cap:
            powers.append(h)
            h *= 2
        ok = [self.s2[h] * float(self.fb.f(h)) ** 2 >= 4.0 for h in powers]
        for i, h in enumerate(powers):
            if all(ok[i:]):
                return h
        raise DomainError("Chernoff step s = 1/sqrt(S_2) never admissible below the cap")

    def deviation_multiplier(self, delta):
        """t with 4 * rounds * e^2 * e^-t = delta (two bins, two sides, every round)."""
        if not 0 < delta < 1:
            raise DomainError("delta must lie in (0, 1)")
        return math.log(4.0 * self.rounds * CHERNOFF_CONSTANT / delta)


@lru_cache(maxsize=16)
def race_tables(fb, cap=DEFAULT_CAP):
    return RaceTables(fb, cap)


# -- kernels ----------------------------------------------------------------


@nb.njit(cache=True)
def _extend(arr, filled, new_len, inv_rate, k0, k1, rep, channel, start):
    """arr[i] = A(start + i); fill entries filled .. new_len - 1."""
    if new_len <= filled:
        return arr
    if arr.shape[0] < new_len:
        grown = np.empty(max(new_len, 2 * arr.shape[0]))
        grown[:filled] = arr[:filled]
        arr = grown
    buf = np.empty(new_len - filled)
    fill_exponentials(buf, inv_rate, k0, k1, rep, channel, start + filled - 1)
    acc = arr[filled - 1]
    for i in range(new_len - filled):
        acc += buf[i]
        arr[filled + i] = acc
    return arr


@nb.njit(cache=True)
def _arrival(arr, start, k):
    if k <= start:
        return 0.0
    return arr[k - start]


@nb.njit(cache=True)
def _race(inv_rate, s1, sqrt_s2, x, y, t_dev, h0, cap, k0, k1, rep, ch_a, ch_b, threshold):
    """One race; returns (winner, losing, lower_bound, horizon, censored).

    winner is -1 while undecided and losing is -1 while unresolved.
    """
    h = h0
    while h <= max(x, y):
        h *= 2
    a1 = np.zeros(h - x + 1)
    a2 = np.zeros(h - y + 1)
    f1 = 1
    f2 = 1
    while True:
        a1 = _extend(a1, f1, h - x + 1, inv_rate, k0, k1, rep, ch_a, x)
        a2 = _extend(a2, f2, h - y + 1, inv_rate, k0, k1, rep, ch_b, y)
        f1 = h - x + 1
        f2 = h - y + 1
        end1 = a1[f1 - 1]
        end2 = a2[f2 - 1]
        mean = s1[h]
        dev = t_dev * sqrt_s2[h]
        lo_off = max(mean - dev, 0.0)
        hi_off = mean + dev
        winner = -1
        if end1 + hi_off < end2:
            winner = 0
            klo = np.searchsorted(a2[:f2], end1 + lo_off) - 1
            khi = np.searchsorted(a2[:f2], end1 + hi_off) - 1
            if klo == khi:
                return 0, klo, klo, h, False
            bound = klo
        elif end2 + hi_off < end1:
            winner = 1
            klo = np.searchsorted(a1[:f1], end2 + lo_off) - 1
            khi = np.searchsorted(a1[:f1], end2 + hi_off) - 1
            if klo == khi:
                return 1, klo, klo, h, False
            bound = klo
        else:
            t = min(end1, end2)
            c1 = np.searchsorted(a1[:f1], t, side="right") - 1
            c2 = np.searchsorted(a2[:f2], t, side="right") - 1
            bound = min(c1, c2)
        if threshold >= 0 and bound > threshold:
            return winner, -1, bound, h, False
        if 2 * h > cap:
            return winner, -1, bound, h, True
        h *= 2


@nb.njit(cache=True)
def _race_batch(inv_rate, s1, sqrt_s2, x, y, t_dev, h0, cap, k0, k1, rep_start, reps, ch_a, ch_b, threshold):
    winner = np.empty(reps, dtype=np.int64)
    losing = np.empty(reps, dtype=np.int64)
    bound = np.empty(reps, dtype=np.int64)
    horizon = np.empty(reps, dtype=np.int64)
    censored = np.empty(reps, dtype=np.bool_)
    for r in range(reps):
        w, l, b, h, c = _race(inv_rate, s1, sqrt_s2, x, y, t_dev, h0, cap, k0, k1, rep_start + r, ch_a, ch_b, threshold)
        winner[r] = w
        losing[r] = l
        bound[r] = b
        horizon[r] = h
        censored[r] = c
    return winner, losing, bound, horizon, censored


@nb.njit(cache=True)
def _imbalance(inv_rate, s1, sqrt_s2, x, y, bnum, bden, t_dev, h0, cap, k0, k1, rep, ch_a, ch_b):
    """Does bin 1 ever hold >= ceil(beta N) balls at some total N >= x + y?

    Returns (hit, censored, horizon).  A miss is declared once bin 2's
    explosion is certified and bin 1's certified final count can no longer
    reach the required share at any total not yet inspected.
    """
    n_tot = x + y
    if x * bden >= bnum * n_tot:
        return True, False, 0
    h = h0
    while h <= max(x, y):
        h *= 2
    a1 = np.zeros(h - x + 1)
    a2 = np.zeros(h - y + 1)
    f1 = 1
    f2 = 1
    i1 = 0
    i2 = 0
    while True:
        a1 = _extend(a1, f1, h - x + 1, inv_rate, k0, k1, rep, ch_a, x)
        a2 = _extend(a2, f2, h - y + 1, inv_rate, k0, k1, rep, ch_b, y)
        f1 = h - x + 1
        f2 = h - y + 1
        while i1 < f1 - 1 and i2 < f2 - 1:
            if a1[i1 + 1] < a2[i2 + 1]:
                i1 += 1
            else:
                i2 += 1
            n_tot += 1
            if (x + i1) * bden >= bnum * n_tot:
                return True, False, h
        end1 = a1[f1 - 1]
        end2 = a2[f2 - 1]
        hi2 = end2 + s1[h] + t_dev * sqrt_s2[h]
        if hi2 < end1:
            kmax = x + np.searchsorted(a1[:f1], hi2, side="right") - 1
            if bnum * (n_tot + 1) > bden * kmax:
                return False, False, h
        if 2 * h > cap:
            return False, True, h
        h *= 2


@nb.njit(cache=True)
def _imbalance_batch(inv_rate, s1, sqrt_s2, x, y, bnum, bden, t_dev, h0, cap, k0, k1, rep_start, reps, ch_a, ch_b):
    hit = np.empty(reps, dtype=np.bool_)
    censored = np.empty(reps, dtype=np.bool_)
    for r in range(reps):
        a, c, _ = _imbalance(inv_rate, s1, sqrt_s2, x, y, bnum, bden, t_dev, h0, cap, k0, k1, rep_start + r, ch_a, ch_b)
        hit[r] = a
        censored[r] = c
    return hit, censored


@nb.njit(cache=True)
def _window_batch(inv_rate, x, y, ns, los, his, k0, k1, rep_start, reps, ch_a, ch_b):
    """out[r, w] = lo_w <= I_1 <= hi_w when the total reaches n_w.

    Uses  I_1 >= k  at total n  <=>  A_1(k) < A_2(n - k + 1).
    """
    nw = ns.shape[0]
    top1 = x
    top2 = y
    for w in range(nw):
        top1 = max(top1, los[w], his[w] + 1)
        top2 = max(top2, ns[w] - los[w] + 1, ns[w] - his[w])
    out = np.empty((reps, nw), dtype=np.bool_)
    a1 = np.zeros(top1 - x + 1)
    a2 = np.zeros(top2 - y + 1)
    for r in range(reps):
        a1 = _extend(a1, 1, top1 - x + 1, inv_rate, k0, k1, rep_start + r, ch_a, x)
        a2 = _extend(a2, 1, top2 - y + 1, inv_rate, k0, k1, rep_start + r, ch_b, y)
        for w in range(nw):
            n = ns[w]
            ge_lo = _arrival(a1, x, los[w]) < _arrival(a2, y, n - los[w] + 1)
            le_hi = _arrival(a2, y, n - his[w]) < _arrival(a1, x, his[w] + 1)
            out[r, w] = ge_lo and le_hi
    return out


@nb.njit(cache=True)
def _centered_tail_sums(inv_rate, k0, k1, rep_start, reps, channel, j0, j1):
    out = np.empty(reps)
    buf = np.empty(j1 - j0)
    mean = 0.0
    for j in range(j0, j1):
        mean += inv_rate[j]
    for r in range(reps):
        fill_exponentials(buf, inv_rate, k0, k1, rep_start + r, channel, j0)
        out[r] = buf.sum() - mean
    return out


# -- clocks -----------------------------------------------------------------


@dataclass(frozen=True)
class BinClock:
    """Arrival times of one bin: ``partial_sums[i] = A(start_index + i)``."""

    bin: int
    start_index: int
    partial_sums: np.ndarray
    horizon: int
    tail_mean: float
    seed: int
    replicate: int

    def arrival(self, k):
        """Time at which the bin holds k balls (0 if it starts with at least k)."""
        if k <= self.start_index:
            return 0.0
        if k > self.horizon:
            raise DomainError(f"arrival {k} beyond the sampled horizon {self.horizon}")
        return float(self.partial_sums[k - self.start_index])

    def count_at(self, t):
        """N(t): balls in the bin at time t, as long as t is inside the sampled range."""
        i = int(np.searchsorted(self.partial_sums, t, side="right")) - 1
        return self.start_index + i

    def increments(self):
        return np.diff(self.partial_sums)

    def extended(self, fb, up_to):
        if up_to <= self.horizon:
            return self
        return sample_clock(fb, self.start_index, up_to, _StreamRef(self.seed, self.replicate), bin=self.bin)


class _StreamRef:
    def __init__(self, seed, replicate):
        self.seed = seed
        self.replicate = replicate


def _inv_rates(fb, top):
    j = np.arange(top + 1, dtype=float)
    j[0] = 1.0
    inv = fb.inverse_power(j)
    inv[0] = 0.0
    return inv


def sample_clock(fb, start, up_to, rng, bin=0):
    """Clock of one bin from ``start`` balls up to ``up_to`` balls.

    Increment X(bin, j) is read from position j of channel ``bin`` of the
    stream, so extending the horizon never changes earlier increments.
    """
    if up_to < start:
        raise DomainError("up_to must be >= start")
    k0, k1 = split_seed(rng.seed)
    arr = np.zeros(up_to - start + 1)
    arr = _extend(arr, 1, up_to - start + 1, _inv_rates(fb, up_to), k0, k1, rng.replicate, bin, start)
    tail = float(sum_table(fb, 1.0, max(up_to, 1)).values[up_to]) if up_to >= 1 else math.nan
    return BinClock(bin, start, arr[: up_to - start + 1], up_to, tail, rng.seed, rng.replicate)


def merged_trajectory(clock1, clock2, m):
    """First m states of the chain induced by ordering the two clocks' arrivals."""
    times = np.concatenate((clock1.partial_sums[1:], clock2.partial_sums[1:]))
    labels = np.concatenate((np.zeros(clock1.partial_sums.size - 1, dtype=np.int64),
                             np.ones(clock2.partial_sums.size - 1, dtype=np.int64)))
    order = np.argsort(times, kind="stable")[:m]
    if order.size < m:
        raise DomainError("clocks too short for the requested number of steps")
    steps = np.zeros((m + 1, 2), dtype=np.int64)
    steps[0] = (clock1.start_index, clock2.start_index)
    steps[1:, 0] = clock1.start_index + np.cumsum(labels[order] == 0)
    steps[1:, 1] = clock2.start_index + np.cumsum(labels[order] == 1)
    return steps


def embedded_discrete_steps(fb, state, m, rng):
    """(m + 1, 2) trajectory obtained from the embedding; same law as the chain."""
    _require_two_bins(state)
    if m < 0:
        raise DomainError("number of steps must be nonnegative")
    x, y = state.counts
    c1 = sample_clock(fb, x, x + m, rng, bin=0)
    c2 = sample_clock(fb, y, y + m, rng, bin=1)
    return merged_trajectory(c1, c2, m)


def embedded_terminal_counts(fb, state, m, seed, replicates, rep_start=0):
    """Terminal states after m embedded steps, vectorized over replicates."""
    _require_two_bins(state)
    x, y = state.counts
    k0, k1 = split_seed(seed)
    inv = _inv_rates(fb, max(x, y) + m)
    t1 = np.cumsum(exponential_block(inv, k0, k1, rep_start, replicates, 0, x, x + m), axis=1)
    t2 = np.cumsum(exponential_block(inv, k0, k1, rep_start, replicates, 1, y, y + m), axis=1)
    times = np.concatenate((t1, t2), axis=1)
    first = np.argsort(times, axis=1, kind="stable")[:, :m]
    to_bin1 = np.sum(first < m, axis=1)
    return np.stack((x + to_bin1, y + m - to_bin1), axis=1)


def _require_two_bins(state):
    if state.bins != 2:
        raise DomainError("the embedding events are implemented for two bins")


# -- races --------------------------------------------------------------------


@dataclass(frozen=True)
class RaceOutcome:
    """Result of one certified race.

    ``winner`` is 0, 1 or None (undecided); ``losing_number`` is the number of
    balls the loser received, or None when it was not resolved (censored, or
    the race stopped once ``losing_lower_bound`` passed the caller's
    threshold).  Certificates fail with probability at most
    ``decision_confidence``.
    """

    winner: int
    losing_number: int
    losing_lower_bound: int
    decision_confidence: float
    horizon_used: int
    censored: bool


def race_to_monopoly(fb, state, delta=DEFAULT_DELTA, cap=DEFAULT_CAP, rng=None, resolve_above=None, swap=False):
    """Certify the monopolist and the losing number L of one replicate.

    Horizons double until one bin's certified explosion window lies before
    the other's last sampled arrival and contains none of the loser's
    arrivals.  ``swap`` reads bin 0's clock from channel 1 and vice versa.
    """
    _require_two_bins(state)
    if rng is None:
        raise DomainError("a RandomStream is required")
    tables = race_tables(fb, cap)
    t_dev = tables.deviation_multiplier(delta)
    x, y = state.counts
    k0, k1 = split_seed(rng.seed)
    ch_a, ch_b = (1, 0) if swap else (0, 1)
    threshold = -1 if resolve_above is None else int(resolve_above)
    w, l, b, h, c = _race(tables.inv_rate, tables.s1, tables.sqrt_s2, x, y, t_dev, tables.h0, tables.cap,
                          k0, k1, rng.replicate, ch_a, ch_b, threshold)
    return RaceOutcome(
        winner=None if w < 0 else int(w),
        losing_number=None if l < 0 else int(l),
        losing_lower_bound=int(b),
        decision_confidence=delta,
        horizon_used=int(h),
        censored=bool(c),
    )


def race_batch(fb, state, seed, rep_start, reps, delta=DEFAULT_DELTA, cap=DEFAULT_CAP, resolve_above=None, swap=False):
    """Vectorized :func:`race_to_monopoly` over replicates; returns a dict of arrays."""
    _require_two_bins(state)
    tables = race_tables(fb, cap)
    t_dev = tables.deviation_multiplier(delta)
    x, y = state.counts
    k0, k1 = split_seed(seed)
    ch_a, ch_b = (1, 0) if swap else (0, 1)
    threshold = -1 if resolve_above is None else int(resolve_above)
    w, l, b, h, c = _race_batch(tables.inv_rate, tables.s1, tables.sqrt_s2, x, y, t_dev, tables.h0, tables.cap,
                                k0, k1, rep_start, reps, ch_a, ch_b, threshold)
    return {"winner": w, "losing": l, "lower_bound": b, "horizon": h, "censored": c}


def imbalance_batch(fb, state, beta, seed, rep_start, reps, delta=DEFAULT_DELTA, cap=DEFAULT_CAP):
    """Monitor replicates for  exists N >= n : bin 1 holds >= ceil(beta N) at total N."""
    _require_two_bins(state)
    b = as_fraction(beta)
    if not 0 < b < 1:
        raise DomainError("beta must lie in (0, 1)")
    tables = race_tables(fb, cap)
    t_dev = tables.deviation_multiplier(delta)
    x, y = state.counts
    k0, k1 = split_seed(seed)
    return _imbalance_batch(tables.inv_rate, tables.s1, tables.sqrt_s2, x, y, b.numerator, b.denominator,
                            t_dev, tables.h0, tables.cap, k0, k1, rep_start, reps, 0, 1)


# -- events -----------------------------------------------------------------


def window_batch(fb, state, windows, seed, rep_start, reps):
    """Boolean (reps, len(windows)) matrix; window (n, lo, hi) means lo <= I_1 <= hi at total n."""
    _require_two_bins(state)
    x, y = state.counts
    ns = np.array([w[0] for w in windows], dtype=np.int64)
    los = np.array([w[1] for w in windows], dtype=np.int64)
    his = np.array([w[2] for w in windows], dtype=np.int64)
    if np.any(ns < x + y):
        raise DomainError("window totals must be at least the initial total")
    top = int(max(ns.max() + 2, x + 1, y + 1))
    k0, k1 = split_seed(seed)
    return _window_batch(_inv_rates(fb, top), x, y, ns, los, his, k0, k1, rep_start, reps, 0, 1)


def _clock_pair(fb, state, top, rng, clocks):
    if clocks is not None:
        c1, c2 = clocks
        return c1.extended(fb, top), c2.extended(fb, top)
    x, y = state.counts
    return sample_clock(fb, x, max(x, top), rng, bin=0), sample_clock(fb, y, max(y, top), rng, bin=1)


def _holds_at_least(c1, c2, k, n):
    """I_1 >= k at the moment the total reaches n."""
    return c1.arrival(k) < c2.arrival(n - k + 1)


def has_more_than_event(fb, state, beta, N, rng=None, clocks=None):
    """Bin 1 holds at least ceil(beta N) balls when the total reaches N."""
    _require_two_bins(state)
    x, _ = state.counts
    n = state.total
    if N < n:
        raise DomainError("N must be at least the current total")
    if not 0 < as_fraction(beta) < 1:
        raise DomainError("beta must lie in (0, 1)")
    k = math.ceil(as_fraction(beta) * N)
    if N - n < k - x:
        return False
    c1, c2 = _clock_pair(fb, state, N + 1, rng, clocks)
    return _holds_at_least(c1, c2, k, N)


def window_bounds(n, q):
    """Counts of bin 1 allowed by |I_1 - I_2| <= q at total n."""
    return math.ceil((n - q) / 2), (n + q) // 2


def window_event(fb, state, q, n, rng=None, clocks=None):
    """|I_1 - I_2| <= q at the moment the total reaches n."""
    _require_two_bins(state)
    if n < state.total:
        raise DomainError("n must be at least the current total")
    if q >= n:
        return True
    lo, hi = window_bounds(n, q)
    if lo > hi:
        return False
    c1, c2 = _clock_pair(fb, state, n + 1, rng, clocks)
    return _holds_at_least(c1, c2, lo, n) and not _holds_at_least(c1, c2, hi + 1, n)


def loser_has_more_than_event(fb, state, alpha, n, rng=None, clocks=None):
    """Both bins hold at least ceil(alpha n) balls when the total reaches n."""
    _require_two_bins(state)
    k = math.ceil(as_fraction(alpha) * n)
    c1, c2 = _clock_pair(fb, state, n + 1, rng, clocks)
    return _holds_at_least(c1, c2, k, n) and _holds_at_least(c2, c1, k, n)


# -- concentration and clock differences ------------------------------------


def centered_tail_samples(fb, n, samples, seed, truncate_at=None, rep_start=0, channel=0):
    """Samples of sum_{j=n}^{J-1} (X(j) - 1/f(j)) with J = ``truncate_at``.

    The dropped remainder sum_{j>=J} (X(j) - 1/f(j)) has mean zero and
    standard deviation sqrt(S_2(J)).
    """
    truncate_at = 16 * n if truncate_at is None else int(truncate_at)
    k0, k1 = split_seed(seed)
    inv = _inv_rates(fb, truncate_at)
    return _centered_tail_sums(inv, k0, k1, rep_start, samples, channel, n, truncate_at)


def sample_delta(fb, x, y, n, seed, reps, rep_start=0):
    """Samples of Delta_n = A_1(n) - A_2(n) for clocks started at x and y (both <= n)."""
    if not (x <= n and y <= n):
        raise DomainError("Delta_n needs n >= max(x, y)")
    k0, k1 = split_seed(seed)
    inv = _inv_rates(fb, n)
    d1 = exponential_block(inv, k0, k1, rep_start, reps, 0, x, n).sum(axis=1)
    d2 = exponential_block(inv, k0, k1, rep_start, reps, 1, y, n).sum(axis=1)
    return d1 - d2

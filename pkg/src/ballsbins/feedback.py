"""Feedback functions, their characteristic exponents, and the sums

    S_r(n, m) = sum_{j=n}^{m-1} f(j)^{-r},      M_r(n) = int_n^inf f(x)^{-r} dx

that control every tail probability in the two-bin process.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy import integrate

from .errors import DivergenceError, DomainError, ToleranceError

KINDS = ("power", "power_log_exponent", "power_times_log", "custom")

# ln f above this is handled in log space only
LOG_OVERFLOW_GUARD = 600.0

_E_MINUS_1 = math.e - 1.0


@dataclass(frozen=True)
class FeedbackFunction:
    """A positive increasing feedback function f and its exponent h = x (ln f)'.

    Build instances with :meth:`power`, :meth:`power_log_exponent`,
    :meth:`power_times_log` or :meth:`custom`.
    """

    kind: str
    p: float = None
    a: float = None
    custom_f: object = field(default=None, repr=False, compare=True)
    custom_h: object = field(default=None, repr=False, compare=True)
    custom_log_f: object = field(default=None, repr=False, compare=True)
    name: str = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown feedback kind {self.kind!r}")
        if self.kind == "custom":
            if self.custom_f is None and self.custom_log_f is None:
                raise DomainError("custom feedback needs f (or ln f)")
        elif self.p is None:
            raise DomainError(f"{self.kind} needs an exponent p")
        if self.kind == "power_log_exponent" and (self.a is None or self.a <= 0):
            raise DomainError("power_log_exponent needs a > 0")

    @classmethod
    def power(cls, p):
        return cls("power", p=float(p))

    @classmethod
    def power_log_exponent(cls, p, a):
        """f(x) = x^(p ln^a x)."""
        return cls("power_log_exponent", p=float(p), a=float(a))

    @classmethod
    def power_times_log(cls, p):
        """f(x) = x^p ln(x + e - 1)."""
        return cls("power_times_log", p=float(p))

    @classmethod
    def custom(cls, f=None, h=None, log_f=None, name="custom"):
        """User supplied f (or ln f) and h.

        Without ``h`` the exponent falls back to a central difference of
        ln f with step x * 1e-6; :func:`check_validity` flags that.
        """
        return cls("custom", custom_f=f, custom_h=h, custom_log_f=log_f, name=name)

    @property
    def numeric_h(self):
        return self.kind == "custom" and self.custom_h is None

    @property
    def label(self):
        if self.kind == "power":
            return f"power(p={self.p:g})"
        if self.kind == "power_log_exponent":
            return f"power_log_exponent(p={self.p:g},a={self.a:g})"
        if self.kind == "power_times_log":
            return f"power_times_log(p={self.p:g})"
        return self.name or "custom"

    def to_dict(self):
        if self.kind == "custom":
            raise DomainError("custom feedback functions are not serializable")
        d = {"kind": self.kind, "p": self.p}
        if self.a is not None:
            d["a"] = self.a
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "power")
        if kind == "power":
            return cls.power(d["p"])
        if kind == "power_log_exponent":
            return cls.power_log_exponent(d["p"], d["a"])
        if kind == "power_times_log":
            return cls.power_times_log(d["p"])
        raise DomainError(f"cannot build feedback of kind {kind!r} from a mapping")

    # -- evaluation ---------------------------------------------------------

    def log_f(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            return self.p * np.log(x)
        if self.kind == "power_log_exponent":
            return self.p * np.log(x) ** (self.a + 1.0)
        if self.kind == "power_times_log":
            return self.p * np.log(x) + np.log(np.log(x + _E_MINUS_1))
        if self.custom_log_f is not None:
            return np.asarray(_call(self.custom_log_f, x), dtype=float)
        with np.errstate(over="ignore", divide="ignore"):
            return np.log(np.asarray(_call(self.custom_f, x), dtype=float))

    def f(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            return x**self.p
        if self.kind == "power_times_log":
            return x**self.p * np.log(x + _E_MINUS_1)
        if self.kind == "custom" and self.custom_f is not None:
            return np.asarray(_call(self.custom_f, x), dtype=float)
        with np.errstate(over="ignore"):
            return np.exp(self.log_f(x))

    def inverse_power(self, x, r=1.0):
        """f(x)^(-r), computed in log space so it underflows instead of overflowing."""
        return np.exp(-r * self.log_f(x))

    def h(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            return np.full_like(x, self.p)
        if self.kind == "power_log_exponent":
            return self.p * (self.a + 1.0) * np.log(x) ** self.a
        if self.kind == "power_times_log":
            y = x + _E_MINUS_1
            return self.p + x / (y * np.log(y))
        if self.custom_h is not None:
            return np.asarray(_call(self.custom_h, x), dtype=float)
        step = 1e-6
        return (self.log_f(x * (1 + step)) - self.log_f(x * (1 - step))) / (2 * step)

    def exponent_lower_bound(self, x):
        """inf of h over [x, inf), used to bound integral remainders.

        Exact for the built-in families; a grid minimum for custom ones.
        """
        if self.kind in ("power", "power_times_log"):
            return self.p
        if self.kind == "power_log_exponent":
            return float(self.h(max(x, 1.0)))
        grid = max(x, 1.0) * np.logspace(0, 12, 97)
        return float(np.min(self.h(grid)))


def _call(fn, x):
    try:
        return fn(x)
    except (TypeError, ValueError):
        return np.vectorize(fn, otypes=[float])(x)


# -- point evaluations ------------------------------------------------------


def evaluate_f(fb, n):
    """f(n) for real n >= 1; ``inf`` once f(n) no longer fits a double."""
    if n < 1:
        raise DomainError(f"f is defined on [1, inf), got {n}")
    lf = float(fb.log_f(n))
    if lf > LOG_OVERFLOW_GUARD:
        return math.exp(lf) if lf < 709.0 else math.inf
    return float(fb.f(n))


def characteristic_exponent(fb, x):
    if x < 1:
        raise DomainError(f"h is defined on [1, inf), got {x}")
    return float(fb.h(x))


# -- sums and integrals -----------------------------------------------------

_CHUNK = 1 << 20


def _finite_sum(fb, r, n, m):
    total = 0.0
    for lo in range(n, m, _CHUNK):
        j = np.arange(lo, min(lo + _CHUNK, m), dtype=float)
        total += float(np.sum(fb.inverse_power(j, r)))
    return total


def _check_convergent(fb, r, n):
    # convergence is decided by the tail only
    c = fb.exponent_lower_bound(max(float(n), 1e4))
    if r * c <= 1.0:
        raise DivergenceError(
            f"sum of f^-{r:g} diverges for {fb.label}: r*inf(h) = {r * c:g} <= 1"
        )
    return c


def integral_M_with_error(fb, r, n, rel_tol=1e-12):
    """(M_r(n), absolute error bound)."""
    if n < 1:
        raise DomainError(f"M_r(n) needs n >= 1, got {n}")
    n = float(n)
    _check_convergent(fb, r, n)

    def integrand(u):
        x = n * math.exp(u)
        return x * math.exp(-r * float(fb.log_f(x)))

    value = err = rem = 0.0
    lo, hi = 0.0, 16.0
    while True:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            piece, piece_err = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=rel_tol, limit=200)
        value += piece
        err += piece_err
        x_star = n * math.exp(hi)
        c_star = fb.exponent_lower_bound(x_star)
        # f(x) >= f(x*) (x/x*)^c beyond x*
        rem = x_star * math.exp(-r * float(fb.log_f(x_star))) / (r * c_star - 1.0)
        if rem <= rel_tol * value or hi >= 690.0:
            break
        lo, hi = hi, min(2.0 * hi, 690.0)
    if rem > 1e3 * rel_tol * (value + rem):
        raise ToleranceError(f"M_{r:g}({n:g}) remainder not negligible", best_bound=rem + err)
    return value + rem, err + rem


def integral_M(fb, r, n):
    """M_r(n) = int_n^inf f(x)^(-r) dx by quadrature in ln x plus a tail bound."""
    return integral_M_with_error(fb, r, n)[0]


def _infinite_sum_with_error(fb, r, n, eps):
    _check_convergent(fb, r, n)
    head = 0.0
    start = n
    k = 4096
    while True:
        stop = n + k
        head += _finite_sum(fb, r, start, stop)
        start = stop
        # for convex decreasing g = f^-r:
        #   M(J) + g(J)/2 <= sum_{j>=J} g(j) <= M(J - 1/2)
        g_j = float(fb.inverse_power(stop, r))
        m_j, m_err = integral_M_with_error(fb, r, stop)
        half, _ = integrate.quad(lambda x: float(fb.inverse_power(x, r)), stop - 0.5, stop, epsrel=1e-13)
        lo = m_j + 0.5 * g_j
        hi = m_j + half
        total = head + 0.5 * (lo + hi)
        err = 0.5 * abs(hi - lo) + m_err
        if err <= eps * total or k >= 1 << 24:
            return total, err
        k *= 4


def partial_sum_S(fb, r, n, m=math.inf, eps=1e-12):
    """S_r(n, m) = sum_{j=n}^{m-1} f(j)^(-r); ``m = inf`` gives S_r(n)."""
    if n < 1:
        raise DomainError(f"S_r(n, m) needs n >= 1, got {n}")
    if m < n:
        raise DomainError(f"S_r(n, m) needs n <= m, got n={n}, m={m}")
    if r < 1 and m == math.inf:
        _check_convergent(fb, r, n)
    n = int(n)
    if m == math.inf:
        return _infinite_sum_with_error(fb, r, n, eps)[0]
    return _finite_sum(fb, r, n, int(m))


def window_sum(fb, r, lo, hi):
    """S_r(lo, hi), zero when the window is empty (lo >= hi)."""
    if hi <= lo:
        return 0.0
    return partial_sum_S(fb, r, lo, hi)


def asymptotic_S(fb, r, n):
    """Leading-order form n / ((r h(n) - 1) f(n)^r) of S_r(n) and M_r(n)."""
    rh = r * characteristic_exponent(fb, n)
    if rh <= 1.0:
        raise DomainError(f"r*h(n) = {rh:g} <= 1; the asymptotic form does not apply")
    return n * float(fb.inverse_power(n, r)) / (rh - 1.0)


class SumTable:
    """S_r(n) for every integer 1 <= n <= n_max + 1, built once.

    ``values[n]`` is S_r(n); finite windows are summed directly from the
    stored terms so that S(n, m) + S(m, k) = S(n, k) up to rounding.
    """

    def __init__(self, fb, r, n_max, tail_truncation_epsilon=1e-12):
        self.fb = fb
        self.r = float(r)
        self.n_max = int(n_max)
        self.tail_truncation_epsilon = tail_truncation_epsilon
        j = np.arange(1, self.n_max + 1, dtype=float)
        self.terms = np.concatenate(([0.0], fb.inverse_power(j, self.r)))
        tail, self.tail_error = _infinite_sum_with_error(fb, self.r, self.n_max + 1, tail_truncation_epsilon)
        values = np.empty(self.n_max + 2)
        values[self.n_max + 1] = tail
        values[1 : self.n_max + 1] = tail + np.cumsum(self.terms[:0:-1])[::-1]
        values[0] = np.nan
        self.values = values
        self.values.setflags(write=False)
        self.terms.setflags(write=False)

    def __getitem__(self, n):
        return self.values[n]

    def partial(self, n, m=math.inf):
        if m == math.inf:
            return float(self.values[n])
        if m < n:
            raise DomainError(f"S_r(n, m) needs n <= m, got n={n}, m={m}")
        if m > self.n_max + 1:
            return partial_sum_S(self.fb, self.r, n, m)
        return float(np.sum(self.terms[n:m]))


@lru_cache(maxsize=64)
def sum_table(fb, r, n_max):
    """Shared, read-only :class:`SumTable`; concurrent callers get equal tables."""
    return SumTable(fb, r, n_max)


# -- validity ---------------------------------------------------------------


@dataclass
class ValidityReport:
    feedback: str
    grid_max: int
    min_h_tail: float
    growth_condition: bool
    h_tail_ratio_decreasing: bool
    empirical_C: float
    slow_variation_condition: bool
    monopoly_condition: bool
    S1_at_1: float
    normalized: bool
    numeric_h: bool
    warnings: list = field(default_factory=list)

    @property
    def passed(self):
        return (
            self.growth_condition
            and self.h_tail_ratio_decreasing
            and self.slow_variation_condition
            and self.monopoly_condition
        )

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["passed"] = self.passed
        return d


def check_validity(fb, grid_max=10**6, tolerance_c=10.0):
    """Grid-sampled check of the three validity conditions and of S_1(1) < inf.

    This is a heuristic: the conditions are asymptotic and a finite grid can
    neither prove nor refute them. The report never blocks anything.
    """
    if grid_max < 100:
        raise DomainError("grid_max must be at least 100")
    notes = ["heuristic grid check, not a proof"]
    grid = np.geomspace(1.0, grid_max, 241)
    tail = grid[grid >= math.sqrt(grid_max)]
    with np.errstate(all="ignore"):
        h_tail = fb.h(tail)
    min_h = float(np.min(h_tail))
    growth = bool(min_h > 1.0)

    ratio = tail**-0.25 * h_tail
    decreasing = bool(np.all(np.diff(ratio) <= 1e-12 * np.abs(ratio[:-1])) and ratio[-1] < ratio[0])

    c_emp = 0.0
    for eps in (0.1, 0.25, 0.5):
        for x in tail:
            t = np.geomspace(x, x ** (1 + eps), 33)
            with np.errstate(all="ignore"):
                dev = np.max(np.abs(fb.h(t) / fb.h(x) - 1.0)) / eps
            c_emp = max(c_emp, float(dev) if np.isfinite(dev) else math.inf)
    slow = bool(c_emp <= tolerance_c)

    s1 = math.inf
    monopoly = False
    if growth:
        try:
            s1 = partial_sum_S(fb, 1, 1, eps=1e-10)
            monopoly = math.isfinite(s1)
        except (DivergenceError, ToleranceError) as exc:
            notes.append(f"S_1(1): {exc}")
    else:
        notes.append("min h <= 1 on the tail grid; S_1(1) treated as divergent")

    with np.errstate(all="ignore"):
        f1 = float(fb.f(1.0))
    normalized = bool(abs(f1 - 1.0) <= 1e-12)
    if not normalized:
        notes.append(f"f(1) = {f1:g}, not normalized to 1")
    if fb.numeric_h:
        notes.append("h obtained by finite differences of ln f (step x*1e-6)")

    return ValidityReport(
        feedback=fb.label,
        grid_max=int(grid_max),
        min_h_tail=min_h,
        growth_condition=growth,
        h_tail_ratio_decreasing=decreasing,
        empirical_C=c_emp,
        slow_variation_condition=slow,
        monopoly_condition=monopoly,
        S1_at_1=s1,
        normalized=normalized,
        numeric_h=fb.numeric_h,
        warnings=notes,
    )

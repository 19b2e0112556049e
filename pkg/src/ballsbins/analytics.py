"""Limiting constants and leading-order predictions.

With Delta_n = A_1(n) - A_2(n) the difference of the two clocks' partial
sums, its characteristic function is

    psi_n(t) = prod_{l=y}^{x-1} (1 + i t / f(l))^-1 * prod_{j=x}^{n-1} (1 + t^2 / f(j)^2)^-1

and the constant in every tail law is c = (1/pi) int psi_inf(t) dt, the
limit of Pr[|Delta_inf| <= eps] / eps (twice the density of Delta_inf at 0).  Integrals are computed on [0, T] (using
psi(-t) = conj psi(t)) with two independent rules; the reported error adds
the disagreement of the rules, a closed-form bound for |t| > T and, for
n = inf, a bound for cutting the product at J.
"""

from dataclasses import asdict, dataclass
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy import integrate

from .errors import DomainError, ToleranceError
from .feedback import asymptotic_S, partial_sum_S, window_sum

_GL_ORDER = 16
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_GL_ORDER)
WINDOW_GAMMA = 0.1


def _ordered(x, y):
    """Return (x, y, flipped) with x >= y; flipping conjugates psi."""
    if x < 1 or y < 1:
        raise DomainError("initial counts must be positive")
    if x >= y:
        return int(x), int(y), False
    return int(y), int(x), True


class _Product:
    """log psi_n for fixed (f, x, y, n); n = None means cut at J with the
    exp(-t^2 S_2(J)) tail correction."""

    def __init__(self, fb, x, y, n, J=None):
        self.fb = fb
        self.x, self.y = x, y
        top = n if n is not None else J
        self.n = n
        self.J = J
        self.inv_c = fb.inverse_power(np.arange(y, x, dtype=float)) if x > y else np.empty(0)
        self.inv_r = fb.inverse_power(np.arange(x, top, dtype=float)) if top > x else np.empty(0)
        if n is None:
            self.s2 = partial_sum_S(fb, 2.0, J)
            self.s4 = partial_sum_S(fb, 4.0, J)

    def log_parts(self, t):
        """(log |psi|, arg psi) on an array of t >= 0."""
        t = np.asarray(t, dtype=float)
        mod = np.zeros_like(t)
        arg = np.zeros_like(t)
        for lo in range(0, self.inv_r.size, 2048):
            u = np.multiply.outer(t, self.inv_r[lo : lo + 2048])
            mod -= np.log1p(u * u).sum(axis=-1)
        if self.inv_c.size:
            u = np.multiply.outer(t, self.inv_c)
            mod -= 0.5 * np.log1p(u * u).sum(axis=-1)
            arg -= np.arctan(u).sum(axis=-1)
        if self.n is None:
            mod -= t * t * self.s2
        return mod, arg

    def value(self, t):
        mod, arg = self.log_parts(t)
        r = np.exp(mod)
        return r * np.cos(arg), r * np.sin(arg)

    def cut_error(self, t):
        """Bound on |psi_inf - psi_J e^{-t^2 S_2(J)}| using log(1+u) >= u - u^2/2."""
        t = np.asarray(t, dtype=float)
        mod, _ = self.log_parts(t)
        t4 = t**4 * self.s4 / 2.0
        return np.exp(mod) * np.minimum(np.expm1(np.minimum(t4, 700.0)), np.exp(t * t * self.s2))

    def decay_bound(self, k=4):
        """(C, E) with |psi(t)| <= C t^-E, from the first factors."""
        logs = []
        weights = []
        for v in self.inv_c:
            logs.append(-math.log(v))
            weights.append(1.0)
        for v in self.inv_r[:k]:
            logs.append(-math.log(v))
            weights.append(2.0)
        E = 0.0
        logC = 0.0
        for lg, w in zip(logs, weights):
            if E >= 2 * k:
                break
            E += w
            logC += w * lg
        return logC, E


def psi(fb, x, y, n, t):
    """psi_n(t), complex; n = math.inf evaluates the infinite product."""
    x, y, flipped = _ordered(x, y)
    t = np.asarray(t, dtype=float)
    if n != math.inf and n < x:
        raise DomainError("psi_n needs n >= max(x, y)")
    scalar = t.ndim == 0
    ta = np.abs(np.atleast_1d(t))
    sign = np.sign(np.atleast_1d(t))
    if n == math.inf:
        prod = _Product(fb, x, y, None, J=max(x, 4096))
    else:
        prod = _Product(fb, x, y, int(n))
    re, im = prod.value(ta)
    im = im * np.where(sign < 0, -1.0, 1.0)
    if flipped:
        im = -im
    out = re + 1j * im
    return complex(out[0]) if scalar else out


# -- integration --------------------------------------------------------------


def _segments(T, max_width=math.inf):
    edges = [0.0]
    e = 0.5
    while e < T:
        edges.append(e)
        e *= 2.0
    edges.append(T)
    segs = []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, math.ceil((b - a) / max_width))
        cuts = np.linspace(a, b, k + 1)
        segs.extend(zip(cuts[:-1], cuts[1:]))
    return segs


def _gauss_legendre(func, segments, panels):
    total = 0.0
    for a, b in segments:
        cuts = np.linspace(a, b, panels + 1)
        half = 0.5 * np.diff(cuts)
        mid = 0.5 * (cuts[1:] + cuts[:-1])
        nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        total += float(np.dot(w, func(nodes)))
    return total


def _adaptive(func, segments, epsabs, weighted=None):
    """Sum of scipy quad over segments.  ``weighted = (g, omega)`` integrates
    g(t) sin(omega t) with quad's oscillatory rule instead, away from t = 0."""
    total = 0.0
    err = 0.0
    for a, b in segments:
        if weighted is not None and a > 0:
            g, omega = weighted
            val, e = integrate.quad(lambda s: float(g(np.array([s]))[0]), a, b, weight="sin", wvar=omega,
                                    epsabs=epsabs / len(segments), epsrel=0.0, limit=200)
        else:
            val, e = integrate.quad(lambda s: float(func(np.array([s]))[0]), a, b,
                                    epsabs=epsabs / len(segments), epsrel=0.0, limit=200)
        total += val
        err += e
    return total, err


def _half_line_integral(func, T, tol, max_width=math.inf, weighted=None):
    """int_0^T func by adaptive quadrature and composite Gauss-Legendre.

    Returns (value, error estimate); the error is the largest of the adaptive
    rule's own estimate and the disagreements between the rules.  With an
    oscillatory weight the adaptive rule runs on the unsplit segments.
    """
    segs = _segments(T, max_width)
    q_val, q_err = _adaptive(func, _segments(T) if weighted else segs, tol, weighted)
    panels = 2
    prev = _gauss_legendre(func, segs, panels)
    while True:
        panels *= 2
        cur = _gauss_legendre(func, segs, panels)
        err = max(q_err, abs(cur - prev), abs(cur - q_val))
        if err <= tol or panels >= 256:
            return cur, err
        prev = cur


def _cutoff(logC, E, tol):
    """T with int_T^inf C t^-E dt <= tol."""
    if E <= 1.0:
        raise DomainError("psi does not decay fast enough to be integrable")
    logT = (logC - math.log((E - 1.0) * tol)) / (E - 1.0)
    return max(math.exp(logT), 1.0)


def _tail_integral(logC, E, T):
    return math.exp(logC + (1.0 - E) * math.log(T)) / (E - 1.0)


@dataclass(frozen=True)
class AsymptoticConstant:
    """c = (1/pi) int psi; ``quadrature_error`` bounds |c - true value|.

    ``truncation_index`` is the product cutoff J (the index n itself for a
    finite c_n); ``bracket`` is c -/+ the error.
    """

    feedback: str
    x: int
    y: int
    c: float
    quadrature_error: float
    truncation_index: int
    imaginary_residual: float
    integration_limit: float

    @property
    def error_bound(self):
        return self.quadrature_error

    @property
    def bracket(self):
        return (self.c - self.quadrature_error, self.c + self.quadrature_error)

    def to_dict(self):
        d = asdict(self)
        d["error_bound"] = self.quadrature_error
        return d


def _integrate_constant(fb, x, y, n, rel_tol):
    x, y, _ = _ordered(x, y)
    # rough scale first: c <= (1/pi) int |psi|, and is of order one for x = y
    budget = rel_tol
    if n is not None:
        prod = _Product(fb, x, y, n)
        logC, E = prod.decay_bound()
        scale = _rough_scale(prod, logC, E)
        tol = budget * scale
        T = _cutoff(logC, E, tol / 8)
        tail = _tail_integral(logC, E, T)
        val, qerr = _half_line_integral(lambda t: prod.value(t)[0], T, tol / 4)
        cut = 0.0
        J = n
    else:
        J = max(x + 4, 64)
        while True:
            prod = _Product(fb, x, y, None, J=J)
            logC, E = prod.decay_bound()
            scale = _rough_scale(prod, logC, E)
            tol = budget * scale
            T = _cutoff(logC, E, tol / 8)
            cut, _ = _half_line_integral(prod.cut_error, T, tol / 16)
            if cut <= tol / 8:
                break
            if J >= 1 << 20:
                raise ToleranceError("product cutoff beyond 2^20 factors", best_bound=2 / math.pi * cut)
            J *= 4
        tail = _tail_integral(logC, E, T)
        val, qerr = _half_line_integral(lambda t: prod.value(t)[0], T, tol / 4)
    residual = _imaginary_residual(prod, T, tol)
    c = 2.0 / math.pi * val
    err = 2.0 / math.pi * (qerr + tail + cut)
    if err > rel_tol * c:
        raise ToleranceError(f"error {err:.3g} above the requested {rel_tol:g} relative", best_bound=err)
    return c, err, J, residual, T


def _imaginary_residual(prod, T, tol):
    """(1/pi) |int_{-T}^{T} Im psi|, integrated with breakpoints that are not
    mirror images, so the odd symmetry is tested rather than built in."""
    if prod.inv_c.size == 0:
        return 0.0

    def signed(t):
        return np.sign(t) * prod.value(np.abs(t))[1]

    pos = _segments(T)
    neg = [(-b * 0.75 if b < T else -T, -a * 0.75) for a, b in reversed(pos)]
    val, _ = _adaptive(signed, neg + pos, tol / 4)
    return abs(val) / math.pi


def _rough_scale(prod, logC, E):
    T = _cutoff(logC, E, 1e-3)
    v, _ = integrate.quad(lambda s: float(prod.value(np.array([s]))[0][0]), 0.0, T, limit=200)
    return max(2.0 / math.pi * v, 1e-300)


@lru_cache(maxsize=128)
def _cached_constant(fb, x, y, n, rel_tol):
    c, err, J, residual, T = _integrate_constant(fb, x, y, n, rel_tol)
    xo, yo, _ = _ordered(x, y)
    return AsymptoticConstant(fb.label, x, y, c, err, J, residual, T)


def limit_constant_c(fb, x, y, rel_tol=1e-8):
    """c = (1/pi) int psi_inf, with a certified error bound (cached per arguments)."""
    if rel_tol < 1e-10 or rel_tol >= 1:
        raise DomainError("rel_tol must lie in [1e-10, 1)")
    return _cached_constant(fb, int(x), int(y), None, float(rel_tol))


def constant_cn(fb, x, y, n, rel_tol=1e-8):
    """c_n = (1/pi) int psi_n = lim Pr[|Delta_n| <= eps] / eps."""
    if rel_tol < 1e-10 or rel_tol >= 1:
        raise DomainError("rel_tol must lie in [1e-10, 1)")
    if n < max(x, y):
        raise DomainError("c_n needs n >= max(x, y)")
    return _cached_constant(fb, int(x), int(y), int(n), float(rel_tol))


def window_probability(fb, x, y, n, eps, tol=1e-10):
    """Pr[|Delta_n| <= eps] = (2/pi) int_0^inf Re psi_n(t) sin(eps t) / t dt."""
    x, y, _ = _ordered(x, y)
    if eps <= 0:
        raise DomainError("eps must be positive")
    prod = _Product(fb, x, y, int(n))
    logC, E = prod.decay_bound()
    # |sin(eps t) / t| <= min(eps, 1 / t)
    T = min(_cutoff(logC + math.log(eps), E, tol / 8), _cutoff(logC, E + 1.0, tol / 8))
    # segments of a few oscillation periods of sin(eps t), at most about a thousand
    val, err = _half_line_integral(lambda t: prod.value(t)[0] * eps * np.sinc(eps * t / math.pi), T, tol / 4,
                                   max_width=max(20.0 / eps, T / 1000),
                                   weighted=(lambda t: prod.value(t)[0] / t, eps))
    return 2.0 / math.pi * val


def density_slope_cn(fb, x, y, n, epsilon_list, samples=10**6, seed=0, chunk=1 << 16):
    """Monte Carlo Pr[|Delta_n| <= eps] / eps for each eps; tends to c_n as eps -> 0.

    Delta_n is a finite sum of exponentials and is sampled exactly.
    """
    from .embedding import sample_delta

    x, y, _ = _ordered(x, y)
    eps = np.asarray(epsilon_list, dtype=float)
    if np.any(eps <= 0):
        raise DomainError("epsilons must be positive")
    hits = np.zeros(eps.size, dtype=np.int64)
    for start in range(0, samples, chunk):
        d = np.abs(sample_delta(fb, x, y, n, seed, min(chunk, samples - start), rep_start=start))
        hits += (d[:, None] <= eps[None, :]).sum(axis=0)
    return hits / samples / eps


# -- predictions ----------------------------------------------------------------


def predict_tail_L(fb, x, y, n, rel_tol=1e-8):
    """c * S_1(n): leading-order Pr[L > n]."""
    if n < 1:
        raise DomainError("n must be at least 1")
    return limit_constant_c(fb, x, y, rel_tol).c * partial_sum_S(fb, 1.0, int(n))


def predict_tail_L_asymptotic(fb, x, y, n, rel_tol=1e-8):
    """c * n / ((h(n) - 1) f(n)), the closed-form version of :func:`predict_tail_L`."""
    return limit_constant_c(fb, x, y, rel_tol).c * asymptotic_S(fb, 1.0, n)


def predict_loser_fraction(fb, x, y, alpha, n, rel_tol=1e-8):
    """c * S_1(ceil(alpha n), n - ceil(alpha n)): leading-order Pr[both bins >= alpha n]."""
    from .discrete import ceil_fraction

    if not 0 < alpha < 0.5:
        raise DomainError("alpha must lie in (0, 1/2)")
    k = ceil_fraction(alpha, n)
    if k < 1:
        raise DomainError("ceil(alpha n) must be at least 1")
    return limit_constant_c(fb, x, y, rel_tol).c * window_sum(fb, 1.0, k, n - k)


def loser_fraction_power_form(c, p, alpha, n):
    """c (alpha^(1-p) - (1-alpha)^(1-p)) / ((p-1) n^(p-1)) for f = x^p."""
    if p <= 1:
        raise DomainError("needs p > 1")
    return c * (alpha ** (1 - p) - (1 - alpha) ** (1 - p)) / ((p - 1) * n ** (p - 1))


def window_bounds(n, q):
    """Range [ceil((n-q)/2), floor((n+q)/2)] of bin-1 counts with |I_1 - I_2| <= q."""
    return math.ceil((n - q) / 2), (n + q) // 2


def window_precondition(fb, q, n, gamma=WINDOW_GAMMA):
    """S_1(window)^2 >= n^gamma S_2(window), checked numerically."""
    lo, hi = window_bounds(n, q)
    s1 = window_sum(fb, 1.0, lo, hi)
    s2 = window_sum(fb, 2.0, lo, hi)
    return s1 > 0 and s1 * s1 >= n**gamma * s2


def predict_window(fb, x, y, q, n, rel_tol=1e-8):
    """c * S_1(ceil((n-q)/2), floor((n+q)/2)): leading-order Pr[|I_1 - I_2| <= q at total n]."""
    if not 0 <= q < n:
        raise DomainError("need 0 <= q < n")
    if not window_precondition(fb, q, n):
        warnings.warn(f"window (q={q}, n={n}) fails S_1^2 >= n^{WINDOW_GAMMA} S_2; the prediction may be off",
                      stacklevel=2)
    lo, hi = window_bounds(n, q)
    return limit_constant_c(fb, x, y, rel_tol).c * window_sum(fb, 1.0, lo, hi)

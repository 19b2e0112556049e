"""Monte Carlo experiments with binomial intervals, censoring accounting and
comparison against the analytic predictions.

Replicates are processed in fixed blocks keyed by replicate index and the
per-block integer counts are summed, so results do not depend on how many
worker processes ran the blocks.
"""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
import io
import json
import math
import os
import pickle

import numpy as np
from scipy import stats

from . import analytics
from .discrete import UrnState, as_fraction, ceil_fraction
from .embedding import DEFAULT_CAP, DEFAULT_DELTA, imbalance_batch, race_batch, window_batch
from .errors import ConfigError, DomainError
from .feedback import FeedbackFunction, check_validity
from .streams import RandomStream

CSV_COLUMNS = (
    "experiment", "feedback", "p", "x0", "y0", "param_alpha", "param_beta", "param_q", "n",
    "samples", "hits", "censored", "p_hat", "ci_low", "ci_high", "prediction", "ratio", "z_score", "seed",
)
BLOCK = 1 << 16
WORKERS_ENV = "BALLSBINS_WORKERS"
DEFAULT_CONFIDENCE = 0.99
_HALF = Fraction(1, 2)


def wilson_interval(hits, trials, confidence=DEFAULT_CONFIDENCE):
    """Wilson score interval; (0, 1) when there are no trials."""
    if trials == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(hits), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class TailEstimate:
    """Hit frequency of one event; ``p_hat`` is taken over decided samples."""

    event_label: str
    n_or_N: int
    samples: int
    hits: int
    censored: int
    seed: int
    confidence: float = DEFAULT_CONFIDENCE

    @property
    def decided(self):
        return self.samples - self.censored

    @property
    def p_hat(self):
        return self.hits / self.decided if self.decided else 0.0

    @property
    def interval(self):
        return wilson_interval(self.hits, self.decided, self.confidence)

    @property
    def ci_low(self):
        return self.interval[0]

    @property
    def ci_high(self):
        return self.interval[1]

    @property
    def bracket(self):
        """Frequency with every censored sample counted as a miss, then as a hit."""
        return self.hits / self.samples, (self.hits + self.censored) / self.samples

    def standard_error(self, p=None):
        p = self.p_hat if p is None else p
        return math.sqrt(p * (1 - p) / self.decided) if self.decided else math.inf


@dataclass(frozen=True)
class ComparisonRow:
    experiment: str
    estimate: TailEstimate
    prediction: float = None
    feedback: FeedbackFunction = None
    x0: int = None
    y0: int = None
    alpha: object = None
    beta: object = None
    q: int = None

    @property
    def ratio(self):
        if self.prediction is None or self.prediction <= 0:
            return None
        return self.estimate.p_hat / self.prediction

    @property
    def z_score(self):
        """(p_hat - prediction) / standard error under the prediction."""
        if self.prediction is None or not 0 < self.prediction < 1 or self.estimate.decided == 0:
            return None
        return (self.estimate.p_hat - self.prediction) / self.estimate.standard_error(self.prediction)

    def record(self):
        e = self.estimate
        fb = self.feedback
        return {
            "experiment": self.experiment,
            "feedback": fb.label if fb is not None else None,
            "p": fb.p if fb is not None else None,
            "x0": self.x0,
            "y0": self.y0,
            "param_alpha": None if self.alpha is None else float(self.alpha),
            "param_beta": None if self.beta is None else float(self.beta),
            "param_q": self.q,
            "n": e.n_or_N,
            "samples": e.samples,
            "hits": e.hits,
            "censored": e.censored,
            "p_hat": e.p_hat,
            "ci_low": e.ci_low,
            "ci_high": e.ci_high,
            "prediction": self.prediction,
            "ratio": self.ratio,
            "z_score": self.z_score,
            "seed": e.seed,
        }


@dataclass
class ExperimentResult:
    """Rows of one experiment, plus the fitted decay exponent where it applies."""

    rows: list
    fitted_exponent: float = None
    warnings: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]


# -- block runner -----------------------------------------------------------------


def resolve_workers(workers=None):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers < 1:
        raise ConfigError("workers", "must be at least 1")
    return workers


def _run_blocks(task, samples, workers, block=BLOCK):
    """Sum ``task(rep_start, count)`` over fixed replicate blocks."""
    starts = list(range(0, samples, block))
    counts = [min(block, samples - s) for s in starts]
    workers = resolve_workers(workers)
    if workers > 1 and len(starts) > 1:
        try:
            pickle.dumps(task)
        except (pickle.PicklingError, AttributeError, TypeError):
            workers = 1
    if workers == 1 or len(starts) == 1:
        parts = [task(s, c) for s, c in zip(starts, counts)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(task, starts, counts))
    return np.sum(parts, axis=0)


def _seed_of(rng):
    if isinstance(rng, RandomStream):
        return rng.seed
    return int(rng)


def _check_samples(samples):
    if samples < 1:
        raise DomainError("samples must be at least 1")


# -- experiments --------------------------------------------------------------------


def _losing_tail_block(fb, state, n_list, delta, cap, seed, rep_start, count):
    r = race_batch(fb, state, seed, rep_start, count, delta=delta, cap=cap, resolve_above=max(n_list))
    losing, bound, censored = r["losing"], r["lower_bound"], r["censored"]
    resolved = losing >= 0
    out = []
    cens = []
    for n in n_list:
        hit = np.where(resolved, losing > n, bound > n)
        unknown = ~resolved & censored & (bound <= n)
        out.append(int(np.sum(hit & ~unknown)))
        cens.append(int(np.sum(unknown)))
    return np.array(out + cens, dtype=np.int64)


def experiment_losing_tail(fb, x, y, n_list, samples, delta=DEFAULT_DELTA, rng=0, cap=DEFAULT_CAP,
                           workers=None, confidence=DEFAULT_CONFIDENCE, predict=True):
    """Pr[L > n] for each n from one set of certified races, against c S_1(n).

    A race that stops with L unresolved still counts as a hit for every n
    below its certified lower bound on L; only the rest are censored.
    """
    _check_samples(samples)
    n_list = [int(n) for n in n_list]
    if min(n_list) < 0:
        raise DomainError("n must be nonnegative")
    state = UrnState.of(x, y)
    seed = _seed_of(rng)
    task = partial(_losing_tail_block, fb, state, tuple(n_list), delta, cap, seed)
    counts = _run_blocks(task, samples, workers)
    k = len(n_list)
    rows = []
    for i, n in enumerate(n_list):
        est = TailEstimate("L>n", n, samples, int(counts[i]), int(counts[k + i]), seed, confidence)
        pred = analytics.predict_tail_L(fb, x, y, n) if predict and n >= 1 else None
        rows.append(ComparisonRow("tail-loser", est, pred, fb, x, y))
    return ExperimentResult(rows, warnings=_censor_warnings(rows))


def _imbalance_block(fb, state, beta, delta, cap, seed, rep_start, count):
    hit, cens = imbalance_batch(fb, state, beta, seed, rep_start, count, delta=delta, cap=cap)
    return np.array([int(hit.sum()), int(cens.sum())], dtype=np.int64)


def experiment_imbalance(fb, n, alpha, beta, samples, delta=DEFAULT_DELTA, rng=0, cap=DEFAULT_CAP,
                         workers=None, confidence=DEFAULT_CONFIDENCE):
    """Frequency of  exists N >= n : bin 1 holds >= ceil(beta N) balls at total N,
    starting from (ceil(alpha n), n - ceil(alpha n))."""
    _check_samples(samples)
    a, b = as_fraction(alpha), as_fraction(beta)
    if not 0 < a < b < _HALF:
        raise DomainError("need 0 < alpha < beta < 1/2")
    state = UrnState.from_fraction(n, alpha)
    seed = _seed_of(rng)
    task = partial(_imbalance_block, fb, state, beta, delta, cap, seed)
    hits, cens = _run_blocks(task, samples, workers)
    est = TailEstimate("HasMoreThan(beta,N)", int(n), samples, int(hits), int(cens), seed, confidence)
    row = ComparisonRow("imbalance", est, None, fb, state.counts[0], state.counts[1], alpha=alpha, beta=beta)
    return ExperimentResult([row], warnings=_censor_warnings([row]))


def _window_block(fb, state, windows, seed, rep_start, count):
    return window_batch(fb, state, windows, seed, rep_start, count).sum(axis=0).astype(np.int64)


def _window_counts(fb, state, windows, samples, seed, workers):
    task = partial(_window_block, fb, state, tuple(windows), seed)
    return _run_blocks(task, samples, workers)


def experiment_loser_fraction(fb, x, y, alpha, n_list, samples, delta=DEFAULT_DELTA, rng=0,
                              workers=None, confidence=DEFAULT_CONFIDENCE, predict=True):
    """Pr[both bins hold >= ceil(alpha n) balls at total n], against c S_1(ceil(alpha n), n - ceil(alpha n)).

    The event is the window ceil(alpha n) <= I_1 <= n - ceil(alpha n) and is
    decided exactly from finitely many clock values, so nothing is censored;
    ``delta`` is accepted for interface symmetry.
    """
    _check_samples(samples)
    if not 0 < as_fraction(alpha) < _HALF:
        raise DomainError("alpha must lie in (0, 1/2)")
    state = UrnState.of(x, y)
    windows = []
    for n in n_list:
        k = ceil_fraction(alpha, n)
        if 2 * k > n:
            raise DomainError(f"ceil(alpha n) = {k} exceeds n/2 for n = {n}")
        if n < state.total:
            raise DomainError("n must be at least x + y")
        windows.append((int(n), k, int(n) - k))
    seed = _seed_of(rng)
    counts = _window_counts(fb, state, windows, samples, seed, workers)
    rows = []
    for (n, k, _), hits in zip(windows, counts):
        est = TailEstimate("LoserHasMoreThan(alpha,n)", n, samples, int(hits), 0, seed, confidence)
        pred = analytics.predict_loser_fraction(fb, x, y, alpha, n) if predict else None
        rows.append(ComparisonRow("loser-fraction", est, pred, fb, x, y, alpha=alpha, q=n - 2 * k))
    return ExperimentResult(rows)


@dataclass(frozen=True)
class QSpec:
    """Window half-width rule q(n).

    kinds: ``constant`` (q = k), ``alpha`` (q = n - 2 ceil(alpha n), the
    window of the loser-fraction event), ``linear`` (q = floor(a n)) and
    ``sqrt`` (q = floor(lambda sqrt n)).
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("constant", "alpha", "linear", "sqrt"):
            raise DomainError(f"unknown q kind {self.kind!r}")
        if self.param < 0:
            raise DomainError("q parameter must be nonnegative")

    def __call__(self, n):
        if self.kind == "constant":
            return int(self.param)
        if self.kind == "alpha":
            return n - 2 * ceil_fraction(self.param, n)
        if self.kind == "linear":
            return math.floor(as_fraction(self.param) * n)
        return math.floor(self.param * math.sqrt(n))


def fitted_exponent(n_list, p_hat):
    """Least-squares slope of log p_hat against log n."""
    n = np.asarray(n_list, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    if n.size < 2 or np.any(p <= 0):
        return None
    return float(np.polyfit(np.log(n), np.log(p), 1)[0])


def experiment_window(fb, x, y, q_spec, n_list, samples, delta=DEFAULT_DELTA, rng=0, workers=None,
                      confidence=DEFAULT_CONFIDENCE, predict=True):
    """Pr[|I_1 - I_2| <= q(n) at total n] against c S_1(ceil((n-q)/2), floor((n+q)/2))."""
    _check_samples(samples)
    if not isinstance(q_spec, QSpec):
        q_spec = QSpec(*q_spec)
    state = UrnState.of(x, y)
    windows = []
    qs = []
    for n in n_list:
        n = int(n)
        q = q_spec(n)
        if not 0 <= q < n:
            raise DomainError(f"q(n) = {q} must lie in [0, n) for n = {n}")
        if n < state.total:
            raise DomainError("n must be at least x + y")
        lo, hi = analytics.window_bounds(n, q)
        windows.append((n, lo, hi))
        qs.append(q)
    seed = _seed_of(rng)
    counts = _window_counts(fb, state, windows, samples, seed, workers)
    rows = []
    for (n, _, _), q, hits in zip(windows, qs, counts):
        est = TailEstimate("window(q,n)", n, samples, int(hits), 0, seed, confidence)
        pred = analytics.predict_window(fb, x, y, q, n) if predict else None
        alpha = q_spec.param if q_spec.kind == "alpha" else None
        rows.append(ComparisonRow("window", est, pred, fb, x, y, alpha=alpha, q=q))
    exponent = None
    if q_spec.kind == "sqrt":
        exponent = fitted_exponent([r.estimate.n_or_N for r in rows], [r.estimate.p_hat for r in rows])
    return ExperimentResult(rows, fitted_exponent=exponent)


def _censor_warnings(rows):
    out = []
    for r in rows:
        if r.estimate.censored:
            lo, hi = r.estimate.bracket
            out.append(f"{r.experiment} n={r.estimate.n_or_N}: {r.estimate.censored} censored samples; "
                       f"frequency bracket [{lo:.6g}, {hi:.6g}]")
    return out


# -- output -------------------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows, out=None):
    buf = io.StringIO() if out is None else out
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        rec = r.record()
        w.writerow([_cell(rec[c]) for c in CSV_COLUMNS])
    return buf.getvalue() if out is None else None


def rows_to_json(rows):
    return json.dumps([r.record() for r in rows], indent=2)


# -- plans ----------------------------------------------------------------------------

EXPERIMENTS = ("tail-loser", "imbalance", "loser-fraction", "window")
_NEEDS_ANALYTICS = ("tail-loser", "loser-fraction", "window")


@dataclass
class ExperimentSpec:
    kind: str
    params: dict


@dataclass
class ExperimentPlan:
    """A feedback function, a base seed and a list of experiments."""

    feedback: FeedbackFunction
    seed: int
    experiments: list = field(default_factory=list)
    delta: float = DEFAULT_DELTA
    cap: int = DEFAULT_CAP
    confidence: float = DEFAULT_CONFIDENCE
    compare: bool = True

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("plan", "must be a mapping")
        try:
            fb = FeedbackFunction.from_dict(d.get("feedback", {}))
        except (DomainError, KeyError, TypeError) as exc:
            raise ConfigError("feedback", str(exc)) from None
        if "seed" not in d:
            raise ConfigError("seed", "required")
        exps = []
        for i, e in enumerate(d.get("experiments", []) or []):
            if not isinstance(e, dict) or "kind" not in e:
                raise ConfigError(f"experiments[{i}].kind", "required")
            exps.append(ExperimentSpec(e["kind"], {k: v for k, v in e.items() if k != "kind"}))
        plan = cls(fb, int(d["seed"]), exps, float(d.get("delta", DEFAULT_DELTA)), int(d.get("cap", DEFAULT_CAP)),
                   float(d.get("confidence", DEFAULT_CONFIDENCE)), bool(d.get("compare", True)))
        plan.validate()
        return plan

    def validate(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if not 0 < self.delta < 1:
            raise ConfigError("delta", "must lie in (0, 1)")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence", "must lie in (0, 1)")
        for i, e in enumerate(self.experiments):
            path = f"experiments[{i}]"
            if e.kind not in EXPERIMENTS:
                raise ConfigError(f"{path}.kind", f"unknown experiment {e.kind!r}")
            s = e.params.get("samples")
            if not isinstance(s, int) or s < 1:
                raise ConfigError(f"{path}.samples", "must be a positive integer")
            if e.kind == "imbalance":
                for key in ("n", "alpha", "beta"):
                    if key not in e.params:
                        raise ConfigError(f"{path}.{key}", "required")
                if not 0 < e.params["alpha"] < e.params["beta"] < 0.5:
                    raise ConfigError(f"{path}.alpha", "need 0 < alpha < beta < 1/2")
            else:
                n_list = e.params.get("n_list")
                if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
                    raise ConfigError(f"{path}.n_list", "must be nonempty and increasing")
        if self.compare and any(e.kind in _NEEDS_ANALYTICS for e in self.experiments):
            if not check_validity(self.feedback).passed:
                raise ConfigError("feedback", "feedback not valid; analytics unavailable")


@dataclass
class Report:
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    fitted_exponents: dict = field(default_factory=dict)

    def to_csv(self):
        return rows_to_csv(self.rows)

    def to_json(self):
        return rows_to_json(self.rows)


def run_plan(plan, workers=None):
    """Run every experiment of ``plan``; output does not depend on ``workers``."""
    if isinstance(plan, dict):
        plan = ExperimentPlan.from_dict(plan)
    else:
        plan.validate()
    report = Report()
    fb = plan.feedback
    for i, e in enumerate(plan.experiments):
        p = e.params
        common = dict(rng=plan.seed, workers=workers, confidence=plan.confidence)
        try:
            if e.kind == "tail-loser":
                res = experiment_losing_tail(fb, p.get("x0", 1), p.get("y0", 1), p["n_list"], p["samples"],
                                             delta=plan.delta, cap=plan.cap, predict=plan.compare, **common)
            elif e.kind == "imbalance":
                res = experiment_imbalance(fb, p["n"], p["alpha"], p["beta"], p["samples"], delta=plan.delta,
                                           cap=plan.cap, **common)
            elif e.kind == "loser-fraction":
                res = experiment_loser_fraction(fb, p.get("x0", 1), p.get("y0", 1), p["alpha"], p["n_list"],
                                                p["samples"], predict=plan.compare, **common)
            else:
                q = p.get("q", {})
                spec = QSpec(q.get("kind", "constant"), q.get("param", 0)) if isinstance(q, dict) else QSpec(*q)
                res = experiment_window(fb, p.get("x0", 1), p.get("y0", 1), spec, p["n_list"], p["samples"],
                                        predict=plan.compare, **common)
        except DomainError as exc:
            raise ConfigError(f"experiments[{i}]", str(exc)) from None
        report.rows.extend(res.rows)
        report.warnings.extend(res.warnings)
        if res.fitted_exponent is not None:
            report.fitted_exponents[i] = res.fitted_exponent
    return report

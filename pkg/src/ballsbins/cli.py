"""Command-line front end.

    ballsbins validate --feedback power --p 2
    ballsbins constant --p 2 --x0 2 --y0 1
    ballsbins tail-loser --p 2 --n 20,40,80 --samples 1000000 --seed 7
    ballsbins simulate --p 2 --steps 100 --seed 1

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
The worker count for experiments is read from BALLSBINS_WORKERS.
"""

import argparse
from dataclasses import asdict, dataclass, field
import json
import sys

import yaml

from . import analytics, montecarlo
from .discrete import UrnState, simulate_steps, trajectory_csv
from .embedding import DEFAULT_CAP, DEFAULT_DELTA
from .errors import ConfigError, DivergenceError, DomainError, ToleranceError
from .feedback import FeedbackFunction, check_validity
from .streams import RandomStream

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
FEEDBACK_KINDS = {"power": "power", "power-log": "power_log_exponent", "power-times-log": "power_times_log"}
EXPERIMENT_COMMANDS = ("tail-loser", "imbalance", "loser-fraction", "window")


@dataclass
class RunConfig:
    """Everything a run needs; serializes to and from the YAML config file."""

    feedback: dict = field(default_factory=lambda: {"kind": "power", "p": 2.0, "a": None})
    initial: list = field(default_factory=lambda: [1, 1])
    n_list: list = field(default_factory=list)
    samples: int = 10**5
    alpha: float = None
    beta: float = None
    q_spec: dict = field(default_factory=lambda: {"kind": "sqrt", "param": 1.0})
    delta: float = DEFAULT_DELTA
    cap: int = DEFAULT_CAP
    seed: int = None
    output: dict = field(default_factory=lambda: {"format": "csv", "path": None})
    confidence: float = montecarlo.DEFAULT_CONFIDENCE
    rel_tol: float = 1e-8
    steps: int = 100

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, text):
        d = yaml.safe_load(text) or {}
        if not isinstance(d, dict):
            raise ConfigError("config", "top level must be a mapping")
        return cls.from_dict(d)

    def feedback_function(self):
        fb = dict(self.feedback)
        kind = FEEDBACK_KINDS.get(fb.get("kind"), fb.get("kind"))
        try:
            if kind == "power_log_exponent":
                return FeedbackFunction.power_log_exponent(fb["p"], fb["a"])
            return FeedbackFunction.from_dict({"kind": kind, "p": fb["p"]})
        except (DomainError, KeyError, TypeError) as exc:
            raise ConfigError("feedback", str(exc)) from None

    def validate(self):
        self.feedback_function()
        if len(self.initial) != 2 or any(int(v) < 1 for v in self.initial):
            raise ConfigError("initial", "needs two positive counts")
        if self.n_list and any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ConfigError("n_list", "must be increasing")
        if self.samples < 1:
            raise ConfigError("samples", "must be at least 1")
        for key in ("alpha", "beta"):
            v = getattr(self, key)
            if v is not None and not 0 < v < 1:
                raise ConfigError(key, "must lie in (0, 1)")
        for key in ("delta", "confidence"):
            if not 0 < getattr(self, key) < 1:
                raise ConfigError(key, "must lie in (0, 1)")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self.output.get("format") not in ("csv", "json"):
            raise ConfigError("output.format", "must be csv or json")
        if self.q_spec.get("kind") not in ("constant", "alpha", "linear", "sqrt"):
            raise ConfigError("q_spec.kind", "must be constant, alpha, linear or sqrt")
        if self.cap < 64:
            raise ConfigError("cap", "must be at least 64")
        if self.steps < 0:
            raise ConfigError("steps", "must be nonnegative")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError("arguments", message)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    parser = _Parser(prog="ballsbins", description="Balls-in-bins with feedback: analytics and Monte Carlo.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def feedback_flags(p):
        p.add_argument("--config", help="YAML run configuration; flags override its values")
        p.add_argument("--feedback", choices=sorted(FEEDBACK_KINDS))
        p.add_argument("--p", type=float)
        p.add_argument("--a", type=float)

    def start_flags(p):
        p.add_argument("--x0", type=int)
        p.add_argument("--y0", type=int)

    def output_flags(p):
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--output", help="file to write instead of standard output")

    p = sub.add_parser("validate", help="check the validity conditions of a feedback function")
    feedback_flags(p)
    p.add_argument("--grid-max", type=int, default=10**6)

    p = sub.add_parser("constant", help="compute the limiting constant c by quadrature")
    feedback_flags(p)
    start_flags(p)
    p.add_argument("--rel-tol", type=float)

    for name in EXPERIMENT_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        feedback_flags(p)
        start_flags(p)
        output_flags(p)
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--delta", type=float)
        p.add_argument("--cap", type=int)
        p.add_argument("--confidence", type=float)
        if name == "imbalance":
            p.add_argument("--n", type=int, help="initial total; bin 1 starts with ceil(alpha n)")
        else:
            p.add_argument("--n", type=_int_list, help="comma-separated totals, e.g. 20,40,80")
        if name in ("imbalance", "loser-fraction"):
            p.add_argument("--alpha", type=float)
        if name == "imbalance":
            p.add_argument("--beta", type=float)
        if name == "window":
            p.add_argument("--q-kind", choices=("constant", "alpha", "linear", "sqrt"))
            p.add_argument("--q-param", type=float)

    p = sub.add_parser("simulate", help="run the discrete chain and print its trajectory")
    feedback_flags(p)
    start_flags(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    return parser


def config_from_args(args):
    """Merge the optional config file with the flags (flags win)."""
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = RunConfig.load(fh.read())
    else:
        cfg = RunConfig()
    d = cfg.to_dict()
    fb = dict(d["feedback"])
    if args.feedback is not None:
        fb["kind"] = args.feedback
    if args.p is not None:
        fb["p"] = args.p
    if args.a is not None:
        fb["a"] = args.a
    d["feedback"] = fb
    x0, y0 = getattr(args, "x0", None), getattr(args, "y0", None)
    if x0 is not None or y0 is not None:
        d["initial"] = [x0 if x0 is not None else d["initial"][0], y0 if y0 is not None else d["initial"][1]]
    n = getattr(args, "n", None)
    if n is not None:
        d["n_list"] = n if isinstance(n, list) else [n]
    for key in ("samples", "alpha", "beta", "delta", "cap", "seed", "confidence", "rel_tol", "steps"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    q = dict(d["q_spec"])
    if getattr(args, "q_kind", None) is not None:
        q["kind"] = args.q_kind
    if getattr(args, "q_param", None) is not None:
        q["param"] = args.q_param
    d["q_spec"] = q
    out = dict(d["output"])
    if getattr(args, "format", None) is not None:
        out["format"] = args.format
    if getattr(args, "output", None) is not None:
        out["path"] = args.output
    d["output"] = out
    return RunConfig.from_dict(d)


def _emit(text, path, stdout):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        stdout.write(text)


def _run_experiment(command, cfg):
    fb = cfg.feedback_function()
    if cfg.seed is None:
        raise ConfigError("seed", "--seed is required for experiments")
    if not cfg.n_list:
        raise ConfigError("n_list", "--n is required")
    if command != "imbalance" and not check_validity(fb).passed:
        raise ConfigError("feedback", "feedback not valid; analytics unavailable")
    x, y = cfg.initial
    common = dict(rng=cfg.seed, confidence=cfg.confidence)
    if command == "tail-loser":
        return montecarlo.experiment_losing_tail(fb, x, y, cfg.n_list, cfg.samples, delta=cfg.delta, cap=cfg.cap,
                                                 **common)
    if command == "imbalance":
        if cfg.alpha is None or cfg.beta is None:
            raise ConfigError("alpha", "--alpha and --beta are required")
        return montecarlo.experiment_imbalance(fb, cfg.n_list[0], cfg.alpha, cfg.beta, cfg.samples,
                                               delta=cfg.delta, cap=cfg.cap, **common)
    if command == "loser-fraction":
        if cfg.alpha is None:
            raise ConfigError("alpha", "--alpha is required")
        return montecarlo.experiment_loser_fraction(fb, x, y, cfg.alpha, cfg.n_list, cfg.samples, **common)
    spec = montecarlo.QSpec(cfg.q_spec["kind"], cfg.q_spec.get("param", 0))
    return montecarlo.experiment_window(fb, x, y, spec, cfg.n_list, cfg.samples, **common)


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = config_from_args(args)
        fb = cfg.feedback_function()
        if args.command == "validate":
            report = check_validity(fb, grid_max=args.grid_max)
            stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
            return EXIT_OK if report.passed else EXIT_USAGE
        if args.command == "constant":
            if not check_validity(fb).passed:
                raise ConfigError("feedback", "feedback not valid; analytics unavailable")
            const = analytics.limit_constant_c(fb, cfg.initial[0], cfg.initial[1], cfg.rel_tol)
            stdout.write(json.dumps(const.to_dict(), indent=2) + "\n")
            return EXIT_OK
        if args.command == "simulate":
            if cfg.seed is None:
                raise ConfigError("seed", "--seed is required")
            traj = simulate_steps(fb, UrnState.of(*cfg.initial), cfg.steps, RandomStream(cfg.seed))
            _emit(trajectory_csv(traj), cfg.output.get("path"), stdout)
            return EXIT_OK
        result = _run_experiment(args.command, cfg)
        if cfg.output["format"] == "json":
            text = montecarlo.rows_to_json(result.rows) + "\n"
        else:
            text = montecarlo.rows_to_csv(result.rows)
        _emit(text, cfg.output.get("path"), stdout)
        for w in result.warnings:
            stderr.write(f"warning: {w}\n")
        if result.fitted_exponent is not None:
            stderr.write(f"fitted decay exponent: {result.fitted_exponent:.4f}\n")
        return EXIT_OK
    except ConfigError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (DomainError, DivergenceError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except ToleranceError as exc:
        stderr.write(f"numerical failure: {exc} (best bound {exc.best_bound})\n")
        return EXIT_NUMERIC
    except OSError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

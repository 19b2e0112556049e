"""Balls-in-bins processes with feedback: exact chain, exponential
embedding, limiting constants and Monte Carlo experiments."""

from .analytics import (
    AsymptoticConstant,
    constant_cn,
    density_slope_cn,
    limit_constant_c,
    predict_loser_fraction,
    predict_tail_L,
    predict_window,
    psi,
)
from .discrete import UrnState, enumerate_paths, simulate_steps, step_probability
from .embedding import (
    BinClock,
    RaceOutcome,
    embedded_discrete_steps,
    has_more_than_event,
    race_to_monopoly,
    sample_clock,
    window_event,
)
from .errors import ConfigError, DivergenceError, DomainError, ToleranceError
from .feedback import (
    FeedbackFunction,
    SumTable,
    ValidityReport,
    asymptotic_S,
    characteristic_exponent,
    check_validity,
    evaluate_f,
    integral_M,
    partial_sum_S,
)
from .montecarlo import (
    ComparisonRow,
    ExperimentPlan,
    TailEstimate,
    experiment_imbalance,
    experiment_loser_fraction,
    experiment_losing_tail,
    experiment_window,
    run_plan,
)
from .streams import RandomStream

__version__ = "0.1.0"

import csv
import io
import json
import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from ballsbins import montecarlo as mc
from ballsbins.errors import ConfigError, DomainError
from ballsbins.feedback import FeedbackFunction

POWER2 = FeedbackFunction.power(2)


@pytest.mark.parametrize("p,trials", [(0.3, 200), (0.02, 2000)])
def test_wilson_interval_coverage(p, trials):
    rng = np.random.default_rng(11)
    hits = rng.binomial(trials, p, size=1000)
    covered = [lo <= p <= hi for lo, hi in (mc.wilson_interval(h, trials) for h in hits)]
    assert abs(np.mean(covered) - 0.99) <= 0.02


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5000), st.data())
def test_estimate_invariants(samples, data):
    censored = data.draw(st.integers(0, samples))
    hits = data.draw(st.integers(0, samples - censored))
    est = mc.TailEstimate("L>n", 3, samples, hits, censored, seed=0)
    assert 0 <= est.ci_low <= est.p_hat <= est.ci_high <= 1
    lo, hi = est.bracket
    if est.decided:
        assert lo <= est.p_hat <= hi


def test_no_decided_samples():
    est = mc.TailEstimate("L>n", 3, 10, 0, 10, seed=0)
    assert est.p_hat == 0.0 and est.interval == (0.0, 1.0)


def test_comparison_row_ratio_and_z():
    est = mc.TailEstimate("L>n", 20, 10**4, 300, 0, seed=1)
    row = mc.ComparisonRow("tail-loser", est, 0.03, POWER2, 1, 1)
    assert row.ratio == pytest.approx(1.0)
    assert row.z_score == pytest.approx(0.0, abs=1e-12)
    row = mc.ComparisonRow("tail-loser", est, 0.02, POWER2, 1, 1)
    assert row.z_score == pytest.approx(0.01 / math.sqrt(0.02 * 0.98 / 10**4))
    assert mc.ComparisonRow("imbalance", est).ratio is None


def test_losing_tail_small_run():
    res = mc.experiment_losing_tail(POWER2, 1, 1, [0, 1, 5, 20, 40], 20000, rng=3)
    p = [r.estimate.p_hat for r in res]
    assert p == sorted(p, reverse=True)
    assert res[0].estimate.p_hat <= 1 and res[0].prediction is None
    # Pr[L = 0] = prod_j (1 + 1/j^2)^-1 = 2 pi / sinh(pi)
    p0 = 2 * math.pi / math.sinh(math.pi)
    assert abs((1 - p[0]) - p0) <= 4 * math.sqrt(p0 * (1 - p0) / 20000)
    for r in res[1:]:
        assert r.prediction > 0 and r.estimate.censored == 0
    # c S_1(1) > 1 is no probability, so there is no z-score to report
    assert res[1].z_score is None
    assert all(abs(r.z_score) < 5 for r in res[3:])


def test_losing_tail_symmetry_under_bin_swap():
    a = mc.experiment_losing_tail(POWER2, 2, 1, [3, 10], 20000, rng=4)
    b = mc.experiment_losing_tail(POWER2, 1, 2, [3, 10], 20000, rng=4)
    for ra, rb in zip(a, b):
        assert ra.prediction == pytest.approx(rb.prediction, rel=1e-10)
        se = math.sqrt(ra.estimate.p_hat * (1 - ra.estimate.p_hat) / 20000)
        assert abs(ra.estimate.p_hat - rb.estimate.p_hat) <= 5 * math.sqrt(2) * se + 1e-12


def test_censoring_is_reported_and_bracketed():
    # a tiny cap forces censoring; L is still bounded below by what was seen
    res = mc.experiment_losing_tail(POWER2, 1, 1, [2, 30, 200], 4000, rng=5, cap=64, delta=1e-12)
    assert any(r.estimate.censored for r in res)
    for r in res:
        lo, hi = r.estimate.bracket
        assert lo <= r.estimate.p_hat <= hi
    assert res.warnings


def test_imbalance_requires_ordered_parameters():
    with pytest.raises(DomainError):
        mc.experiment_imbalance(POWER2, 100, 0.4, 0.4, 10)
    with pytest.raises(DomainError):
        mc.experiment_imbalance(POWER2, 100, 0.3, 0.5, 10)


def test_imbalance_small_regime_has_occurrences():
    res = mc.experiment_imbalance(POWER2, 10, 0.3, 0.4, 20000, rng=6)
    est = res[0].estimate
    assert est.event_label == "HasMoreThan(beta,N)"
    assert est.hits > 0 and est.censored == 0
    assert res[0].x0 == 3 and res[0].y0 == 7


def test_loser_fraction_equals_alpha_window():
    n_list = [32, 64]
    lf = mc.experiment_loser_fraction(POWER2, 1, 1, 0.25, n_list, 30000, rng=8)
    win = mc.experiment_window(POWER2, 1, 1, mc.QSpec("alpha", 0.25), n_list, 30000, rng=8)
    for a, b in zip(lf, win):
        assert a.estimate.hits == b.estimate.hits
        assert a.prediction == b.prediction
        assert a.q == b.q == a.estimate.n_or_N // 2


def test_loser_fraction_precondition():
    with pytest.raises(DomainError):
        mc.experiment_loser_fraction(POWER2, 1, 1, 0.5, [10], 10)
    with pytest.raises(DomainError):
        mc.experiment_loser_fraction(POWER2, 1, 1, 0.49, [7], 10)


def test_full_window_is_certain():
    res = mc.experiment_window(POWER2, 1, 1, mc.QSpec("constant", 19), [20], 1000, rng=2)
    assert res[0].estimate.p_hat == 1.0
    with pytest.raises(DomainError):
        mc.experiment_window(POWER2, 1, 1, mc.QSpec("constant", 20), [20], 10, rng=2)


def test_sqrt_window_reports_exponent():
    res = mc.experiment_window(POWER2, 1, 1, mc.QSpec("sqrt", 1.0), [64, 256], 200000, rng=9)
    assert res.fitted_exponent == pytest.approx(-1.5, abs=0.35)
    assert [r.q for r in res] == [8, 16]


def test_qspec_kinds():
    assert mc.QSpec("constant", 3)(100) == 3
    assert mc.QSpec("alpha", 0.25)(10) == 10 - 2 * 3
    assert mc.QSpec("linear", 0.1)(30) == 3
    assert mc.QSpec("sqrt", 2.0)(50) == 14
    with pytest.raises(DomainError):
        mc.QSpec("cubic", 1)


def test_fitted_exponent_exact_power():
    n = [10, 20, 40]
    assert mc.fitted_exponent(n, [m**-1.5 for m in n]) == pytest.approx(-1.5)
    assert mc.fitted_exponent(n, [0.1, 0.0, 0.01]) is None


def _plan(**over):
    d = {
        "feedback": {"kind": "power", "p": 2},
        "seed": 13,
        "experiments": [
            {"kind": "tail-loser", "n_list": [5, 10], "samples": 70000},
            {"kind": "window", "n_list": [16, 64], "samples": 70000, "q": {"kind": "sqrt", "param": 1}},
        ],
    }
    d.update(over)
    return d


def test_csv_columns_and_json_mirror():
    report = mc.run_plan(_plan())
    rows = list(csv.DictReader(io.StringIO(report.to_csv())))
    assert tuple(rows[0]) == mc.CSV_COLUMNS
    assert len(rows) == 4
    assert rows[0]["param_alpha"] == "" and rows[0]["experiment"] == "tail-loser"
    records = json.loads(report.to_json())
    assert [tuple(r) for r in records] == [mc.CSV_COLUMNS] * 4
    assert records[0]["param_alpha"] is None
    assert float(rows[2]["p_hat"]) == records[2]["p_hat"]
    assert report.fitted_exponents.keys() == {1}


def test_worker_count_does_not_change_output(monkeypatch):
    one = mc.run_plan(_plan(), workers=1).to_csv()
    two = mc.run_plan(_plan(), workers=2).to_csv()
    assert one == two
    monkeypatch.setenv(mc.WORKERS_ENV, "2")
    assert mc.run_plan(_plan()).to_csv() == one


def test_block_sums_do_not_depend_on_block_size():
    a = mc._window_counts(POWER2, mc.UrnState.of(1, 1), [(20, 5, 15)], 5000, 3, 1)
    task = mc.partial(mc._window_block, POWER2, mc.UrnState.of(1, 1), ((20, 5, 15),), 3)
    b = mc._run_blocks(task, 5000, 1, block=777)
    assert np.array_equal(a, b)


def test_empty_plan_gives_empty_report():
    report = mc.run_plan({"feedback": {"kind": "power", "p": 2}, "seed": 1, "experiments": []})
    assert report.rows == [] and report.warnings == []
    assert report.to_csv().strip() == ",".join(mc.CSV_COLUMNS)


def test_plan_rejects_invalid_feedback_for_comparison():
    with pytest.raises(ConfigError, match="feedback not valid; analytics unavailable"):
        mc.run_plan(_plan(feedback={"kind": "power", "p": 1}))


def test_plan_errors_name_the_field():
    with pytest.raises(ConfigError) as err:
        mc.run_plan(_plan(experiments=[{"kind": "window", "n_list": [9, 4], "samples": 10}]))
    assert "experiments[0].n_list" in str(err.value)
    with pytest.raises(ConfigError) as err:
        mc.run_plan(_plan(experiments=[{"kind": "imbalance", "n": 50, "alpha": 0.3, "beta": 0.2, "samples": 5}]))
    assert "experiments[0].alpha" in str(err.value)
    with pytest.raises(ConfigError):
        mc.run_plan({"feedback": {"kind": "power", "p": 2}})

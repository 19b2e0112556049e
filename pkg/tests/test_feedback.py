import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from ballsbins.errors import DivergenceError, DomainError
from ballsbins.feedback import (
    FeedbackFunction,
    SumTable,
    asymptotic_S,
    characteristic_exponent,
    check_validity,
    evaluate_f,
    integral_M,
    partial_sum_S,
    sum_table,
    window_sum,
)

from oracles import direct_sum, hurwitz_tail

POWER2 = FeedbackFunction.power(2)
PTL2 = FeedbackFunction.power_times_log(2)
PLE = FeedbackFunction.power_log_exponent(2, 1)
BUILTINS = [POWER2, FeedbackFunction.power(1.5), FeedbackFunction.power(3), PTL2, PLE]


def test_evaluate_examples():
    assert evaluate_f(POWER2, 3) == 9.0
    assert evaluate_f(PTL2, 1) == pytest.approx(1.0, abs=1e-15)
    assert evaluate_f(PLE, math.e) == pytest.approx(math.e**2, rel=1e-14)
    with pytest.raises(DomainError):
        evaluate_f(POWER2, 0.5)


def test_normalization_and_monotonicity():
    n = np.arange(1, 2000, dtype=float)
    for fb in BUILTINS:
        assert evaluate_f(fb, 1) == pytest.approx(1.0, abs=1e-15)
        assert np.all(np.diff(fb.log_f(n)) > 0)


def test_overflow_goes_to_log_domain():
    big = FeedbackFunction.power(3)
    assert math.isinf(evaluate_f(big, 1e240))
    assert float(big.log_f(1e240)) == pytest.approx(3 * math.log(1e240))
    assert float(big.inverse_power(1e240)) == 0.0


def test_characteristic_exponent_examples():
    assert characteristic_exponent(POWER2, 17.3) == 2.0
    assert characteristic_exponent(PTL2, 1) == pytest.approx(2 + 1 / math.e, rel=1e-14)
    assert characteristic_exponent(PLE, 5.0) == pytest.approx(4 * math.log(5.0), rel=1e-14)


@pytest.mark.parametrize("fb", BUILTINS, ids=lambda f: f.label)
def test_closed_form_h_matches_log_derivative(fb):
    x = np.geomspace(2, 1e5, 25)
    step = 1e-6
    numeric = (fb.log_f(x * (1 + step)) - fb.log_f(x * (1 - step))) / (2 * step)
    assert np.allclose(fb.h(x), numeric, rtol=1e-7)


def test_custom_needs_f_and_flags_numeric_h():
    with pytest.raises(DomainError):
        FeedbackFunction.custom()
    cube = FeedbackFunction.custom(f=lambda x: x**3)
    assert cube.numeric_h
    assert float(cube.h(10.0)) == pytest.approx(3.0, rel=1e-8)
    assert not FeedbackFunction.custom(f=lambda x: x**3, h=lambda x: 3.0 + 0 * x).numeric_h


def test_partial_sums_examples():
    assert partial_sum_S(POWER2, 1, 2, 4) == pytest.approx(13 / 36, rel=1e-15)
    assert partial_sum_S(POWER2, 1, 5, 5) == 0.0
    exact = math.pi**2 / 6 - sum(1 / j**2 for j in range(1, 10))
    assert partial_sum_S(POWER2, 1, 10) == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("p,n", [(2, 1), (2, 37), (3, 10), (1.5, 100), (1.1, 1)])
def test_infinite_sum_against_hurwitz_zeta(p, n):
    assert partial_sum_S(FeedbackFunction.power(p), 1, n) == pytest.approx(hurwitz_tail(p, n), rel=1e-10)


def test_integral_examples():
    assert integral_M(POWER2, 1, 10) == pytest.approx(0.1, rel=1e-10)
    assert integral_M(POWER2, 2, 10) == pytest.approx(1 / 3000, rel=1e-10)
    s = partial_sum_S(PTL2, 1, 100)
    assert abs(integral_M(PTL2, 1, 100) - s) <= 1 / evaluate_f(PTL2, 100)


@pytest.mark.parametrize("fb", BUILTINS, ids=lambda f: f.label)
@pytest.mark.parametrize("n", [1, 2, 5, 10, 100, 1000, 10**4])
def test_integral_sum_gap_bound(fb, n):
    assert abs(integral_M(fb, 1, n) - partial_sum_S(fb, 1, n)) <= 1 / evaluate_f(fb, n)


def test_divergence_detected():
    with pytest.raises(DivergenceError):
        partial_sum_S(FeedbackFunction.power(1), 1, 1)
    with pytest.raises(DivergenceError):
        integral_M(FeedbackFunction.power(0.9), 1, 1)


def test_asymptotic_examples():
    assert asymptotic_S(POWER2, 1, 100) == pytest.approx(0.01)
    assert asymptotic_S(FeedbackFunction.power(3), 1, 10) == pytest.approx(0.005)
    assert asymptotic_S(POWER2, 2, 50) == pytest.approx(50 / (3 * 50**4))
    with pytest.raises(DomainError):
        asymptotic_S(FeedbackFunction.power(1), 1, 10)


@pytest.mark.parametrize("fb", [POWER2, PTL2, FeedbackFunction.power(3)], ids=lambda f: f.label)
@pytest.mark.parametrize("r", [1, 2])
def test_sum_approaches_asymptotic_form(fb, r):
    ratios = [partial_sum_S(fb, r, n) / asymptotic_S(fb, r, n) for n in (10**2, 10**3, 10**4)]
    gaps = [abs(x - 1) for x in ratios]
    assert gaps[0] >= gaps[1] >= gaps[2]
    assert gaps[2] < 0.05


def test_ratio_decay_of_integrals():
    for fb in BUILTINS:
        for rho in (1.5, 2.0):
            ratios = [integral_M(fb, 1, math.ceil(rho * n)) / integral_M(fb, 1, n) for n in (100, 1000, 10**4)]
            assert max(ratios) < 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3000), st.integers(0, 3000), st.integers(0, 3000), st.sampled_from([1.0, 2.0]))
def test_additivity(n, d1, d2, r):
    m, k = n + d1, n + d1 + d2
    lhs = partial_sum_S(POWER2, r, n, m) + partial_sum_S(POWER2, r, m, k)
    assert lhs == pytest.approx(partial_sum_S(POWER2, r, n, k), rel=1e-12, abs=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 400), st.integers(0, 400))
def test_finite_sum_against_rationals(n, d):
    assert partial_sum_S(POWER2, 1, n, n + d) == pytest.approx(direct_sum(2, n, n + d), rel=1e-13, abs=1e-300)


def test_sum_table():
    t = SumTable(POWER2, 1, 5000)
    assert t[10] == pytest.approx(partial_sum_S(POWER2, 1, 10), rel=1e-12)
    assert np.all(np.diff(t.values[1:]) < 0) and np.all(t.values[1:] > 0)
    assert t.partial(16, 48) == pytest.approx(direct_sum(2, 16, 48), rel=1e-14)
    assert sum_table(POWER2, 1.0, 100) is sum_table(POWER2, 1.0, 100)


def test_window_sum_empty():
    assert window_sum(POWER2, 1, 8, 8) == 0.0
    assert window_sum(POWER2, 1, 9, 8) == 0.0


@pytest.mark.parametrize("p", [1.1, 1.5, 2, 3])
def test_validity_powers(p):
    report = check_validity(FeedbackFunction.power(p))
    assert report.passed
    assert report.empirical_C == pytest.approx(0.0, abs=1e-9)


def test_validity_failures_and_other_families():
    assert not check_validity(FeedbackFunction.power(1)).growth_condition
    expo = FeedbackFunction.custom(log_f=lambda x: x * math.log(2), h=lambda x: x * math.log(2), name="2^x")
    report = check_validity(expo)
    assert not report.h_tail_ratio_decreasing
    assert not report.passed
    assert check_validity(PLE).passed
    assert check_validity(PTL2).passed
    assert any("heuristic" in w for w in report.warnings)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from winprob.quadrature import integrate_adaptive

from winprob.survival import (ArmData, Dataset, EarlyEffect, Exponential, LateEffect, SurvivalRecord,
                              WeibullParams, cumulative_hazard, hazard, km_estimate, sample_event_time,
                              survival, weibull_pdf, weibull_survival)

LAM = math.log(2) / 9


def test_weibull_pdf_examples():
    assert weibull_pdf(WeibullParams(1, 0.5), 2) == pytest.approx(0.5 * math.exp(-1), rel=1e-12)
    assert weibull_pdf(WeibullParams(2, 1), 1) == pytest.approx(2 * math.exp(-1), rel=1e-12)
    assert weibull_pdf(WeibullParams(1, LAM), 1e-12) == pytest.approx(LAM, rel=1e-9)
    assert weibull_pdf(WeibullParams(1, LAM), 1e-12) == pytest.approx(0.07702, abs=1e-5)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_weibull_pdf_domain(t):
    with pytest.raises(ValueError):
        weibull_pdf(WeibullParams(1.3, 0.2), t)


def test_weibull_survival_examples():
    p = WeibullParams(1, LAM)
    assert weibull_survival(WeibullParams(2.7, 3.1), 0) == 1.0
    assert weibull_survival(p, 9) == pytest.approx(0.5, abs=1e-14)
    assert weibull_survival(p, 12) == pytest.approx(2 ** (-4 / 3), rel=1e-12)
    with pytest.raises(ValueError):
        weibull_survival(p, -0.1)


@pytest.mark.parametrize("bad", [(0, 1), (1, 0), (-1, 1)])
def test_weibull_params_invariants(bad):
    with pytest.raises(ValueError):
        WeibullParams(*bad)


def test_weibull_pdf_integrates_to_one():
    # t = x / (1 - x) maps (0, 1) onto (0, inf).
    for p in (WeibullParams(0.7, 0.3), WeibullParams(1.3, 0.05), WeibullParams(3.0, 0.001)):
        total = integrate_adaptive(lambda x: p.pdf(x / (1 - x)) / (1 - x) ** 2, 0.0, 1.0)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_hazard_examples():
    early = EarlyEffect(LAM, 0.1010)
    assert hazard(early, 1e-12) == pytest.approx(0.6 * LAM, rel=1e-9)
    assert hazard(early, 1e-12) == pytest.approx(0.04621, abs=1e-5)
    knot = -math.log(0.6) / 0.1010
    assert early.knot == pytest.approx(knot)
    assert knot == pytest.approx(5.058, abs=1e-3)
    left = 0.6 * LAM * math.exp(0.1010 * knot)
    assert hazard(early, knot) == pytest.approx(LAM, abs=1e-12)
    assert left == pytest.approx(LAM, abs=1e-12)
    assert hazard(early, knot * (1 + 1e-12)) == pytest.approx(LAM, abs=1e-12)
    late = LateEffect(LAM, -0.0344)
    assert hazard(late, 1e-12) == pytest.approx(LAM, rel=1e-9)
    assert hazard(Exponential(0.3), 4.0) == 0.3
    assert hazard(WeibullParams(2, 1), 1.5) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        hazard(late, 0.0)


@pytest.mark.parametrize("spec", [EarlyEffect(LAM, 0.1010), EarlyEffect(LAM, 0.0351),
                                  LateEffect(LAM, -0.0344), LateEffect(LAM, -1.1246)])
def test_hazard_continuous_at_knot(spec):
    k = spec.knot
    eps = 1e-13 * k
    assert abs(spec.hazard(k - eps) - spec.hazard(k + eps)) < 1e-12


@pytest.mark.parametrize("bad", [lambda: EarlyEffect(LAM, 0.0), lambda: EarlyEffect(LAM, -0.1),
                                 lambda: LateEffect(LAM, 0.0), lambda: LateEffect(LAM, 0.1),
                                 lambda: Exponential(0.0)])
def test_hazard_spec_invariants(bad):
    with pytest.raises(ValueError):
        bad()


def test_cumulative_hazard_closed_forms():
    assert cumulative_hazard(Exponential(0.2), 7.0) == pytest.approx(1.4)
    early = EarlyEffect(LAM, 0.1010)
    assert cumulative_hazard(early, 0.0) == 0.0
    expected = 0.4 * LAM / 0.1010
    assert cumulative_hazard(early, early.knot) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.30502, abs=1e-5)
    # Independent oracle: scipy quadrature of the hazard.
    oracle = integrate.quad(lambda t: early.hazard(t), 0, early.knot, epsabs=1e-13)[0]
    assert cumulative_hazard(early, early.knot) == pytest.approx(oracle, abs=1e-8)


@pytest.mark.parametrize("spec", [LateEffect(LAM, -0.0344), LateEffect(LAM, -1.1246),
                                  EarlyEffect(LAM, 0.0351), WeibullParams(1.4, 0.02)])
@pytest.mark.parametrize("t", [0.3, 5.0, 12.0, 40.0])
def test_cumulative_hazard_matches_quadrature(spec, t):
    pts = [k for k in spec.knots if k < t]
    oracle = integrate.quad(lambda s: spec.hazard(s), 0, t, points=pts or None, epsabs=1e-13, limit=200)[0]
    assert cumulative_hazard(spec, t) == pytest.approx(oracle, abs=1e-8)


def test_sample_event_time_examples():
    assert sample_event_time(Exponential(LAM), 0.5) == pytest.approx(9.0, rel=1e-12)
    for spec in (Exponential(LAM), EarlyEffect(LAM, 0.1), LateEffect(LAM, -0.05), WeibullParams(0.8, 0.1)):
        assert sample_event_time(spec, 1 - 1e-12) < 1e-6
    early = EarlyEffect(LAM, 0.1010)
    t = sample_event_time(early, math.exp(-0.5))
    assert cumulative_hazard(early, t) == pytest.approx(0.5, abs=1e-10)
    for u in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            sample_event_time(early, u)


specs = st.one_of(
    st.builds(Exponential, st.floats(1e-3, 2.0)),
    st.builds(WeibullParams, st.floats(0.3, 4.0), st.floats(1e-3, 2.0)),
    st.builds(EarlyEffect, st.floats(1e-3, 2.0), st.floats(1e-4, 2.0)),
    st.builds(LateEffect, st.floats(1e-3, 2.0), st.floats(-2.0, -1e-4)),
)


@settings(max_examples=200, deadline=None)
@given(spec=specs, u=st.floats(1e-12, 1 - 1e-12))
def test_round_trip(spec, u):
    t = sample_event_time(spec, u)
    assert math.exp(-cumulative_hazard(spec, t)) == pytest.approx(u, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(spec=specs, ts=st.lists(st.floats(0, 200), min_size=2, max_size=20))
def test_survival_consistent_and_monotone(spec, ts):
    ts = np.sort(np.array(ts))
    s = survival(spec, ts)
    np.testing.assert_allclose(s, np.exp(-cumulative_hazard(spec, ts)), rtol=1e-12)
    assert np.all(np.diff(s) <= 1e-15)
    assert survival(spec, 0.0) == 1.0


# -- Kaplan-Meier ----------------------------------------------------------------

def test_km_uncensored():
    km = km_estimate(ArmData([1, 2, 3, 4, 5], [1] * 5))
    np.testing.assert_allclose(km.survival, [0.8, 0.6, 0.4, 0.2, 0.0], atol=1e-15)
    np.testing.assert_array_equal(km.at_risk, [5, 4, 3, 2, 1])


def test_km_single_censored():
    km = km_estimate([SurvivalRecord(3.0, False, "active")])
    assert km.time.size == 0
    assert km(0.5) == 1.0 and km(100.0) == 1.0


def test_km_hand_example():
    km = km_estimate(ArmData([2, 3, 4], [1, 0, 1]))
    # One subject left at risk at t=4 and it fails, so the curve drops to 0.
    np.testing.assert_allclose(km.survival, [2 / 3, 0.0])
    assert km(2.5) == pytest.approx(2 / 3)
    assert km(3.9) == pytest.approx(2 / 3)
    assert km(4.0) == 0.0


def test_km_greenwood():
    km = km_estimate(ArmData([2, 3, 4, 5], [1, 0, 1, 0]))
    # Hand: S(2)=3/4, var=(3/4)^2 * 1/(4*3); S(4)=3/4*1/2, var adds 1/(2*1).
    assert km.variance[0] == pytest.approx((3 / 4) ** 2 / 12)
    assert km.variance[1] == pytest.approx((3 / 8) ** 2 * (1 / 12 + 1 / 2))


def test_km_events_precede_censoring_at_ties():
    km = km_estimate(ArmData([2, 2, 3], [1, 0, 1]))
    # Both subjects at t=2 are at risk for the event there.
    assert km.at_risk[0] == 3
    assert km.survival[0] == pytest.approx(2 / 3)


def test_km_empty():
    with pytest.raises(ValueError):
        km_estimate([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=40, unique=True))
def test_km_uncensored_is_empirical(times):
    times = np.array(times)
    km = km_estimate(ArmData(times, np.ones(times.size, bool)))
    for t, s in zip(km.time, km.survival):
        assert s == pytest.approx(np.mean(times > t), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 50), st.booleans()), min_size=1, max_size=40))
def test_km_invariants(rows):
    km = km_estimate(ArmData([r[0] for r in rows], [r[1] for r in rows]))
    assert np.all(np.diff(km.survival) <= 1e-15)
    assert np.all((km.survival >= 0) & (km.survival <= 1))
    assert np.all(np.diff(km.at_risk) <= 0)


def test_km_area_step():
    # S = 1 on [0, 2), 0.5 afterwards.
    km = km_estimate(ArmData([2, 20], [1, 0]))
    assert km.area(12) == pytest.approx(2 + 0.5 * 10)


def test_dataset_records_round_trip():
    recs = [SurvivalRecord(1.5, True, "active"), SurvivalRecord(2.0, False, "control"),
            SurvivalRecord(0.3, False, "active")]
    ds = Dataset.from_records(recs)
    assert len(ds.active) == 2 and len(ds.control) == 1
    assert Dataset.from_records(ds.records()) == ds


def test_record_invariants():
    with pytest.raises(ValueError):
        SurvivalRecord(0.0, True, "active")
    with pytest.raises(ValueError):
        SurvivalRecord(1.0, True, "placebo")

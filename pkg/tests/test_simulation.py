import math

import numpy as np
import pytest
from scipy import integrate

from reference import TOLERANCES, TRUTH_ROWS
from winprob import bayes
from winprob.simulation import (EARLY_RAMPS, EFFECT_WPS, HAZARD_RATIOS, LATE_RAMPS, ScenarioSpec, StudyCell,
                                aggregate, calibrate_effect, generate_dataset, replicate_seed, run_replicate,
                                run_study, scenario, standard_grid, true_estimands)

LAM = math.log(2) / 9
FAST = bayes.McmcConfig(chains=2, iterations=600, burn_in=300)


def test_generate_deterministic():
    spec = scenario("Early", 1)
    a = generate_dataset(spec, 200, 42)
    b = generate_dataset(spec, 200, 42)
    assert a == b
    assert generate_dataset(spec, 200, 43) != a


def test_generate_validates():
    with pytest.raises(ValueError):
        generate_dataset(scenario("Null"), 0, 1)


@pytest.mark.parametrize("spec", [scenario("Null"), scenario("Late", 0)])
def test_event_proportion_matches_quadrature(spec):
    lo, hi = spec.window
    ds = generate_dataset(spec, 100_000, 5)
    for dist, arm in ((spec.active, ds.active), (spec.control, ds.control)):
        # Pr(event) = 1 - E[S(C)], C ~ Uniform(lo, hi).
        pts = [k for k in dist.knots if lo < k < hi]
        mean_s = integrate.quad(lambda c: dist.survival(c), lo, hi, points=pts or None)[0] / (hi - lo)
        assert arm.event.mean() == pytest.approx(1 - mean_s, abs=0.01)


def test_control_median_uncensored():
    spec = scenario("PH", 0).with_window(None)
    ds = generate_dataset(spec, 100_000, 6)
    assert np.median(ds.control.time) == pytest.approx(9.0, abs=0.1)
    assert np.median(ds.active.time) == pytest.approx(9 / 0.65, abs=0.2)
    assert ds.control.event.all()


def test_window_invariant():
    with pytest.raises(ValueError):
        ScenarioSpec("Null", "-", None, None, (21.0, 12.0))


# -- ground truth ---------------------------------------------------------------------

@pytest.mark.parametrize("key", list(TRUTH_ROWS))
def test_truth_row(key):
    got = true_estimands(scenario(*key), 12).as_row()
    for g, want, tol in zip(got, TRUTH_ROWS[key], TOLERANCES):
        assert abs(g - want) <= tol, (key, got)


def test_ph_truth_closed_forms():
    t = true_estimands(scenario("PH", 0), 12)
    la = 0.65 * LAM
    assert t.wp == pytest.approx(1 / 1.65, abs=1e-9)
    assert t.hr == pytest.approx(0.65, abs=1e-12)
    assert t.d_rmst == pytest.approx((1 - math.exp(-la * 12)) / la - (1 - math.exp(-LAM * 12)) / LAM, abs=1e-9)
    assert t.d_median == pytest.approx(9 / 0.65 - 9, abs=1e-9)
    assert t.d_mean == pytest.approx(1 / la - 1 / LAM, abs=1e-7)


def test_late_first_row():
    t = true_estimands(scenario("Late", 0), 12)
    assert t.wp == pytest.approx(0.61, abs=0.01)
    assert t.rwp == pytest.approx(0.57, abs=0.01)
    assert t.d_mean == pytest.approx(10.22, abs=0.02)


def test_null_truth():
    t = true_estimands(scenario("Null"), 7.0)
    assert (t.wp, t.rwp, t.hr) == pytest.approx((0.5, 0.5, 1.0), abs=1e-12)
    assert (t.d_rmst, t.d_median, t.d_mean) == pytest.approx((0, 0, 0), abs=1e-12)


@pytest.mark.parametrize("family", ["PH", "Early", "Late"])
def test_truth_monotone_in_effect(family):
    wps = [true_estimands(scenario(family, k), 12).wp for k in range(3)]
    assert wps[0] > wps[1] > wps[2] > 0.5


def test_rwp_below_wp_on_grid():
    for spec in standard_grid()[:-1]:
        t = true_estimands(spec, 12)
        assert t.rwp <= t.wp + 1e-9
        # Early effects whose knot precedes tau share the control hazard past
        # tau, so pairs surviving tau split evenly and RWP equals WP.
        if spec.label == "Early" and spec.active.knot < 12:
            assert t.rwp == pytest.approx(t.wp, abs=1e-8)
        else:
            assert t.rwp < t.wp


def test_control_facts():
    control = scenario("Null").control
    mean = integrate.quad(control.survival, 0, np.inf)[0]
    assert mean == pytest.approx(9 / math.log(2), rel=1e-9)
    assert round(mean, 1) == 13.0
    # 39.7% is the share still event-free at 12 months.
    assert control.survival(12) == pytest.approx(0.397, abs=5e-4)


def test_calibration_reproduces_grid():
    for k, target in enumerate(EFFECT_WPS):
        assert calibrate_effect("PH", 1 / (1 + HAZARD_RATIOS[k])) == pytest.approx(HAZARD_RATIOS[k])
        assert calibrate_effect("Early", target) == pytest.approx(EARLY_RAMPS[k], rel=1e-8)
        assert calibrate_effect("Late", target) == pytest.approx(LATE_RAMPS[k], rel=1e-8)
    with pytest.raises(ValueError):
        calibrate_effect("Early", 0.63)


def test_scenario_builder():
    assert scenario("Early", ramp=0.1).active.ramp == 0.1
    assert scenario("PH", hr=0.7).active.rate == pytest.approx(0.7 * LAM)
    with pytest.raises(ValueError):
        scenario("Weird")
    with pytest.raises(ValueError):
        scenario("Late")
    assert len(standard_grid()) == 10


# -- study runner -------------------------------------------------------------------

def test_replicate_seeds_distinct():
    cell = StudyCell(scenario("Null"), 100)
    states = {tuple(replicate_seed(1, cell, r).generate_state(4)) for r in range(50)}
    assert len(states) == 50
    other = StudyCell(scenario("PH", 0), 100)
    assert tuple(replicate_seed(1, other, 0).generate_state(4)) not in states


def test_run_replicate_shape():
    out = run_replicate(StudyCell(scenario("PH", 0), 200), 0, 9, mcmc=FAST)
    assert set(out) == {"wp", "rwp", "logrank", "rmst", "fwr"}
    reject, est, lo, hi = out["wp"]
    assert isinstance(reject, bool) and lo <= est <= hi


def test_study_deterministic():
    cells = [StudyCell(scenario("PH", 0), 120)]
    a = run_study(cells, 1, 77, mcmc=FAST)
    b = run_study(cells, 1, 77, mcmc=FAST)
    assert a.rows == b.rows and a.total_failures == 0


def test_replicate_order_irrelevant():
    cell = StudyCell(scenario("Early", 0), 120)
    methods = ("logrank", "rmst", "fwr")
    results = {r: run_replicate(cell, r, 3, methods) for r in range(6)}
    shuffled = {r: results[r] for r in (4, 1, 5, 0, 3, 2)}
    assert aggregate(cell, results, methods, None).rows == aggregate(cell, shuffled, methods, None).rows
    # A replicate's outcome does not depend on which others were run.
    assert run_replicate(cell, 4, 3, methods) == results[4]


def test_parallel_matches_serial():
    cells = [StudyCell(scenario("Null"), 100)]
    methods = ("logrank", "fwr")
    a = run_study(cells, 6, 5, methods)
    b = run_study(cells, 6, 5, methods, workers=2)
    assert a.rows == b.rows


@pytest.mark.filterwarnings("ignore:split R-hat")
def test_metric_invariants():
    cell = StudyCell(scenario("Null"), 200)
    m = run_study([cell], 4, 1, mcmc=FAST)
    for label, effect, n, method, metric, value in m.rows:
        if metric == "rejection_rate":
            assert 0 <= value <= 1
        if metric == "rmse":
            assert value >= 0
        if metric == "coverage_pct":
            assert 0 <= value <= 100
    # Truth 0 for the RMST difference under the null: bias is absolute.
    m.value("Null", "-", 200, "rmst", "absolute_bias")
    with pytest.raises(KeyError):
        m.value("Null", "-", 200, "rmst", "relative_bias")


def test_run_study_validates():
    with pytest.raises(ValueError):
        run_study([StudyCell(scenario("Null"), 100)], 0, 1)
    with pytest.raises(ValueError):
        run_study([StudyCell(scenario("Null"), 100)], 1, 1, methods=("cox",))

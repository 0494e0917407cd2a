import numpy as np
import pytest

from spikefisher.changepoint import (
    WindowPlan,
    calibrate_threshold,
    detect_change_point,
    reference_z_scores,
    window_statistic,
)
from spikefisher.model import SingularCovarianceError, draw_entries
from spikefisher.simharness import change_index, generate_model5, outlier_positions


def test_window_plan_validation():
    assert WindowPlan.default(50) == WindowPlan(100, 100, 20, 0.0005)
    with pytest.raises(ValueError):
        WindowPlan(100, 100, 1)
    with pytest.raises(ValueError, match="q11 > p"):
        WindowPlan(50, 100).check(50)
    with pytest.raises(ValueError, match="shorter"):
        WindowPlan(100, 100).check(50, 210)


def test_trace_centering_example():
    X = np.random.default_rng(0).standard_normal((50, 200))
    rep = window_statistic(X[:, :100], X[:, 100:], demean=False, estimate_moments=False)
    assert rep.d1 == pytest.approx(100.0)
    assert rep.mu == pytest.approx(0.5 / 0.25)
    assert rep.nu == pytest.approx(2 * 0.75 / 0.5**4)


def test_trace_matches_explicit_inverse():
    rng = np.random.default_rng(1)
    g1, g2 = rng.standard_normal((6, 40)), rng.standard_normal((6, 15))
    rep = window_statistic(g1, g2)
    c1, c2 = g1 - g1.mean(1, keepdims=True), g2 - g2.mean(1, keepdims=True)
    s1, s2 = c1 @ c1.T / 39, c2 @ c2.T / 14
    assert rep.statistic_raw == pytest.approx(np.trace(np.linalg.inv(s1) @ s2), rel=1e-10)


def test_scalar_case_is_variance_ratio():
    rng = np.random.default_rng(2)
    g1, g2 = rng.standard_normal((1, 30)), rng.standard_normal((1, 30))
    rep = window_statistic(g1, g2)
    assert rep.statistic_raw == pytest.approx(g2.var(ddof=1) / g1.var(ddof=1), rel=1e-12)
    assert np.isfinite(rep.z_score)


def test_singular_group1():
    g1 = np.ones((3, 10))
    g1[:, :5] = 0
    with pytest.raises(SingularCovarianceError):
        window_statistic(g1, np.random.default_rng(3).standard_normal((3, 5)))


def test_null_statistic_standardized():
    rng = np.random.default_rng(4)
    z = []
    for _ in range(1000):
        X = rng.standard_normal((50, 200))
        z.append(window_statistic(X[:, :100], X[:, 100:]).z_score)
    z = np.array(z)
    assert abs(z.mean()) < 0.1
    assert 0.85 < z.var() < 1.15


def test_variance_shift_power():
    rng = np.random.default_rng(5)
    z = []
    for _ in range(100):
        g1 = rng.standard_normal((50, 100))
        g2 = np.sqrt(20) * rng.standard_normal((50, 100))
        z.append(window_statistic(g1, g2).z_score)
    assert np.mean(np.abs(z) > 10) >= 0.99


def test_printed_h2_form_inflates_variance_term():
    X = np.random.default_rng(6).standard_normal((50, 200))
    a = window_statistic(X[:, :100], X[:, 100:], estimate_moments=False)
    b = window_statistic(X[:, :100], X[:, 100:], estimate_moments=False, h2_form="printed")
    c = 50 / 99
    assert b.nu - a.nu == pytest.approx(2 * (c**2 + c**2 - c * c - (2 * c - c * c)) / (1 - c) ** 4, rel=1e-12)


def test_model5_detection_and_outliers():
    T = 1500
    X = generate_model5(50, T, 20, np.random.default_rng(7))
    state = detect_change_point(X, WindowPlan.default(50))
    assert state.detected
    assert abs(state.change_point - change_index(T)) <= 20
    assert state.change_point not in outlier_positions(T)
    assert set(outlier_positions(T)) <= state.removed_indices
    run = list(range(state.change_point, state.change_point + 20))
    assert set(run) <= set(state.anomaly_set)
    assert state.removed_indices == set(state.anomaly_set)


def test_group2_sizes_non_increasing_and_deterministic():
    X = generate_model5(20, 400, 20, np.random.default_rng(8))
    plan = WindowPlan.default(20)
    a, b = detect_change_point(X, plan), detect_change_point(X, plan)
    assert a.anomaly_set == b.anomaly_set and a.z_scores == b.z_scores
    assert all(x >= y for x, y in zip(a.group2_sizes, a.group2_sizes[1:]))


def test_removal_is_causal():
    X = generate_model5(20, 400, 20, np.random.default_rng(9))
    plan = WindowPlan.default(20)
    full = detect_change_point(X, plan)
    first = full.anomaly_set[0]
    # windows before the first rejection are untouched by any removal
    k = first - (plan.q11 + plan.q12) + 1
    clean = reference_z_scores(np.hstack([X, np.random.default_rng(0).standard_normal((20, 100))]), plan)
    assert np.allclose(full.z_scores[:k], clean[:k], rtol=1e-12)


def test_unreachable_run_length():
    X = generate_model5(20, 400, 20, np.random.default_rng(10))
    state = detect_change_point(X, WindowPlan(40, 40, s=300))
    assert not state.detected


def test_null_sequences_rarely_alarm():
    alarms = 0
    for k in range(20):
        X = np.random.default_rng([11, k]).standard_normal((50, 1500))
        alarms += detect_change_point(X, WindowPlan.default(50)).detected
    assert alarms <= 1


@pytest.mark.xfail(reason="finite-sample right skew of T_j inflates the 3.5-sigma tail about threefold at p=50", strict=False)
def test_null_anomaly_rate_binomial():
    plan = WindowPlan.default(50)
    hits = windows = 0
    for k in range(10):
        state = detect_change_point(np.random.default_rng([12, k]).standard_normal((50, 1500)), plan)
        hits += len(state.anomaly_set)
        windows += state.window_index
    se = np.sqrt(plan.alpha * (1 - plan.alpha) / windows)
    assert abs(hits / windows - plan.alpha) < 3 * se


def test_calibrated_threshold_gaussian_and_heavy_tails():
    # 1000 overlapping windows per reference; the median over 5 references tames their correlation
    plan = WindowPlan.default(50)
    rng = np.random.default_rng(13)
    gauss = np.median([calibrate_threshold(rng.standard_normal((50, 1199)), plan) for _ in range(5)])
    assert abs(gauss - 1.96) < 0.3
    heavy = np.median([calibrate_threshold(draw_entries((50, 1199), "gamma", rng), plan, estimate_moments=False) for _ in range(5)])
    assert heavy > gauss


def test_calibration_errors():
    plan = WindowPlan(40, 40)
    with pytest.raises(ValueError, match="zero variance"):
        calibrate_threshold(np.ones((20, 500)), plan)
    with pytest.raises(ValueError, match="at least 100"):
        calibrate_threshold(np.random.default_rng(0).standard_normal((20, 150)), plan)

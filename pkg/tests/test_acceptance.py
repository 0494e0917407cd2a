"""Acceptance criteria 1 to 9, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the full set takes
roughly 8 minutes on one core.
"""
import numpy as np
import pytest
from scipy import stats

from spikefisher.changepoint import window_statistic
from spikefisher.clt import meanvar
from spikefisher.model import MomentProfile, RatioProfile, SpectrumH, fisher_eigenvalues, fisher_from_samples
from spikefisher.rmt import psi
from spikefisher.simharness import (
    ExperimentSpec,
    model_spikes,
    outlier_positions,
    run_changepoint_benchmark,
    run_null_histogram,
    run_size_power,
)


def _report(request, number, ok, detail):
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    capman = request.config.pluginmanager.getplugin("capturemanager")
    with capman.global_and_fixture_disabled():
        print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module")
def model3_table():
    return run_size_power(ExperimentSpec(3, reps=2000, M0_grid=(5, 6)))


def test_criterion_1_model1_size_power(request):
    t = run_size_power(ExperimentSpec(1, p=100, reps=1000, M0_grid=(1, 4)))
    size, power = t.frequency(4), t.frequency(1)
    ok = abs(size - 0.050) <= 0.02 and power >= 0.95
    _report(request, 1, ok, f"Model 1 size at M0=4 {size:.4f} (0.050 +- 0.02), power at M0=1 {power:.4f} (>= 0.95)")


def test_criterion_2_model2_size(request):
    t = run_size_power(ExperimentSpec(2, p=100, reps=1000, M0_grid=(4,)))
    size = t.frequency(4)
    _report(request, 2, abs(size - 0.052) <= 0.02, f"Model 2 size at M0=4 {size:.4f} (0.052 +- 0.02)")


def test_criterion_3_model3_size_power(request, model3_table):
    size, power = model3_table.frequency(5), model3_table.frequency(6)
    ok = abs(size - 0.0365) <= 0.015 and abs(power - 0.745) <= 0.05
    _report(request, 3, ok, f"Model 3 size at M0=5 {size:.4f} (0.0365 +- 0.015), power at M0=6 {power:.4f} (0.745 +- 0.05)")


def test_criterion_4_model4_robustness(request, model3_table):
    size4 = run_size_power(ExperimentSpec(4, reps=2000, M0_grid=(5,))).frequency(5)
    size3 = model3_table.frequency(5)
    _report(request, 4, abs(size4 - size3) <= 0.02, f"Model 4 size at M0=5 {size4:.4f} vs Model 3 {size3:.4f} (within 0.02)")


def test_criterion_5_changepoint_accuracy(request):
    res = run_changepoint_benchmark(ExperimentSpec(5, p=50, T=1500, reps=100))
    outliers = set(outlier_positions(1500))
    never = all(d not in outliers for d in res.detections)
    ok = res.accuracy >= 0.90 and never and res.outlier_hits == 0
    _report(request, 5, ok, f"Model 5 accuracy {res.accuracy:.2f} (>= 0.90), outlier reported {res.outlier_hits} times (0)")


def test_criterion_6_null_normality(request):
    specs = {
        "T_fH": ExperimentSpec(1, p=200, reps=1000),
        "T_l": ExperimentSpec(3, p=200, n=1500, r=500, r1=400, reps=1000),
        "T_j": ExperimentSpec(5, p=200, reps=1000),
    }
    ks = {name: run_null_histogram(spec).ks_distance for name, spec in specs.items()}
    ok = all(v < 0.05 for v in ks.values())
    _report(request, 6, ok, "KS distances " + ", ".join(f"{k} {v:.4f}" for k, v in ks.items()) + " (< 0.05)")


def test_criterion_7_oracle_equivalence(request):
    worst = 0.0
    for c1, c2 in [(0.5, 0.2), (0.2, 0.5), (0.4, 0.5)]:
        for f in ("x", "log"):
            for moments in (MomentProfile.gaussian(), MomentProfile.gamma()):
                vals = [meanvar(f, c1, c2, SpectrumH.delta(), moments, m) for m in ("closed", "contour", "general")]
                for a in vals:
                    for b in vals:
                        worst = max(worst, abs(a.mu - b.mu) / max(abs(b.mu), 1e-12), abs(a.nu - b.nu) / b.nu)
    rng = np.random.default_rng(7)
    eig_err = 0.0
    for p in range(1, 51):
        a1, a2 = rng.standard_normal((p, p + 5)), rng.standard_normal((p, p + 5))
        s1, s2 = a1 @ a1.T / (p + 5), a2 @ a2.T / (p + 5)
        got = fisher_eigenvalues(s1, s2).eigenvalues
        brute = np.sort(np.linalg.eigvals(np.linalg.inv(s2) @ s1).real)[::-1]
        eig_err = max(eig_err, float(np.max(np.abs(got - brute) / np.maximum(np.abs(brute), 1.0))))
    ok = worst <= 1e-3 and eig_err <= 1e-9
    _report(request, 7, ok, f"worst cross-method relative gap {worst:.2e} (<= 1e-3), eigenvalue gap {eig_err:.2e} (<= 1e-9)")


def test_criterion_8_spike_map(request):
    p, reps = 400, 500
    sigma, H, _ = model_spikes(1, p)
    ratio = RatioProfile.from_ratios(p, 0.5, 0.2)
    top = []
    for k in range(reps):
        rng = np.random.default_rng([8, p, k])
        _, root = sigma.matrix_and_root(p, rng)
        x = root @ rng.standard_normal((p, ratio.n1))
        y = rng.standard_normal((p, ratio.n2))
        top.append(fisher_from_samples(x, y).eigenvalues[0])
    target = psi(10, 0.5, 0.2, H)
    gap = np.mean(top) / target - 1
    se = np.std(top, ddof=1) / np.sqrt(reps) / target
    _report(request, 8, abs(gap) <= 0.02, f"mean l1 {np.mean(top):.4f} vs 95/7 = {target:.4f}, relative gap {gap:+.4f} (se {se:.4f}, <= 0.02)")


def test_criterion_9_h2_forms(request):
    p, q, reps = 100, 200, 2000
    variances = {}
    for form in ("derived", "printed"):
        z = []
        for k in range(reps):
            X = np.random.default_rng([9, k]).standard_normal((p, 2 * q))
            z.append(window_statistic(X[:, :q], X[:, q:], h2_form=form).z_score)
        variances[form] = float(np.var(z, ddof=1))
    c = p / (q - 1)
    derived, printed = 2 * c - c * c, c * c
    differ = abs(printed - derived) / derived > 0.10
    in_band = {k: 0.85 < v < 1.15 for k, v in variances.items()}
    ok = in_band["derived"] and (not differ or not in_band["printed"])
    _report(
        request,
        9,
        ok,
        f"var T_j derived h2 {variances['derived']:.3f} (in 0.85..1.15), printed h2 {variances['printed']:.3f} "
        f"(outside band; forms differ by {abs(printed - derived) / derived:.0%})",
    )

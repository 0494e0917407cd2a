import numpy as np
import pytest

from spikefisher.model import SigmaSpec
from spikefisher.regress import (
    RegressionDesign,
    count_significant_variables,
    fit_mle,
    generate_regression,
    test_variable_count,
    wilks_modified,
)
from spikefisher.rmt import wachter_edges

MODEL3 = dict(p=40, n=300, r=100, r1=80)


def test_design_preconditions():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="n >= p \\+ r"):
        RegressionDesign(rng.standard_normal((10, 20)), rng.standard_normal((15, 20)), 5)
    W = rng.standard_normal((4, 50))
    W[3] = W[2]
    with pytest.raises(ValueError, match="rank"):
        RegressionDesign(rng.standard_normal((5, 50)), W, 2)


def test_noiseless_responses_are_degenerate():
    rng = np.random.default_rng(1)
    W = rng.standard_normal((4, 30))
    Z = rng.standard_normal((3, 4)) @ W
    with pytest.raises(ValueError, match="singular"):
        fit_mle(RegressionDesign(Z, W, 2))


def test_orthogonal_blocks_give_plain_gram():
    q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((40, 4)))
    W = 3 * q.T
    Z = np.random.default_rng(3).standard_normal((5, 40))
    f = fit_mle(RegressionDesign(Z, W, 2))
    assert np.allclose(f.A112, W[:2] @ W[:2].T, atol=1e-12)


def test_mle_coefficients_match_lstsq():
    d = generate_regression(6, 80, 5, 3, n_signal=2, seed=4)
    f = fit_mle(d)
    B, *_ = np.linalg.lstsq(d.W.T, d.Z.T, rcond=None)
    assert np.allclose(f.Bhat, B.T, atol=1e-10)
    resid = d.Z - f.Bhat @ d.W
    assert np.allclose(f.G, resid @ resid.T / (d.n - d.r), atol=1e-12)


def test_wilks_zero_numerator():
    d = generate_regression(5, 60, 4, 2, n_signal=0, seed=5)
    f = fit_mle(d)
    f0 = type(f)(np.zeros_like(f.H), f.G, f.A112, f.Bhat)
    val, eigs = wilks_modified(f0, 2, d.n, d.r)
    assert val == 0 and np.all(eigs.eigenvalues == 0)


def test_wilks_scalar_case():
    d = generate_regression(1, 30, 3, 2, n_signal=1, seed=6)
    f = fit_mle(d)
    val, _ = wilks_modified(f, 2, d.n, d.r)
    h, g = f.H[0, 0], f.G[0, 0]
    assert val == pytest.approx(np.log(1 + 2 / (d.n - d.r) * h / g), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_wilks_matches_brute_force_logdet(seed):
    d = generate_regression(5, 60, 6, 3, n_signal=2, seed=seed)
    f = fit_mle(d)
    kappa = 3 / (d.n - d.r)
    val, _ = wilks_modified(f, 3, d.n, d.r)
    brute = np.linalg.slogdet(np.eye(5) + kappa * f.H @ np.linalg.inv(f.G))[1]
    assert val == pytest.approx(brute, rel=1e-9)
    L = np.linalg.cholesky(f.G)
    Li = np.linalg.inv(L)
    chol = 2 * np.log(np.diag(np.linalg.cholesky(np.eye(5) + kappa * Li @ f.H @ Li.T))).sum()
    assert val == pytest.approx(chol, rel=1e-8)


def test_model3_instance_has_five_detached_eigenvalues():
    d = generate_regression(**MODEL3, seed=7)
    _, eigs = wilks_modified(fit_mle(d), d.r1, d.n, d.r)
    c1, c2 = d.ratios
    b = wachter_edges(c1, c2)[1]
    assert np.sum(eigs.eigenvalues > b + 0.5) == 5


def test_null_eigenvalues_inside_support():
    inside = 0
    for k in range(20):
        d = generate_regression(100, 1000, 300, 200, n_signal=0, seed=100 + k)
        _, eigs = wilks_modified(fit_mle(d), d.r1, d.n, d.r)
        a, b = wachter_edges(*d.ratios)
        inside += eigs.eigenvalues[0] <= b + 0.1 and eigs.eigenvalues[-1] >= a - 0.1
    assert inside == 20


def test_response_rescaling_invariance():
    d = generate_regression(**MODEL3, seed=8)
    A = np.random.default_rng(9).standard_normal((40, 40)) + 5 * np.eye(40)
    d2 = RegressionDesign(A @ d.Z, d.W, d.r1)
    for M0 in (4, 5, 6):
        assert test_variable_count(d, M0).z_score == pytest.approx(test_variable_count(d2, M0).z_score, abs=1e-8)


def test_centering_options():
    d = generate_regression(**MODEL3, seed=10)
    deflated = test_variable_count(d, 5)
    lsd = test_variable_count(d, 5, centering="lsd")
    assert deflated.statistic_raw == lsd.statistic_raw
    with pytest.raises(ValueError):
        test_variable_count(d, 5, centering="other")


def test_count_model3():
    counts = [count_significant_variables(generate_regression(**MODEL3, seed=1000 + k), M_max=8).count for k in range(100)]
    assert np.mean(np.array(counts) == 5) >= 0.9


def test_count_no_signal():
    res = [count_significant_variables(generate_regression(**MODEL3, n_signal=0, seed=2000 + k), M_max=8) for k in range(100)]
    assert np.mean([r.count == 0 and r.found for r in res]) >= 0.88


def test_count_exhausted_search():
    flags = [count_significant_variables(generate_regression(**MODEL3, seed=3000 + k), M_max=2).found for k in range(20)]
    assert not any(flags)
    with pytest.raises(ValueError):
        count_significant_variables(generate_regression(**MODEL3, seed=1), M_max=20)


def test_toeplitz_errors_supported():
    d = generate_regression(**MODEL3, error_cov=SigmaSpec.toeplitz(0.9), seed=11)
    rep = test_variable_count(d, 5)
    assert np.isfinite(rep.z_score)

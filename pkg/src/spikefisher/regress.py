"""Counting significant regression variables with a spiked Wilks-type statistic."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from .clt import meanvar_regression
from .functions import log1p_scaled
from .model import FisherEigs, SpectrumH, SigmaSpec, fisher_eigenvalues
from .rmt import centering_d1, psi
from .spiketest import TestReport, partial_lss, spikes_from_eigenvalues

UNIT = SpectrumH.delta()


@dataclass(frozen=True)
class RegressionDesign:
    """Responses ``Z`` (p x n), design ``W`` (r x n) and the split ``r1`` of ``B = (B1, B2)``."""

    Z: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    r1: int

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        W = np.asarray(self.W, dtype=float)
        if Z.ndim != 2 or W.ndim != 2:
            raise ValueError("Z and W must be matrices")
        if Z.shape[1] != W.shape[1]:
            raise ValueError(f"Z has {Z.shape[1]} observations but W has {W.shape[1]}")
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(W))):
            raise ValueError("Z and W must be finite")
        p, n = Z.shape
        r = W.shape[0]
        if n < p + r:
            raise ValueError(f"need n >= p + r, got n={n} < p + r = {p + r}")
        if not 1 <= self.r1 <= r:
            raise ValueError(f"r1 must lie in [1, r={r}]")
        sv = np.linalg.svd(W, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise ValueError("design matrix W is rank deficient")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "W", W)

    @property
    def p(self) -> int:
        return self.Z.shape[0]

    @property
    def n(self) -> int:
        return self.Z.shape[1]

    @property
    def r(self) -> int:
        return self.W.shape[0]

    @property
    def ratios(self) -> Tuple[float, float]:
        """``(c1, c2) = (p / r1, p / (n - r))``."""
        return self.p / self.r1, self.p / (self.n - self.r)


@dataclass(frozen=True)
class ManovaFactors:
    H: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    A112: np.ndarray = field(repr=False)
    Bhat: np.ndarray = field(repr=False)


def fit_mle(design: RegressionDesign) -> ManovaFactors:
    """Least-squares coefficients, residual covariance and the hypothesis matrix ``H``."""
    Z, W, r1 = design.Z, design.W, design.r1
    n, r = design.n, design.r
    gram = W @ W.T
    Bhat = scipy.linalg.solve(gram, W @ Z.T, assume_a="pos").T
    resid = Z - Bhat @ W
    V = resid @ resid.T / n
    G = n * V / (n - r)
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    # residuals at round-off level relative to Z count as degenerate
    zscale = np.sum(Z * Z) / n
    if ev[-1] <= 1e-20 * zscale or ev[0] <= 1e-12 * ev[-1]:
        raise ValueError("residual covariance is singular (degenerate residuals)")
    W1, W2 = W[:r1], W[r1:]
    A11 = W1 @ W1.T
    if r1 < r:
        A12 = W1 @ W2.T
        A22 = W2 @ W2.T
        A112 = A11 - A12 @ scipy.linalg.solve(A22, A12.T, assume_a="pos")
    else:
        A112 = A11
    A112 = 0.5 * (A112 + A112.T)
    B1 = Bhat[:, :r1]
    Hm = B1 @ A112 @ B1.T / r1
    return ManovaFactors(0.5 * (Hm + Hm.T), G, A112, Bhat)


def wilks_modified(factors: ManovaFactors, r1: int, n: int, r: int) -> Tuple[float, FisherEigs]:
    """``-log`` of the modified Wilks statistic and the eigenvalues of ``H G^{-1}``."""
    eigs = fisher_eigenvalues(factors.H, factors.G, r1, n - r)
    kappa = r1 / (n - r)
    return float(np.sum(np.log1p(kappa * eigs.eigenvalues))), eigs


CENTERINGS = ("deflated", "lsd")


def report_from_eigenvalues(eigs: FisherEigs, M0: int, alpha: float = 0.05, centering: str = "deflated") -> TestReport:
    """Test report for ``M = M0`` from the eigenvalues of ``H G^{-1}`` (``n1 = r1``, ``n2 = n - r``)."""
    if centering not in CENTERINGS:
        raise ValueError(f"centering must be one of {CENTERINGS}")
    p, r1, n2 = eigs.p, eigs.n1, eigs.n2
    c1, c2 = eigs.ratios.c_n1, eigs.ratios.c_n2
    g = log1p_scaled(c2 / c1)
    stat = partial_lss(eigs, M0, g)
    spikes = spikes_from_eigenvalues(eigs, M0, UNIT)
    d2 = sum(m * float(np.log1p(c2 / c1 * psi(a, c1, c2, UNIT))) for a, m in spikes.spikes)
    if centering == "lsd":
        d1 = centering_d1(g, c1, c2, UNIT.with_spikes(spikes, p), p)
    else:
        # Bulk of a problem with the detached spike directions and their
        # hypothesis degrees of freedom removed; the islands contribute d2.
        k = spikes.total
        pk, rk = p - k, r1 - k
        d1 = d2 + centering_d1(log1p_scaled(rk / n2), pk / rk, pk / n2, UNIT, pk)
    mv = meanvar_regression(c1, c2)
    return TestReport.build(stat, d1, d2, mv.mu, mv.nu, alpha, M0, spikes=spikes.spikes, centering=centering)


def test_variable_count(design: RegressionDesign, M0: int, alpha: float = 0.05, centering: str = "deflated") -> TestReport:
    """Test that exactly ``M0`` columns of ``B1`` are nonzero.

    ``centering="deflated"`` centers the bulk as the same problem in dimension
    ``p - k`` with ``r1 - k`` hypothesis degrees of freedom, ``k`` being the number
    of top eigenvalues above the bulk edge.  ``"lsd"`` uses ``p`` times the
    integral against the limiting law with the spikes as atoms of ``H_n``.
    """
    if not 0 <= M0 < min(design.p, design.r1) / 2:
        raise ValueError("M0 must satisfy 0 <= M0 < min(p, r1)/2")
    factors = fit_mle(design)
    _, eigs = wilks_modified(factors, design.r1, design.n, design.r)
    return report_from_eigenvalues(eigs, M0, alpha, centering)


test_variable_count.__test__ = False


@dataclass(frozen=True)
class VariableCount:
    count: int
    found: bool
    reports: List[TestReport] = field(compare=False, repr=False)


def count_significant_variables(
    design: RegressionDesign, alpha: float = 0.05, M_max: int = 10, centering: str = "deflated"
) -> VariableCount:
    """First accepted ``M0`` scanning ``0, 1, ..., M_max``."""
    if not 0 <= M_max < min(design.p, design.r1) / 2:
        raise ValueError("M_max must satisfy 0 <= M_max < min(p, r1)/2")
    factors = fit_mle(design)
    _, eigs = wilks_modified(factors, design.r1, design.n, design.r)
    reports = []
    for M0 in range(M_max + 1):
        rep = report_from_eigenvalues(eigs, M0, alpha, centering)
        reports.append(rep)
        if not rep.rejected:
            return VariableCount(M0, True, reports)
    return VariableCount(M_max, False, reports)


def generate_regression(
    p: int,
    n: int,
    r: int,
    r1: int,
    n_signal: int = 5,
    error_cov: Optional[SigmaSpec] = None,
    seed=None,
) -> RegressionDesign:
    """Gaussian design and errors; the first ``n_signal`` columns of ``B1`` are N(0, 1), the rest zero."""
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((r, n))
    B = np.zeros((p, r))
    B[:, :n_signal] = rng.standard_normal((p, n_signal))
    E = rng.standard_normal((p, n))
    if error_cov is not None and error_cov.kind != "identity":
        _, root = error_cov.matrix_and_root(p, rng)
        E = root @ E
    return RegressionDesign(B @ W + E, W, r1)

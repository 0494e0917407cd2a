"""Test of ``H0: M = M0`` spikes from Fisher eigenvalues, and sequential estimation of ``M``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import stats

from .clt import meanvar
from .functions import as_spectral_function
from .model import FisherEigs, MomentProfile, SpectrumH, SpikeConfig
from .rmt import centering_d1, psi, psi_critical, psi_inverse


@dataclass(frozen=True)
class TestReport:
    statistic_raw: float
    d1: float
    d2: float
    mu: float
    nu: float
    z_score: float
    p_value: float
    decision: str
    alpha: float
    M0: int
    details: dict = field(default_factory=dict, compare=False, repr=False)

    __test__ = False  # not a pytest class

    @classmethod
    def build(cls, statistic_raw, d1, d2, mu, nu, alpha, M0, **details) -> "TestReport":
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not nu > 0:
            raise ValueError("variance must be positive")
        z = (statistic_raw - d1 + d2 - mu) / np.sqrt(nu)
        pval = float(2 * stats.norm.sf(abs(z)))
        decision = "reject" if pval < alpha else "accept"
        return cls(float(statistic_raw), float(d1), float(d2), float(mu), float(nu), float(z), pval, decision, float(alpha), int(M0), details)

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"

    def as_dict(self) -> dict:
        return {
            "statistic_raw": self.statistic_raw,
            "d1": self.d1,
            "d2": self.d2,
            "mu": self.mu,
            "nu": self.nu,
            "z_score": self.z_score,
            "p_value": self.p_value,
            "decision": self.decision,
            "alpha": self.alpha,
            "M0": self.M0,
        }


def partial_lss(eigs: FisherEigs, M0: int, f) -> float:
    """``sum_{j > M0} f(l_j)``: the linear spectral statistic without the top ``M0`` eigenvalues."""
    f = as_spectral_function(f)
    if not 0 <= M0 < eigs.p:
        raise ValueError(f"M0 must lie in [0, p), got {M0}")
    rest = eigs.eigenvalues[M0:]
    f.check_domain(rest)
    return float(np.sum(f(rest)))


def spikes_from_eigenvalues(eigs: FisherEigs, M0: int, H: SpectrumH) -> SpikeConfig:
    """Population spikes whose images under ``psi`` are the top ``M0`` eigenvalues.

    Eigenvalues at or below the edge ``psi(alpha*)`` have no spike preimage and
    are left out, so the result may hold fewer than ``M0`` spikes.
    """
    if M0 == 0:
        return SpikeConfig.empty()
    r = eigs.ratios
    _, edge = psi_critical(r.c_n1, r.c_n2, H)
    alphas = [psi_inverse(l, r.c_n1, r.c_n2, H) for l in eigs.eigenvalues[:M0] if l > edge]
    return SpikeConfig.from_values(alphas) if alphas else SpikeConfig.empty()


def test_spike_count(
    eigs: FisherEigs,
    M0: int,
    f,
    spikes_hypothesis: Optional[SpikeConfig],
    H: SpectrumH,
    moments: MomentProfile = MomentProfile(),
    alpha: float = 0.05,
    method: str = "auto",
) -> TestReport:
    """Standardized partial linear spectral statistic under ``M = M0``.

    ``spikes_hypothesis=None`` estimates the spikes by inverting ``psi`` at the
    top ``M0`` eigenvalues lying above the bulk edge.  ``H`` is the limiting bulk spectrum; the finite
    ``p`` centering uses the bulk counts plus the hypothesized spikes.
    """
    f = as_spectral_function(f)
    r = eigs.ratios
    p = eigs.p
    if spikes_hypothesis is None:
        spikes_hypothesis = spikes_from_eigenvalues(eigs, M0, H)
    elif spikes_hypothesis.total != M0:
        raise ValueError(f"hypothesized spikes have total multiplicity {spikes_hypothesis.total}, expected M0={M0}")
    stat = partial_lss(eigs, M0, f)
    Hn = H.with_spikes(spikes_hypothesis, p)
    d1 = centering_d1(f, r.c_n1, r.c_n2, Hn, p)
    d2 = 0.0
    for a, m in spikes_hypothesis.spikes:
        d2 += m * float(f(np.array([psi(a, r.c_n1, r.c_n2, H)]))[0])
    mv = meanvar(f, r.c_n1, r.c_n2, H, moments, method)
    return TestReport.build(stat, d1, d2, mv.mu, mv.nu, alpha, M0, method=mv.method, spikes=spikes_hypothesis.spikes)


test_spike_count.__test__ = False


@dataclass(frozen=True)
class SpikeCountEstimate:
    count: int
    found: bool
    reports: List[TestReport] = field(compare=False, repr=False)


def estimate_spike_count(
    eigs: FisherEigs,
    f,
    H: SpectrumH,
    moments: MomentProfile = MomentProfile(),
    alpha: float = 0.05,
    M_max: int = 10,
    method: str = "auto",
) -> SpikeCountEstimate:
    """Smallest ``M0`` in ``0..M_max`` accepted by the test; ``found=False`` if none is."""
    if not 0 <= M_max < eigs.p / 2:
        raise ValueError("M_max must satisfy 0 <= M_max < p/2")
    reports = []
    for M0 in range(M_max + 1):
        rep = test_spike_count(eigs, M0, f, None, H, moments, alpha, method)
        reports.append(rep)
        if not rep.rejected:
            return SpikeCountEstimate(M0, True, reports)
    return SpikeCountEstimate(M_max, False, reports)

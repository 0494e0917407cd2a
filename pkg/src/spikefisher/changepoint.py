"""Sliding-window change-point detection with the trace statistic of a two-group Fisher matrix."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
from scipy import stats

from .clt import meanvar_x_delta1
from .model import MomentProfile, SINGULAR_RATIO, SingularCovarianceError, estimate_beta
from .spiketest import TestReport

H2_FORMS = ("derived", "printed")
TAILS = ("upper", "two-sided")


@dataclass(frozen=True)
class WindowPlan:
    """Group-1 length ``q11``, initial group-2 length ``q12``, run length ``s`` and per-window level."""

    q11: int
    q12: int
    s: int = 20
    alpha: float = 0.0005

    def __post_init__(self):
        if self.q12 < 2:
            raise ValueError("q12 must be at least 2")
        if self.s < 2:
            raise ValueError("s must be at least 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @classmethod
    def default(cls, p: int, alpha: float = 0.0005) -> "WindowPlan":
        """``q11 = q12 = 2p`` and ``s = 20``."""
        return cls(2 * p, 2 * p, 20, alpha)

    def check(self, p: int, T: Optional[int] = None) -> None:
        if self.q11 <= p:
            raise ValueError(f"need q11 > p for an invertible group-1 covariance, got q11={self.q11}, p={p}")
        if T is not None and T < self.q11 + self.q12 + self.s:
            raise ValueError(f"sequence of length {T} is shorter than q11 + q12 + s = {self.q11 + self.q12 + self.s}")


@dataclass
class DetectionState:
    """Anomaly set ``T`` (0-based time indices in order of entry) and the detected change point."""

    anomaly_set: List[int] = field(default_factory=list)
    window_index: int = 0
    removed_indices: set = field(default_factory=set)
    change_point: Optional[int] = None
    z_scores: List[float] = field(default_factory=list, repr=False)
    group2_sizes: List[int] = field(default_factory=list, repr=False)

    @property
    def detected(self) -> bool:
        return self.change_point is not None


def _critical(alpha: float, tail: str) -> float:
    return float(stats.norm.isf(alpha if tail == "upper" else alpha / 2))


def window_statistic(
    group1,
    group2,
    q: int = 1,
    alpha: float = 0.0005,
    demean: bool = True,
    h2_form: str = "derived",
    estimate_moments: bool = True,
) -> TestReport:
    """Standardized ``tr(S1^{-1} S2)`` for two groups of columns (``p x q_j1`` and ``p x q_j2``).

    ``demean=True`` uses unbiased covariances, and the ratios use the effective
    sizes ``q_j - 1``. Groups with fewer than 4 columns get the Gaussian ``beta = 0``. ``h2_form="printed"`` replaces ``c1 + c2 - c1 c2`` by
    ``c1^2 + c2^2 - c1 c2`` in the variance.
    """
    if h2_form not in H2_FORMS:
        raise ValueError(f"h2_form must be one of {H2_FORMS}")
    x1 = np.atleast_2d(np.asarray(group1, dtype=float))
    x2 = np.atleast_2d(np.asarray(group2, dtype=float))
    if x1.shape[0] != x2.shape[0]:
        raise ValueError("groups must have the same dimension")
    p = x1.shape[0]
    if demean:
        x1 = x1 - x1.mean(axis=1, keepdims=True)
        x2 = x2 - x2.mean(axis=1, keepdims=True)
    n1 = x1.shape[1] - int(demean)
    n2 = x2.shape[1] - int(demean)
    if n1 <= p:
        raise ValueError(f"group 1 needs more than p={p} effective observations, got {n1}")
    if n2 < 1:
        raise ValueError("group 2 needs at least one effective observation")
    s1 = x1 @ x1.T / n1
    try:
        chol = scipy.linalg.cholesky(s1, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(0.0) from exc
    diag = np.abs(np.diag(chol))
    if diag.min() <= np.sqrt(SINGULAR_RATIO) * diag.max():
        raise SingularCovarianceError(float((diag.min() / diag.max()) ** 2))
    w = scipy.linalg.solve_triangular(chol, x2, lower=True)
    trace = float(np.sum(w * w)) / n2
    c_den, c_num = p / n1, p / n2
    if estimate_moments:
        moments = MomentProfile(q, _beta(group2, q), _beta(group1, q))
    else:
        moments = MomentProfile(q)
    mv = meanvar_x_delta1(c_num, c_den, moments)
    nu = mv.nu
    if h2_form == "printed":
        nu += (q + 1) * (c_den**2 + c_num**2 - c_den * c_num - (c_den + c_num - c_den * c_num)) / (1 - c_den) ** 4
    d = p / (1 - c_den)
    rep = TestReport.build(trace, d, 0.0, mv.mu, nu, alpha, 0, c1=c_den, c2=c_num)
    return rep


def _beta(group, q: int) -> float:
    """Fourth-cumulant estimate; Gaussian value 0 when the group is too small to estimate it."""
    if np.shape(group)[1] < 4:
        return 0.0
    return max(estimate_beta(group, q), -2.0)


def _run_length_start(sorted_set: List[int], s: int) -> Optional[int]:
    run = 1
    for i in range(1, len(sorted_set)):
        run = run + 1 if sorted_set[i] == sorted_set[i - 1] + 1 else 1
        if run >= s:
            return sorted_set[i - s + 1]
    return None


def detect_change_point(
    X,
    plan: WindowPlan,
    calibration: Optional[float] = None,
    q: int = 1,
    demean: bool = True,
    h2_form: str = "derived",
    estimate_moments: bool = True,
    tail: str = "two-sided",
) -> DetectionState:
    """Slide a window over the columns of ``X`` (``p x T``) and return the first change point.

    A window rejects when ``|T_j|`` (``T_j`` for ``tail="upper"``) exceeds the
    normal critical value at ``plan.alpha``, or ``calibration`` when given. On
    rejection the newest sample is dropped from all later windows and its index
    joins the anomaly set. The
    change point is the first index of the first run of ``s`` consecutive
    indices in the set.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a p x T matrix")
    p, T = X.shape
    plan.check(p, T)
    if tail not in TAILS:
        raise ValueError(f"tail must be one of {TAILS}")
    crit = _critical(plan.alpha, tail) if calibration is None else float(calibration)
    state = DetectionState()
    window = deque(range(plan.q11 + plan.q12))
    nxt = plan.q11 + plan.q12
    members = set()
    while True:
        idx = list(window)
        g1, g2 = idx[: plan.q11], idx[plan.q11:]
        if len(g2) < 2:
            break
        rep = window_statistic(X[:, g1], X[:, g2], q, plan.alpha, demean, h2_form, estimate_moments)
        state.window_index += 1
        state.z_scores.append(rep.z_score)
        state.group2_sizes.append(len(g2))
        if (rep.z_score if tail == "upper" else abs(rep.z_score)) > crit:
            t0 = window.pop()
            state.removed_indices.add(t0)
            state.anomaly_set.append(t0)
            members.add(t0)
            # newest indices always arrive in increasing order
            start = _run_length_start(sorted(members)[-plan.s:], plan.s) if len(members) >= plan.s else None
            if start is not None:
                state.change_point = start
                break
        if nxt >= T:
            break
        window.popleft()
        window.append(nxt)
        nxt += 1
    assert all(a >= b for a, b in zip(state.group2_sizes, state.group2_sizes[1:]))
    return state


def reference_z_scores(X_reference, plan: WindowPlan, q: int = 1, demean: bool = True, estimate_moments: bool = True) -> np.ndarray:
    """``T_j`` over every window of an anomaly-free sequence, without removals."""
    X = np.asarray(X_reference, dtype=float)
    if X.ndim != 2:
        raise ValueError("reference must be a p x T matrix")
    p, T = X.shape
    plan.check(p)
    width = plan.q11 + plan.q12
    count = T - width + 1
    if count < 100:
        raise ValueError(f"reference yields {max(count, 0)} windows; at least 100 are needed")
    z = np.empty(count)
    for j in range(count):
        z[j] = window_statistic(
            X[:, j : j + plan.q11], X[:, j + plan.q11 : j + width], q, plan.alpha, demean, "derived", estimate_moments
        ).z_score
    return z


def calibrate_threshold(X_reference, plan: WindowPlan, level: float = 0.95, **kwargs) -> float:
    """Empirical ``level`` quantile of ``|T_j|`` over the windows of a reference sequence."""
    X = np.asarray(X_reference, dtype=float)
    if X.ndim == 2 and X.shape[1] > 1 and np.all(np.ptp(X, axis=1) == 0):
        raise ValueError("reference sequence has zero variance")
    z = reference_z_scores(X, plan, **kwargs)
    return float(np.quantile(np.abs(z), level))

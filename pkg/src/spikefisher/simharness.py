"""Monte-Carlo driver for the simulation models: size/power tables, null histograms, change-point accuracy."""
from __future__ import annotations

import csv
import json
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy
from scipy import stats

from . import __version__
from .changepoint import WindowPlan, detect_change_point, window_statistic
from .model import (
    MomentProfile,
    RatioProfile,
    SigmaSpec,
    SpectrumH,
    draw_entries,
    fisher_from_samples,
)
from .regress import fit_mle, generate_regression, report_from_eigenvalues, wilks_modified
from .spiketest import test_spike_count

SPIKE_MODELS = (1, 2)
REGRESSION_MODELS = (3, 4)
CHANGEPOINT_MODELS = (5, 6)
MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class ExperimentSpec:
    """One simulation scenario.

    Unset fields take the model defaults: Models 1 and 2 use ``p = 100`` and
    ``M0 = 1..6``; Models 3 and 4 use ``(p, n, r, r1) = (40, 300, 100, 80)``;
    Models 5 and 6 use ``p = 50``, ``T = 6000``, ``s = 20``, ``alpha = 0.0005``.
    """

    model: int
    population: str = "gaussian"
    p: Optional[int] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    n: Optional[int] = None
    r: Optional[int] = None
    r1: Optional[int] = None
    M0_grid: Tuple[int, ...] = ()
    reps: int = 1000
    seed: int = 0
    alpha: Optional[float] = None
    f: str = "log"
    method: str = "auto"
    rho: Optional[float] = None
    T: Optional[int] = None
    s: int = 20
    q11: Optional[int] = None
    q12: Optional[int] = None
    tolerance: Optional[int] = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.model not in range(1, 7):
            raise ValueError("model must be one of 1..6")
        if self.population not in ("gaussian", "gamma"):
            raise ValueError("population must be 'gaussian' or 'gamma'")
        if self.reps < 1:
            raise ValueError("replication count must be at least 1")
        defaults = _DEFAULTS[self.model]
        for key, value in defaults.items():
            if getattr(self, key) in (None, ()):
                object.__setattr__(self, key, value)
        object.__setattr__(self, "M0_grid", tuple(int(m) for m in self.M0_grid))
        if self.model in SPIKE_MODELS:
            RatioProfile.from_ratios(self.p, self.c1, self.c2)
        if self.model in REGRESSION_MODELS and self.n < self.p + self.r:
            raise ValueError("need n >= p + r")

    @classmethod
    def from_mapping(cls, mapping: Dict[str, str], base: Optional["ExperimentSpec"] = None) -> "ExperimentSpec":
        """Build from string values, as read from a flat ``key = value`` file.

        Keys absent from ``mapping`` come from ``base`` when given.
        """
        kwargs = {k: getattr(base, k) for k in _FIELD_TYPES} if base is not None else {}
        for key, raw in mapping.items():
            if key not in _FIELD_TYPES:
                raise ValueError(f"unknown experiment key {key!r}")
            kind = _FIELD_TYPES[key]
            try:
                if kind is tuple:
                    kwargs[key] = tuple(int(v) for v in str(raw).replace(",", " ").split())
                else:
                    kwargs[key] = kind(raw)
            except ValueError:
                raise ValueError(f"invalid value {raw!r} for {key}") from None
        if "model" not in kwargs:
            raise ValueError("experiment spec needs a model")
        return cls(**kwargs)

    @property
    def scenario(self) -> str:
        if self.model in SPIKE_MODELS:
            return f"model{self.model} p={self.p} c1={self.c1:g} c2={self.c2:g} {self.population}"
        if self.model in REGRESSION_MODELS:
            return f"model{self.model} p={self.p} n={self.n} r={self.r} r1={self.r1}"
        return f"model{self.model} p={self.p} T={self.T} rho={self.rho:g}"

    def rng(self, k: int) -> np.random.Generator:
        """Generator of replication ``k``, independent of execution order."""
        return np.random.default_rng([self.seed, self.model, k])


_DEFAULTS = {
    1: dict(p=100, c1=0.5, c2=0.2, M0_grid=(1, 2, 3, 4, 5, 6), alpha=0.05),
    2: dict(p=100, c1=0.2, c2=0.5, M0_grid=(1, 2, 3, 4, 5, 6), alpha=0.05),
    3: dict(p=40, n=300, r=100, r1=80, M0_grid=(1, 2, 3, 4, 5, 6), alpha=0.05),
    4: dict(p=40, n=300, r=100, r1=80, M0_grid=(1, 2, 3, 4, 5, 6), alpha=0.05, rho=0.9),
    5: dict(p=50, T=6000, rho=20.0, alpha=0.0005),
    6: dict(p=50, T=6000, rho=9.0, alpha=0.0005),
}

_FIELD_TYPES = {
    "model": int, "population": str, "p": int, "c1": float, "c2": float, "n": int, "r": int, "r1": int,
    "M0_grid": tuple, "reps": int, "seed": int, "alpha": float, "f": str, "method": str, "rho": float,
    "T": int, "s": int, "q11": int, "q12": int, "tolerance": int, "n_jobs": int,
}

PROFILES = {
    "table1-small": ExperimentSpec(1, p=100, reps=200),
    "table2-small": ExperimentSpec(2, p=100, reps=200),
    "table3-small": ExperimentSpec(3, reps=400),
    "table4-small": ExperimentSpec(4, reps=400),
    "changepoint-small": ExperimentSpec(5, T=1500, reps=20),
}


# Model generators ------------------------------------------------------------

def model_spikes(model: int, p: int) -> Tuple[SigmaSpec, SpectrumH, int]:
    """Population recipe, bulk spectrum and true spike count of Models 1 and 2."""
    if model == 1:
        return SigmaSpec.conjugated([10, 8, 8, 6] + [1] * (p - 4)), SpectrumH.delta(), 4
    if model == 2:
        if p % 2 or p < 10:
            raise ValueError("Model 2 needs an even p >= 10")
        vals = [36, 25, 25, 16] + [2] * (p // 2 - 4) + [1] * (p // 2)
        return SigmaSpec.diagonal(vals), SpectrumH.from_weights([1, 2], [0.5, 0.5]), 4
    raise ValueError("spike models are 1 and 2")


def outlier_positions(T: int) -> Tuple[int, int]:
    """0-based positions of the two additive outliers, at 2001 and 2002 of 6000 when scaled."""
    t = int(round(2000 * T / 6000))
    return t, t + 1


def change_index(T: int) -> int:
    """0-based index of the first post-change observation."""
    return (2 * T) // 3


def generate_model5(p: int, T: int, rho1: float, rng, outliers: bool = True) -> np.ndarray:
    """``N(0.6 * 1, I)`` then ``N(0.6 * 1, rho1 I)`` after ``floor(2T/3)``; returns ``p x T``."""
    rng = np.random.default_rng(rng)
    X = rng.standard_normal((p, T))
    tc = change_index(T)
    X[:, tc:] *= np.sqrt(rho1)
    X += 0.6
    if outliers:
        X[:, list(outlier_positions(T))] = 20.0
    return X


def generate_model6(p: int, T: int, rho2: float, rng, outliers: bool = True) -> np.ndarray:
    """Five-factor data with error covariance ``I`` then ``rho2 * 0.8^|i-j|``; returns ``p x T``."""
    rng = np.random.default_rng(rng)
    A = rng.uniform(0.5, 1.5, size=(p, 5))
    X = A @ rng.standard_normal((5, T))
    tc = change_index(T)
    X[:, :tc] += rng.standard_normal((p, tc))
    idx = np.arange(p)
    root = np.linalg.cholesky(rho2 * 0.8 ** np.abs(idx[:, None] - idx[None, :]))
    X[:, tc:] += root @ rng.standard_normal((p, T - tc))
    if outliers:
        X[:, list(outlier_positions(T))] = 20.0
    return X


def generate_changepoint(spec: ExperimentSpec, rng, outliers: bool = True) -> np.ndarray:
    if spec.model == 5:
        return generate_model5(spec.p, spec.T, spec.rho, rng, outliers)
    if spec.model == 6:
        return generate_model6(spec.p, spec.T, spec.rho, rng, outliers)
    raise ValueError("change-point models are 5 and 6")


def _plan(spec: ExperimentSpec) -> WindowPlan:
    return WindowPlan(spec.q11 or 2 * spec.p, spec.q12 or 2 * spec.p, spec.s, spec.alpha)


# Replications ------------------------------------------------------------------

def _moments(spec: ExperimentSpec) -> MomentProfile:
    return MomentProfile.gamma() if spec.population == "gamma" else MomentProfile.gaussian()


def _reports(spec: ExperimentSpec, k: int, grid) -> Dict[int, "object"]:
    rng = spec.rng(k)
    if spec.model in SPIKE_MODELS:
        sigma, H, _ = model_spikes(spec.model, spec.p)
        ratio = RatioProfile.from_ratios(spec.p, spec.c1, spec.c2)
        x, y = _two_sample(sigma, ratio, spec.population, rng)
        eigs = fisher_from_samples(x, y)
        return {m: test_spike_count(eigs, m, spec.f, None, H, _moments(spec), spec.alpha, spec.method) for m in grid}
    if spec.model in REGRESSION_MODELS:
        cov = SigmaSpec.toeplitz(spec.rho) if spec.model == 4 else None
        design = generate_regression(spec.p, spec.n, spec.r, spec.r1, error_cov=cov, seed=rng)
        _, eigs = wilks_modified(fit_mle(design), spec.r1, spec.n, spec.r)
        return {m: report_from_eigenvalues(eigs, m, spec.alpha) for m in grid}
    raise ValueError("size/power tables cover Models 1 to 4")


def _two_sample(sigma: SigmaSpec, ratio: RatioProfile, population: str, rng):
    _, root = sigma.matrix_and_root(ratio.p, rng)
    x = root @ draw_entries((ratio.p, ratio.n1), population, rng)
    y = draw_entries((ratio.p, ratio.n2), population, rng)
    return x, y


def _rejections(args) -> Optional[Tuple[int, ...]]:
    spec, k = args
    try:
        reps = _reports(spec, k, spec.M0_grid)
    except (ValueError, np.linalg.LinAlgError, ArithmeticError):
        return None
    return tuple(int(reps[m].rejected) for m in spec.M0_grid)


def _null_z(args) -> Optional[float]:
    spec, k = args
    try:
        if spec.model in CHANGEPOINT_MODELS:
            rng = spec.rng(k)
            plan = _plan(spec)
            if spec.model == 5:
                X = rng.standard_normal((spec.p, plan.q11 + plan.q12)) + 0.6
            else:
                A = rng.uniform(0.5, 1.5, size=(spec.p, 5))
                X = A @ rng.standard_normal((5, plan.q11 + plan.q12)) + rng.standard_normal((spec.p, plan.q11 + plan.q12))
            return window_statistic(X[:, : plan.q11], X[:, plan.q11 :], alpha=spec.alpha).z_score
        m = true_count(spec)
        return _reports(spec, k, (m,))[m].z_score
    except (ValueError, np.linalg.LinAlgError, ArithmeticError):
        return None


def _map(func, spec: ExperimentSpec, count: int) -> list:
    args = [(spec, k) for k in range(count)]
    if spec.n_jobs > 1:
        with ProcessPoolExecutor(spec.n_jobs) as pool:
            return list(pool.map(func, args, chunksize=max(1, count // (8 * spec.n_jobs))))
    return [func(a) for a in args]


def _check_failures(failures: int, total: int) -> None:
    if failures > MAX_FAILURE_RATE * total:
        raise RuntimeError(f"{failures} of {total} replications failed")


def true_count(spec: ExperimentSpec) -> int:
    if spec.model in SPIKE_MODELS:
        return model_spikes(spec.model, spec.p)[2]
    if spec.model in REGRESSION_MODELS:
        return 5
    return 0


# Size and power ----------------------------------------------------------------

@dataclass(frozen=True)
class SizePowerRow:
    scenario: str
    M0: int
    frequency: float
    std_error: float
    replications: int


@dataclass(frozen=True)
class SizePowerTable:
    rows: Tuple[SizePowerRow, ...]
    failures: int = 0

    def frequency(self, M0: int, scenario: Optional[str] = None) -> float:
        for row in self.rows:
            if row.M0 == M0 and (scenario is None or row.scenario == scenario):
                return row.frequency
        raise KeyError(M0)

    def as_dict(self) -> Dict[int, float]:
        return {row.M0: row.frequency for row in self.rows}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "M0", "frequency", "std_error", "replications"])
            for row in self.rows:
                w.writerow([row.scenario, row.M0, repr(row.frequency), repr(row.std_error), row.replications])


def run_size_power(spec: ExperimentSpec) -> SizePowerTable:
    """Rejection frequency of the test at each ``M0`` of the grid over ``spec.reps`` replications."""
    if spec.model not in SPIKE_MODELS + REGRESSION_MODELS:
        raise ValueError("size/power tables cover Models 1 to 4")
    results = _map(_rejections, spec, spec.reps)
    ok = [r for r in results if r is not None]
    failures = len(results) - len(ok)
    _check_failures(failures, len(results))
    counts = np.sum(np.array(ok, dtype=int), axis=0) if ok else np.zeros(len(spec.M0_grid), dtype=int)
    N = len(ok)
    rows = []
    for m, c in zip(spec.M0_grid, counts):
        f = float(c) / N
        rows.append(SizePowerRow(spec.scenario, m, f, float(np.sqrt(f * (1 - f) / N)), N))
    return SizePowerTable(tuple(rows), failures)


# Null histograms ---------------------------------------------------------------

@dataclass(frozen=True)
class NullHistogram:
    edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    normal_density: np.ndarray = field(repr=False)
    z_scores: np.ndarray = field(repr=False)
    ks_distance: float = 0.0
    failures: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["left", "right", "count", "density", "normal_density"])
            width = np.diff(self.edges)
            dens = self.counts / max(1, self.counts.sum()) / width
            for i in range(len(self.counts)):
                w.writerow([repr(float(self.edges[i])), repr(float(self.edges[i + 1])), int(self.counts[i]), repr(float(dens[i])), repr(float(self.normal_density[i]))])


def run_null_histogram(spec: ExperimentSpec, bins: int = 40, limits: Tuple[float, float] = (-4.0, 4.0)) -> NullHistogram:
    """Null z-scores binned over ``limits``, with the standard normal density at bin centres.

    Models 1 to 4 use the test at the true count; Models 5 and 6 use ``T_j`` on a
    single change-free window.
    """
    results = _map(_null_z, spec, spec.reps)
    z = np.array([v for v in results if v is not None])
    failures = len(results) - len(z)
    _check_failures(failures, len(results))
    counts, edges = np.histogram(z, bins=bins, range=limits)
    centres = 0.5 * (edges[1:] + edges[:-1])
    ks = float(stats.kstest(z, "norm").statistic) if len(z) else float("nan")
    return NullHistogram(edges, counts, stats.norm.pdf(centres), z, ks, failures)


# Change-point benchmark --------------------------------------------------------

@dataclass(frozen=True)
class ChangePointBenchmark:
    scenario: str
    accuracy: float
    detections: Tuple[Optional[int], ...]
    outlier_hits: int
    truth: int
    tolerance: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "detected", "truth", "correct"])
            for k, d in enumerate(self.detections):
                w.writerow([k, "" if d is None else d, self.truth, int(d is not None and abs(d - self.truth) <= self.tolerance)])


def _detect(args) -> Optional[int]:
    spec, k = args
    X = generate_changepoint(spec, spec.rng(k))
    return detect_change_point(X, _plan(spec)).change_point


def run_changepoint_benchmark(spec: ExperimentSpec) -> ChangePointBenchmark:
    """Fraction of runs whose detected change lies within ``tolerance`` (default ``s``) of ``floor(2T/3)``."""
    if spec.model not in CHANGEPOINT_MODELS:
        raise ValueError("change-point benchmark covers Models 5 and 6")
    _plan(spec).check(spec.p, spec.T)
    truth = change_index(spec.T)
    tol = spec.s if spec.tolerance is None else spec.tolerance
    found = _map(_detect, spec, spec.reps)
    correct = sum(d is not None and abs(d - truth) <= tol for d in found)
    outs = set(outlier_positions(spec.T))
    hits = sum(d in outs for d in found)
    return ChangePointBenchmark(spec.scenario, correct / spec.reps, tuple(found), hits, truth, tol)


# Manifests ---------------------------------------------------------------------

def manifest(spec: ExperimentSpec, **extra) -> dict:
    """Run description: spec, seed and library versions."""
    out = {
        "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()},
        "versions": {"spikefisher": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
    }
    out.update(extra)
    return out


def write_manifest(path, spec: ExperimentSpec, **extra) -> None:
    with open(path, "w") as fh:
        json.dump(manifest(spec, **extra), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_reps(spec: ExperimentSpec, reps: int) -> ExperimentSpec:
    return replace(spec, reps=reps)

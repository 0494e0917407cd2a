"""Population and sample model types; Fisher matrices from raw data."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

SINGULAR_RATIO = 1e-12


class SingularCovarianceError(np.linalg.LinAlgError):
    """The denominator covariance of a Fisher pencil is numerically singular."""

    def __init__(self, ratio: float):
        self.ratio = ratio
        super().__init__(
            f"denominator covariance is singular: smallest/largest eigenvalue "
            f"ratio {ratio:.3e} < {SINGULAR_RATIO:g} (condition estimate "
            f"{1.0 / ratio if ratio > 0 else np.inf:.3e})"
        )


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumH:
    """Population spectral distribution as weighted atoms ``(t_i, w_i)``."""

    atoms: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(t), float(w)) for t, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ValueError("SpectrumH needs at least one atom")
        t = np.array([a[0] for a in atoms])
        w = np.array([a[1] for a in atoms])
        if np.any(t <= 0) or not np.all(np.isfinite(t)):
            raise ValueError("atom locations must be positive and finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("atom locations must be strictly increasing")
        if np.any(w <= 0) or np.any(w > 1):
            raise ValueError("atom weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom weights sum to {w.sum()!r}, not 1")

    @classmethod
    def delta(cls, t: float = 1.0) -> "SpectrumH":
        return cls(((t, 1.0),))

    @classmethod
    def from_eigenvalues(cls, values: Sequence[float], decimals: int = 12) -> "SpectrumH":
        """Empirical spectral distribution of a list of population eigenvalues."""
        values = np.round(np.asarray(values, dtype=float), decimals)
        t, counts = np.unique(values, return_counts=True)
        w = counts / counts.sum()
        w[-1] = 1.0 - w[:-1].sum()
        return cls(tuple(zip(t, w)))

    @classmethod
    def from_weights(cls, locations, weights) -> "SpectrumH":
        locations = np.asarray(locations, dtype=float)
        weights = np.asarray(weights, dtype=float)
        order = np.argsort(locations)
        locations, weights = locations[order], weights[order]
        weights = weights / weights.sum()
        return cls(tuple(zip(locations, weights)))

    @property
    def locations(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms])

    @property
    def is_unit_delta(self) -> bool:
        return len(self.atoms) == 1 and self.atoms[0][0] == 1.0

    def mean(self) -> float:
        return float(self.locations @ self.weights)

    def bulk_counts(self, p: int) -> np.ndarray:
        """Integer multiplicities of the atoms among ``p`` coordinates (largest remainder)."""
        raw = self.weights * p
        counts = np.floor(raw).astype(int)
        short = p - counts.sum()
        if short > 0:
            counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
        return counts

    def with_spikes(self, spikes: "SpikeConfig", p: int) -> "SpectrumH":
        """Finite-``p`` spectrum with the spikes occupying slots of the largest atom.

        For ``H = delta_1`` this is ``p - M`` unit eigenvalues plus the spikes.
        """
        M = spikes.total
        counts = self.bulk_counts(p)
        if M > counts[-1]:
            raise ValueError(f"{M} spikes exceed the {counts[-1]} slots of the largest atom")
        counts[-1] -= M
        locs = list(self.locations[counts > 0])
        mult = list(counts[counts > 0])
        for alpha, m in spikes.spikes:
            locs.append(alpha)
            mult.append(m)
        locs, mult = np.array(locs), np.array(mult, dtype=float)
        keys = np.round(locs, 12)
        uniq = np.unique(keys)
        merged = [mult[keys == u].sum() for u in uniq]
        return SpectrumH.from_weights(uniq, merged)


@dataclass(frozen=True)
class SpikeConfig:
    """Spiked eigenvalues ``alpha_k`` with multiplicities ``m_k``.

    ``p`` and ``bulk`` are optional; when given, the size limit ``M <= p/10``
    and the separation ``|alpha/t - 1| > d0`` from every bulk atom are checked.
    """

    spikes: Tuple[Tuple[float, int], ...]
    p: Optional[int] = None
    bulk: Optional[SpectrumH] = None
    d0: float = 0.2

    def __post_init__(self):
        spikes = tuple((float(a), int(m)) for a, m in self.spikes)
        object.__setattr__(self, "spikes", spikes)
        alphas = np.array([s[0] for s in spikes])
        mults = np.array([s[1] for s in spikes], dtype=int)
        if np.any(alphas <= 0) or np.any(mults <= 0):
            raise ValueError("spikes must be positive with positive multiplicities")
        if np.any(np.diff(alphas) >= 0):
            raise ValueError("spike values must be strictly decreasing")
        if self.p is not None and mults.sum() > self.p / 10:
            raise ValueError(f"M = {mults.sum()} spikes exceeds p/10 = {self.p / 10:g}")
        if self.bulk is not None and len(spikes):
            sep = np.abs(alphas[:, None] / self.bulk.locations[None, :] - 1.0)
            if sep.min() <= self.d0:
                raise ValueError(
                    f"spike separation {sep.min():.3g} from the bulk is not above d0={self.d0}"
                )

    @classmethod
    def from_values(cls, values: Sequence[float], **kwargs) -> "SpikeConfig":
        """Group a list of spike values (any order, repeats allowed)."""
        values = np.round(np.asarray(values, dtype=float), 12)
        uniq, counts = np.unique(values, return_counts=True)
        order = np.argsort(-uniq)
        return cls(tuple(zip(uniq[order], counts[order])), **kwargs)

    @classmethod
    def empty(cls) -> "SpikeConfig":
        return cls(())

    @property
    def total(self) -> int:
        return int(sum(m for _, m in self.spikes))

    @property
    def alphas(self) -> np.ndarray:
        return np.array([s[0] for s in self.spikes])

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([s[1] for s in self.spikes], dtype=int)


@dataclass(frozen=True)
class RatioProfile:
    p: int
    n1: int
    n2: int

    def __post_init__(self):
        if min(self.p, self.n1, self.n2) < 1:
            raise ValueError("p, n1, n2 must be positive")
        if self.c_n2 >= 1:
            raise ValueError(f"c_n2 = p/n2 = {self.c_n2:g} must be < 1 (S2 singular)")

    @classmethod
    def from_ratios(cls, p: int, c1: float, c2: float) -> "RatioProfile":
        return cls(p, int(round(p / c1)), int(round(p / c2)))

    @property
    def c_n1(self) -> float:
        return self.p / self.n1

    @property
    def c_n2(self) -> float:
        return self.p / self.n2

    @property
    def h2(self) -> float:
        return self.c_n1 + self.c_n2 - self.c_n1 * self.c_n2


@dataclass(frozen=True)
class MomentProfile:
    """Field flag ``q`` (1 real, 0 complex) and fourth-cumulant terms."""

    q: int = 1
    beta_x: float = 0.0
    beta_y: float = 0.0

    def __post_init__(self):
        if self.q not in (0, 1):
            raise ValueError("q must be 0 (complex) or 1 (real)")
        if self.beta_x < -2 or self.beta_y < -2:
            raise ValueError("fourth-cumulant terms must be >= -2")

    @classmethod
    def gaussian(cls) -> "MomentProfile":
        return cls(1, 0.0, 0.0)

    @classmethod
    def gamma(cls) -> "MomentProfile":
        # standardized Gamma(2,1): fourth moment 6
        return cls(1, 3.0, 3.0)


@dataclass(frozen=True)
class FisherEigs:
    eigenvalues: np.ndarray = field(repr=False)
    p: int
    n1: Optional[int] = None
    n2: Optional[int] = None

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.ndim != 1 or len(ev) != self.p:
            raise ValueError("eigenvalues must be a vector of length p")
        if not np.all(np.isfinite(ev)) or np.any(ev < 0):
            raise ValueError("eigenvalues must be finite and non-negative")
        if np.any(np.diff(ev) > 0):
            raise ValueError("eigenvalues must be sorted in descending order")
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def ratios(self) -> RatioProfile:
        if self.n1 is None or self.n2 is None:
            raise ValueError("sample sizes n1, n2 are required for ratio-based inference")
        return RatioProfile(self.p, self.n1, self.n2)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _check_data(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.size == 0:
        raise ValueError("data must be a non-empty p x n matrix")
    if not np.all(np.isfinite(data)):
        raise ValueError("data contains non-finite entries")
    return data


def sample_covariance(data, unbiased: bool = False) -> np.ndarray:
    """Sample covariance of a ``p x n`` matrix whose columns are observations.

    With ``unbiased=False`` this is ``X X^T / n`` (no centering). With
    ``unbiased=True`` rows are centered and the divisor is ``n - 1``.
    """
    data = _check_data(data)
    n = data.shape[1]
    if unbiased:
        if n < 2:
            raise ValueError("unbiased covariance needs at least two observations")
        data = data - data.mean(axis=1, keepdims=True)
        s = data @ data.T / (n - 1)
    else:
        s = data @ data.T / n
    return 0.5 * (s + s.T)


def fisher_eigenvalues(s1, s2, n1: Optional[int] = None, n2: Optional[int] = None) -> FisherEigs:
    """Eigenvalues of ``S1 S2^{-1}`` via the symmetric-definite pencil ``(S1, S2)``."""
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if s1.shape != s2.shape or s1.ndim != 2 or s1.shape[0] != s1.shape[1]:
        raise ValueError("s1 and s2 must be square matrices of the same size")
    d2 = np.linalg.eigvalsh(s2)
    ratio = d2[0] / d2[-1] if d2[-1] > 0 else 0.0
    if ratio < SINGULAR_RATIO:
        raise SingularCovarianceError(ratio)
    ev = scipy.linalg.eigh(s1, s2, eigvals_only=True)
    scale = max(abs(ev).max(), 1.0)
    if ev.min() < -1e-8 * scale:
        raise ValueError("numerator matrix is not positive semidefinite")
    ev = np.clip(ev, 0.0, None)[::-1]
    return FisherEigs(np.ascontiguousarray(ev), len(ev), n1, n2)


def fisher_from_samples(x, y) -> FisherEigs:
    """Fisher eigenvalues from raw ``p x n1`` and ``p x n2`` samples (divisor n)."""
    x = _check_data(x)
    y = _check_data(y)
    return fisher_eigenvalues(sample_covariance(x), sample_covariance(y), x.shape[1], y.shape[1])


@dataclass(frozen=True)
class SigmaSpec:
    """Recipe for a population covariance.

    kinds: ``"diagonal"`` (``values``), ``"conjugated"`` (``U diag(values) U^T``
    with ``U`` Haar-orthogonal, drawn from the generator), ``"toeplitz"``
    (``rho^|i-j|``, optionally scaled).
    """

    kind: str
    values: Optional[Tuple[float, ...]] = None
    rho: Optional[float] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("diagonal", "conjugated", "toeplitz", "identity"):
            raise ValueError(f"invalid sigma spec kind {self.kind!r}")
        if self.kind in ("diagonal", "conjugated"):
            if self.values is None or len(self.values) == 0:
                raise ValueError(f"{self.kind} sigma spec needs values")
            vals = tuple(float(v) for v in self.values)
            if min(vals) <= 0:
                raise ValueError("sigma spec values must be positive")
            object.__setattr__(self, "values", vals)
        if self.kind == "toeplitz" and (self.rho is None or not -1 < self.rho < 1):
            raise ValueError("toeplitz sigma spec needs |rho| < 1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def identity(cls) -> "SigmaSpec":
        return cls("identity")

    @classmethod
    def diagonal(cls, values) -> "SigmaSpec":
        return cls("diagonal", tuple(values))

    @classmethod
    def conjugated(cls, values) -> "SigmaSpec":
        return cls("conjugated", tuple(values))

    @classmethod
    def toeplitz(cls, rho: float, scale: float = 1.0) -> "SigmaSpec":
        return cls("toeplitz", rho=rho, scale=scale)

    def _check_p(self, p: int) -> None:
        if self.values is not None and len(self.values) != p:
            raise ValueError(f"sigma spec has {len(self.values)} values, expected p={p}")

    def matrix_and_root(self, p: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(Sigma, Sigma^{1/2})`` (symmetric root)."""
        self._check_p(p)
        if self.kind == "identity":
            return np.eye(p), np.eye(p)
        if self.kind == "diagonal":
            v = np.array(self.values)
            return np.diag(v), np.diag(np.sqrt(v))
        if self.kind == "conjugated":
            u = haar_orthogonal(p, rng)
            v = np.array(self.values)
            return (u * v) @ u.T, (u * np.sqrt(v)) @ u.T
        idx = np.arange(p)
        sigma = self.scale * self.rho ** np.abs(idx[:, None] - idx[None, :])
        d, q = np.linalg.eigh(sigma)
        return sigma, (q * np.sqrt(np.clip(d, 0, None))) @ q.T


def haar_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR factorization of a Gaussian."""
    g = rng.standard_normal((p, p))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def draw_entries(shape, population: str, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. standardized entries: N(0,1) or (Gamma(2,1) - 2)/sqrt(2)."""
    if population == "gaussian":
        return rng.standard_normal(shape)
    if population == "gamma":
        return (rng.gamma(2.0, 1.0, size=shape) - 2.0) / np.sqrt(2.0)
    raise ValueError(f"unknown population {population!r}")


def generate_two_sample(
    sigma1_spec: SigmaSpec,
    sigma2_spec: SigmaSpec,
    ratio: RatioProfile,
    population: str = "gaussian",
    seed=None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Draw ``Sigma1^{1/2} X`` (p x n1) and ``Sigma2^{1/2} Y`` (p x n2)."""
    rng = np.random.default_rng(seed)
    p = ratio.p
    _, r1 = sigma1_spec.matrix_and_root(p, rng)
    _, r2 = sigma2_spec.matrix_and_root(p, rng)
    x = draw_entries((p, ratio.n1), population, rng)
    y = draw_entries((p, ratio.n2), population, rng)
    if sigma1_spec.kind != "identity":
        x = r1 @ x
    if sigma2_spec.kind != "identity":
        y = r2 @ y
    return x, y


def estimate_beta(data, q: int = 1) -> float:
    """Fourth-cumulant term ``E|xi|^4 - q - 2`` from per-coordinate standardized data."""
    data = _check_data(data)
    if data.shape[1] < 4:
        raise ValueError("estimate_beta needs at least 4 observations")
    centered = data - data.mean(axis=1, keepdims=True)
    sd = centered.std(axis=1)
    if np.any(sd <= 1e-12 * max(1.0, np.abs(data).max())):
        raise ValueError("zero-variance coordinate: cannot standardize")
    z = centered / sd[:, None]
    return float(np.mean(z**4) - q - 2)

"""Stieltjes transforms, Fisher LSD density and support, spike map and centering.

The Fisher companion transform ``m(z)`` is parametrized through
``m0 = m_{c2}(-m)``.  Eliminating the two self-consistent equations gives an
explicit inverse, ``m = 1/m0 - c2 * sum w/(t + m0)`` and
``z = Z(m0) = (c1*m0 - h2/m) / c2``, so for every ``z`` the admissible values
of ``m0`` are roots of a polynomial of degree ``K + 1`` (``K`` atoms of H).
The physical branch is the unique root with ``Im m0 < 0`` and ``Im m > 0``
when ``Im z > 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize

from .functions import SpectralFunction, as_spectral_function
from .model import SpectrumH

RESIDUAL_TOL = 1e-10


class StieltjesConvergenceError(RuntimeError):
    """No admissible branch could be selected at a point."""

    def __init__(self, msg: str, residual: float = np.nan):
        self.residual = residual
        super().__init__(f"{msg} (last residual {residual:.3e})")


@dataclass(frozen=True)
class StieltjesSolution:
    z: complex
    m_underline: complex
    m0: complex
    residual: float


@dataclass(frozen=True)
class LsdDensity:
    support: Tuple[Tuple[float, float], ...]
    grid: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    point_mass_at_zero: float = 0.0
    mass: float = 1.0


def _h2(c1: float, c2: float) -> float:
    return c1 + c2 - c1 * c2


def _check_ratios(c1: float, c2: float) -> None:
    if not c1 > 0:
        raise ValueError(f"c1 must be positive, got {c1}")
    if not 0 < c2 < 1:
        raise ValueError(f"c2 must lie in (0, 1), got {c2}")


# ---------------------------------------------------------------------------
# c2-companion transform
# ---------------------------------------------------------------------------


def _prod_and_partial(t: np.ndarray, w: np.ndarray):
    """``prod(t + m)`` and ``sum_i w_i prod_{j != i}(t_j + m)`` (ascending)."""
    prod = np.array([1.0])
    for ti in t:
        prod = P.polymul(prod, [ti, 1.0])
    acc = np.zeros(len(t))
    for i in range(len(t)):
        qi = np.array([1.0])
        for j, tj in enumerate(t):
            if j != i:
                qi = P.polymul(qi, [tj, 1.0])
        acc = P.polyadd(acc, w[i] * qi)
    return prod, acc


def _batched_roots(coefs: np.ndarray) -> np.ndarray:
    """Roots of many polynomials at once. ``coefs``: (n, deg+1), ascending, leading nonzero."""
    coefs = np.asarray(coefs, dtype=complex)
    n, deg1 = coefs.shape
    deg = deg1 - 1
    monic = coefs[:, :-1] / coefs[:, -1:]
    comp = np.zeros((n, deg, deg), dtype=complex)
    comp[:, 0, :] = -monic[:, ::-1]
    if deg > 1:
        idx = np.arange(deg - 1)
        comp[:, idx + 1, idx] = 1.0
    roots = np.linalg.eigvals(comp)
    # Newton polish
    d = coefs[:, 1:] * np.arange(1, deg1)
    for _ in range(3):
        pv = _polyval_rows(coefs, roots)
        dv = _polyval_rows(d, roots)
        ok = np.abs(dv) > 1e-300
        step = np.where(ok, pv / np.where(ok, dv, 1.0), 0.0)
        roots = roots - step
    return roots


def _polyval_rows(coefs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate row ``i`` of ``coefs`` (ascending) at every entry of ``x[i, :]``."""
    out = np.zeros_like(x, dtype=complex)
    for k in range(coefs.shape[1] - 1, -1, -1):
        out = out * x + coefs[:, k : k + 1]
    return out


def solve_stieltjes_mc2(z, c2: float, H: SpectrumH) -> complex:
    """Solve ``z = -1/m + c2 * sum_i w_i/(t_i + m)`` on the Herglotz branch."""
    if not 0 <= c2 < 1:
        raise ValueError("c2 must lie in [0, 1)")
    z = complex(z)
    if z.imag == 0:
        raise ValueError("z must be off the real axis")
    if z.imag < 0:
        return solve_stieltjes_mc2(z.conjugate(), c2, H).conjugate()
    t, w = H.locations, H.weights
    prod, acc = _prod_and_partial(t, w)
    # z*m*prod + prod - c2*m*acc = 0
    poly = P.polysub(P.polyadd(z * P.polymul([0.0, 1.0], prod), prod), c2 * P.polymul([0.0, 1.0], acc))
    roots = _batched_roots(poly[None, :])[0]
    resid = np.abs(-1 / roots + c2 * (w / (t[None, :] + roots[:, None])).sum(axis=1) - z)
    ok = (roots.imag > 0) & (resid < 1e-8 * max(1.0, abs(z)))
    if not ok.any():
        raise StieltjesConvergenceError("no Herglotz root of the c2 equation", float(resid.min()))
    cand = roots[ok]
    m = cand[np.argmin(resid[ok])]
    # refine with Newton on the defining equation
    for _ in range(3):
        g = -1 / m + c2 * np.sum(w / (t + m)) - z
        dg = 1 / m**2 - c2 * np.sum(w / (t + m) ** 2)
        m = m - g / dg
    res = abs(-1 / m + c2 * np.sum(w / (t + m)) - z)
    if res > RESIDUAL_TOL * max(1.0, abs(z)):
        raise StieltjesConvergenceError("c2 equation did not converge", res)
    return complex(m)


# ---------------------------------------------------------------------------
# Fisher system
# ---------------------------------------------------------------------------


class FisherSystem:
    """Polynomial description of the Fisher LSD for fixed ``(c1, c2, H)``."""

    def __init__(self, c1: float, c2: float, H: SpectrumH):
        _check_ratios(c1, c2)
        self.c1, self.c2, self.H = float(c1), float(c2), H
        self.h2 = _h2(c1, c2)
        self.t, self.w = H.locations, H.weights
        prod, acc = _prod_and_partial(self.t, self.w)
        x = np.array([0.0, 1.0])
        self.N = P.polysub(prod, self.c2 * P.polymul(x, acc))
        self.D = P.polymul(x, prod)
        # poly(m0) = c1*m0*N - h2*D - c2*z*N
        base = P.polysub(self.c1 * P.polymul(x, self.N), self.h2 * self.D)
        deg = len(self.t) + 1
        self.base = np.zeros(deg + 1)
        self.base[: len(base)] = base
        self.zcoef = np.zeros(deg + 1)
        self.zcoef[: len(self.N)] = -self.c2 * self.N

    # -- explicit maps ----------------------------------------------------
    def m_of_m0(self, m0):
        m0 = np.asarray(m0, dtype=complex)
        return 1.0 / m0 - self.c2 * np.sum(self.w / (self.t + m0[..., None]), axis=-1)

    def dm_dm0(self, m0):
        m0 = np.asarray(m0, dtype=complex)
        return -1.0 / m0**2 + self.c2 * np.sum(self.w / (self.t + m0[..., None]) ** 2, axis=-1)

    def z_of_m0(self, m0):
        m0 = np.asarray(m0, dtype=complex)
        return (self.c1 * m0 - self.h2 / self.m_of_m0(m0)) / self.c2

    def dz_dm0(self, m0):
        m0 = np.asarray(m0, dtype=complex)
        m = self.m_of_m0(m0)
        return (self.c1 + self.h2 * self.dm_dm0(m0) / m**2) / self.c2

    # -- roots and branch selection --------------------------------------
    def roots(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        coefs = self.base[None, :] + z[:, None] * self.zcoef[None, :]
        return _batched_roots(coefs)

    def _pick(self, z: np.ndarray, roots: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
        m = self.m_of_m0(roots)
        score = np.where((roots.imag < -tol) & (m.imag > tol), -roots.imag * m.imag, -np.inf)
        idx = np.argmax(score, axis=1)
        found = np.isfinite(score[np.arange(len(z)), idx])
        return roots[np.arange(len(z)), idx], found

    def m0(self, z, eta: Optional[float] = None) -> np.ndarray:
        """Physical ``m0(z)`` for ``Im z >= 0``; conjugate symmetry for ``Im z < 0``.

        Points with ``|Im z| < eta`` are selected at ``Re z + i*eta`` and then
        continued to ``z`` by picking the nearest root.
        """
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        lower = z.imag < 0
        zu = np.where(lower, z.conjugate(), z)
        if eta is None:
            eta = 1e-3 * (1.0 + np.max(np.abs(zu.real)))
        near = zu.imag < eta
        out = np.empty(len(zu), dtype=complex)
        far_idx = np.where(~near)[0]
        if len(far_idx):
            r = self.roots(zu[far_idx])
            sel, ok = self._pick(zu[far_idx], r, 0.0)
            if not ok.all():
                raise StieltjesConvergenceError("no admissible branch off the real axis")
            out[far_idx] = sel
        near_idx = np.where(near)[0]
        if len(near_idx):
            zn = zu[near_idx]
            lifted = zn.real + 1j * eta
            r = self.roots(lifted)
            sel, ok = self._pick(lifted, r, 0.0)
            if not ok.all():
                raise StieltjesConvergenceError("no admissible branch near the real axis")
            r0 = self.roots(zn)
            # continue in a few steps down to the target
            cur = sel
            for frac in (0.5, 0.1, 0.0):
                target = zn.real + 1j * (zn.imag + frac * (eta - zn.imag))
                rr = self.roots(target) if frac > 0 else r0
                k = np.argmin(np.abs(rr - cur[:, None]), axis=1)
                cur = rr[np.arange(len(zn)), k]
            out[near_idx] = cur
        return np.where(lower, out.conjugate(), out)

    def m0_real(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Branch at real ``x``: returns ``(m0, inside)`` where ``inside`` marks the support."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        r = self.roots(x.astype(complex))
        scale = 1e-10 * (1.0 + np.abs(r))
        m = self.m_of_m0(r)
        ok = (r.imag < -scale) & (m.imag > 1e-10 * (1.0 + np.abs(m)))
        score = np.where(ok, m.imag, -np.inf)
        idx = np.argmax(score, axis=1)
        inside = ok[np.arange(len(x)), idx]
        return r[np.arange(len(x)), idx], inside

    def solution(self, z) -> StieltjesSolution:
        z = complex(z)
        m0 = self.m0(z)[0]
        m = self.m_of_m0(m0)
        res = abs(self.z_of_m0(m0) - z)
        if res > RESIDUAL_TOL * max(1.0, abs(z)):
            raise StieltjesConvergenceError("Fisher system residual too large", res)
        return StieltjesSolution(z, complex(m), complex(m0), float(res))

    # -- density ----------------------------------------------------------
    def density(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        m0, inside = self.m0_real(x)
        m = self.m_of_m0(m0)
        return np.where(inside, np.abs(m.imag) / (np.pi * self.c1), 0.0)

    @property
    def point_mass_at_zero(self) -> float:
        return max(0.0, 1.0 - 1.0 / self.c1)

    # -- support ----------------------------------------------------------
    def _critical_roots(self) -> np.ndarray:
        """Roots of ``dZ/dm0`` (cleared of denominators)."""
        N, D = self.N, self.D
        crit = P.polyadd(
            self.c1 * P.polymul(N, N),
            self.h2 * P.polysub(P.polymul(P.polyder(N), D), P.polymul(N, P.polyder(D))),
        )
        return P.polyroots(crit)

    def breakpoints(self) -> np.ndarray:
        """Abscissae of near-real complex critical points: local density minima near a cusp."""
        r = self._critical_roots()
        r = r[(np.abs(r.imag) >= 1e-7 * (1 + np.abs(r))) & (np.abs(r.imag) < 0.5 * np.abs(r.real))]
        if len(r) == 0:
            return np.empty(0)
        return np.unique(np.real(self.z_of_m0(r)))

    def support(self) -> Tuple[Tuple[float, float], ...]:
        """Support intervals of the absolutely continuous part."""
        N, D = self.N, self.D
        r = self._critical_roots()
        r = r[np.abs(r.imag) < 1e-7 * (1 + np.abs(r))].real
        r = r[np.abs(P.polyval(r, N)) > 1e-12 * (1 + np.abs(P.polyval(r, D)))]
        r = r[np.abs(r) > 1e-12]
        x = np.real(self.z_of_m0(r.astype(complex)))
        x = np.unique(np.round(x[np.isfinite(x) & (x > 0)], 14))
        if len(x) < 2:
            raise ValueError("failure to bracket the support")
        mids = 0.5 * (x[:-1] + x[1:])
        _, inside = self.m0_real(mids)
        intervals: List[List[float]] = []
        for lo, hi, ins in zip(x[:-1], x[1:], inside):
            if not ins:
                continue
            if intervals and intervals[-1][1] == lo:
                intervals[-1][1] = hi
            else:
                intervals.append([lo, hi])
        if not intervals:
            raise ValueError("failure to bracket the support")
        return tuple((float(a), float(b)) for a, b in intervals)


@lru_cache(maxsize=256)
def fisher_system(c1: float, c2: float, H: SpectrumH) -> FisherSystem:
    return FisherSystem(c1, c2, H)


def solve_fisher(z, c1: float, c2: float, H: SpectrumH) -> StieltjesSolution:
    """``(m(z), m0(z))`` for the Fisher LSD companion transform."""
    return fisher_system(float(c1), float(c2), H).solution(z)


# ---------------------------------------------------------------------------
# Density
# ---------------------------------------------------------------------------


def wachter_edges(c1: float, c2: float) -> Tuple[float, float]:
    h = np.sqrt(_h2(c1, c2))
    return (1 - h) ** 2 / (1 - c2) ** 2, (1 + h) ** 2 / (1 - c2) ** 2


def wachter_density(x, c1: float, c2: float) -> np.ndarray:
    a, b = wachter_edges(c1, c2)
    x = np.asarray(x, dtype=float)
    inside = (x > a) & (x < b)
    xs = np.where(inside, x, 0.5 * (a + b))
    val = (1 - c2) * np.sqrt((b - xs) * (xs - a)) / (2 * np.pi * xs * (c1 + c2 * xs))
    return np.where(inside, val, 0.0)


@lru_cache(maxsize=32)
def _gauss_legendre_half_pi(n: int):
    u, wu = np.polynomial.legendre.leggauss(n)
    theta = 0.25 * np.pi * (u + 1.0)
    return theta, 0.25 * np.pi * wu


class _Integrator:
    """Integrates ``g(x) * density(x)`` over support intervals with ``x = a + (b-a) sin^2(theta)``."""

    def __init__(self, c1: float, c2: float, H: SpectrumH):
        self.c1, self.c2, self.H = c1, c2, H
        if H.is_unit_delta:
            self.support = (wachter_edges(c1, c2),)
            self.dens = lambda x: wachter_density(x, c1, c2)
        else:
            sys = fisher_system(c1, c2, H)
            self.support = sys.support()
            self.dens = sys.density
            cuts = sys.breakpoints()
            panels = []
            for a, b in self.support:
                inner = [x for x in cuts if a < x < b]
                edges = [a] + inner + [b]
                panels.extend(zip(edges[:-1], edges[1:]))
            self.panels = tuple(panels)
            return
        self.panels = self.support

    def integrate(self, g, tol: float = 1e-10, n0: int = 32, nmax: int = 4096):
        total, err = 0.0, 0.0
        for a, b in self.panels:
            prev = None
            n = n0
            while True:
                theta, wt = _gauss_legendre_half_pi(n)
                s2 = np.sin(theta) ** 2
                x = a + (b - a) * s2
                jac = (b - a) * np.sin(2 * theta)
                val = float(np.sum(wt * jac * self.dens(x) * g(x)))
                if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
                    break
                if n >= nmax:
                    break
                prev = val
                n *= 2
            total += val
            err += abs(val - prev) if prev is not None else 0.0
        return total, err


def fisher_lsd_density(c1: float, c2: float, H: SpectrumH, grid_size: int = 2048) -> LsdDensity:
    """Fisher LSD density on a grid clustered at the support edges."""
    _check_ratios(c1, c2)
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    integ = _Integrator(float(c1), float(c2), H)
    support = integ.support
    lengths = np.array([b - a for a, b in support])
    counts = np.maximum(16, np.round(grid_size * lengths / lengths.sum())).astype(int)
    grids = []
    for (a, b), n in zip(support, counts):
        th = np.linspace(0.0, 0.5 * np.pi, n)
        grids.append(a + (b - a) * np.sin(th) ** 2)
    grid = np.concatenate(grids)
    dens = integ.dens(grid)
    pm = max(0.0, 1.0 - 1.0 / c1)
    mass, _ = integ.integrate(lambda x: np.ones_like(x))
    total = mass + pm
    tol = 1e-6 if H.is_unit_delta else 1e-3
    if abs(total - 1.0) > tol:
        raise ValueError(f"LSD mass {total:.8f} deviates from 1 beyond {tol:g}")
    grid.setflags(write=False)
    dens.setflags(write=False)
    return LsdDensity(support, grid, dens, pm, total)


# ---------------------------------------------------------------------------
# Centering term
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _mean_f(f: SpectralFunction, c1: float, c2: float, H: SpectrumH) -> Tuple[float, float]:
    integ = _Integrator(c1, c2, H)
    val, err = integ.integrate(f)
    pm = max(0.0, 1.0 - 1.0 / c1)
    if pm > 0:
        val += pm * float(np.real(f(np.array([0.0]))[0]))
    return val, err


def centering_d1(f, c1: float, c2: float, H: SpectrumH, p: int) -> float:
    """``p * integral f dF^{(c1, c2, H)}``."""
    f = as_spectral_function(f)
    _check_ratios(c1, c2)
    if f.singular_at_zero and c1 >= 1:
        raise ValueError("log statistic undefined: the LSD has a point mass at zero (c1 >= 1)")
    val, _ = _mean_f(f, float(c1), float(c2), H)
    return p * val


# ---------------------------------------------------------------------------
# Spike map
# ---------------------------------------------------------------------------


def psi(alpha: float, c1: float, c2: float, H: SpectrumH) -> float:
    """Almost-sure limit of a sample eigenvalue generated by population spike ``alpha``."""
    t, w = H.locations, H.weights
    alpha = float(alpha)
    gap = t - alpha
    if np.any(np.abs(gap) <= 1e-12 * max(1.0, abs(alpha))):
        raise ValueError(f"alpha={alpha} collides with an atom of H")
    num = alpha * (1.0 - c1 * np.sum(w * t / gap))
    den = 1.0 + c2 * alpha * np.sum(w / gap)
    if abs(den) <= 1e-12:
        raise ValueError(f"psi denominator vanishes at alpha={alpha}")
    return float(num / den)


def psi_pole(c1: float, c2: float, H: SpectrumH) -> float:
    """Largest zero of the denominator of ``psi`` (above the largest atom)."""
    t, w = H.locations, H.weights
    tmax = t.max()
    if c2 == 0:
        return float(tmax)
    g = lambda a: 1.0 + c2 * a * np.sum(w / (t - a))
    lo = tmax * (1 + 1e-12) + 1e-300
    hi = 2 * tmax
    while g(hi) <= 0:
        hi *= 2
    return float(optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-15))


@lru_cache(maxsize=256)
def psi_critical(c1: float, c2: float, H: SpectrumH) -> Tuple[float, float]:
    """``(alpha*, psi(alpha*))``: the minimizer of ``psi`` above its pole.

    Spikes above ``alpha*`` separate from the bulk; ``psi(alpha*)`` is the
    right edge of the bulk support.
    """
    pole = psi_pole(c1, c2, H)
    t, w = H.locations, H.weights

    def dpsi_sign(a):
        # numerator of psi'(a) after clearing the positive factor B(a)^2
        g1 = np.sum(w / (t - a))
        g2 = np.sum(w * t / (t - a) ** 2)
        A = 1.0 - c1 * np.sum(w * t / (t - a))
        B = 1.0 + c2 * a * g1
        return B * (A - c1 * a * g2) - a * A * c2 * g2

    lo = pole * (1 + 1e-12) if pole > 0 else 1e-12
    hi = 2 * max(lo, 1e-3)
    while dpsi_sign(hi) <= 0:
        hi *= 2
    if dpsi_sign(lo) >= 0:
        return float(lo), psi(lo, c1, c2, H)
    a_star = optimize.brentq(dpsi_sign, lo, hi, xtol=1e-13, rtol=1e-13)
    return float(a_star), psi(a_star, c1, c2, H)


def psi_inverse(l: float, c1: float, c2: float, H: SpectrumH) -> float:
    """Spike ``alpha > alpha*`` with ``psi(alpha) = l``; clamped to ``alpha*`` below the edge."""
    a_star, edge = psi_critical(float(c1), float(c2), H)
    if l <= edge:
        return a_star
    hi = max(2 * a_star, l)
    while psi(hi, c1, c2, H) < l:
        hi *= 2
        if hi > 1e12:
            raise ValueError(f"cannot invert psi at l={l}")
    return float(optimize.brentq(lambda a: psi(a, c1, c2, H) - l, a_star, hi, xtol=1e-12, rtol=1e-14))

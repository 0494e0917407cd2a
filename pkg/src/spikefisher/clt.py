"""Asymptotic mean and variance of linear spectral statistics of Fisher matrices.

Three evaluation routes:

* closed forms for ``f(x) = x`` and ``f(x) = log x`` when ``H = delta_1``;
* unit-circle integrals for ``H = delta_1`` and any analytic ``f``, evaluated
  through the Fourier coefficients of ``F(theta) = f(x(theta))``;
* rectangle contours around the LSD support for general atomic ``H``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .functions import SpectralFunction, as_spectral_function
from .model import MomentProfile, SpectrumH
from .rmt import _check_ratios, _h2, fisher_system, wachter_edges

METHODS = ("closed_form", "contour_lowrank", "contour_general")


@dataclass(frozen=True)
class MeanVar:
    mu: float
    nu: float
    method: str
    diagnostics: Dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not np.isfinite(self.mu) or not np.isfinite(self.nu):
            raise ValueError("mean or variance is not finite")
        if not self.nu > 0:
            raise ValueError(f"variance must be positive, got {self.nu}")


# ---------------------------------------------------------------------------
# Closed forms for H = delta_1
# ---------------------------------------------------------------------------


def meanvar_x_delta1(c1: float, c2: float, moments: MomentProfile = MomentProfile()) -> MeanVar:
    _check_ratios(c1, c2)
    q, bx, by = moments.q, moments.beta_x, moments.beta_y
    h2 = _h2(c1, c2)
    mu = q * c2 / (1 - c2) ** 2 + by * c2 / (1 - c2)
    nu = (q + 1) * h2 / (1 - c2) ** 4 + (bx * c1 + by * c2) / (1 - c2) ** 2
    return MeanVar(mu, nu, "closed_form")


def meanvar_log_delta1(c1: float, c2: float, moments: MomentProfile = MomentProfile()) -> MeanVar:
    _check_ratios(c1, c2)
    h2 = _h2(c1, c2)
    if h2 >= 1:
        raise ValueError("log statistic undefined for h^2 >= 1 (requires c1 < 1)")
    q, bx, by = moments.q, moments.beta_x, moments.beta_y
    mu = 0.5 * q * np.log((1 - h2) / (1 - c2) ** 2) - 0.5 * (bx * c1 - by * c2)
    nu = -(q + 1) * np.log(1 - h2) + (bx * c1 + by * c2)
    return MeanVar(float(mu), float(nu), "closed_form")


def meanvar_regression(c1: float, c2: float) -> MeanVar:
    """Gaussian mean and variance of ``-log`` of the Wilks-type determinant."""
    _check_ratios(c1, c2)
    c, d, h = regression_constants(c1, c2)[2:]
    mu = 0.5 * np.log((c**2 - d**2) * h**2 / (c * h - c2 * d) ** 2)
    nu = 2 * np.log(c**2 / (c**2 - d**2))
    return MeanVar(float(mu), float(nu), "closed_form")


def regression_constants(c1: float, c2: float) -> Tuple[float, float, float, float, float]:
    """``(a, b, c, d, h)`` of the regression statistic."""
    h = np.sqrt(_h2(c1, c2))
    a, b = wachter_edges(c1, c2)
    u = np.sqrt(1 + c2 / c1 * b)
    v = np.sqrt(1 + c2 / c1 * a)
    return float(a), float(b), float(0.5 * (u + v)), float(0.5 * (u - v)), float(h)


# ---------------------------------------------------------------------------
# Unit-circle route (H = delta_1)
# ---------------------------------------------------------------------------


def _fourier(f: SpectralFunction, c1: float, c2: float, n: int) -> np.ndarray:
    """Coefficients ``c_k`` of ``F(theta) = f((1 + h^2 + 2h cos theta)/(1-c2)^2)``, ``k = 0..n/2``."""
    h = np.sqrt(_h2(c1, c2))
    theta = 2 * np.pi * np.arange(n) / n
    x = (1 + h * h + 2 * h * np.cos(theta)) / (1 - c2) ** 2
    vals = np.asarray(f(x), dtype=float)
    return np.real(np.fft.rfft(vals)) / n


def _series(ck: np.ndarray, rho: complex, deriv: int = 0) -> complex:
    """``d^deriv/drho^deriv sum_k c_k rho^k``."""
    k = np.arange(len(ck), dtype=float)
    if deriv == 0:
        return complex(np.sum(ck * rho**k))
    fall = np.ones_like(k)
    for j in range(deriv):
        fall = fall * (k - j)
    kk = np.maximum(k - deriv, 0)
    return complex(np.sum(ck * fall * rho**kk))


def _circle_trapezoid(f, c1, c2, kernel, n: int) -> complex:
    """``(1/2 pi i) * integral over |xi| = 1 of F(xi) kernel(xi) dxi`` (kernel poles strictly inside)."""
    h = np.sqrt(_h2(c1, c2))
    theta = 2 * np.pi * np.arange(n) / n
    xi = np.exp(1j * theta)
    x = (1 + h * h + 2 * h * np.cos(theta)) / (1 - c2) ** 2
    return complex(np.mean(np.asarray(f(x)) * kernel(xi) * xi))


def _lowrank_terms(f, c1, c2, moments, n, r: Optional[float], beta_y_form: str):
    h = np.sqrt(_h2(c1, c2))
    q, bx, by = moments.q, moments.beta_x, moments.beta_y
    ck = _fourier(f, c1, c2, n)
    rho = -c2 / h
    inv_r = 1.0 if r is None else 1.0 / r
    # q-term: poles at +-1/r and -c2/h
    mu_q = 0.5 * q * (_series(ck, inv_r) + _series(ck, -inv_r) - 2 * _series(ck, rho)).real
    # beta_x term: 1/(xi + c2/h)^3
    mu_x = bx * c1 * (1 - c2) ** 2 / h**2 * 0.5 * _series(ck, rho, 2).real
    # beta_y term
    s = np.sqrt(c2) / h

    if beta_y_form == "pole":
        def kern(xi):
            return (xi**2 - c2 / h**2) / (xi + c2 / h) ** 2 * (1 / (xi - s) + 1 / (xi + s) - 2 / (xi + c2 / h))
    else:
        def kern(xi):
            return (xi**2 - c2 / h**2) / (xi + c2 / h) ** 2 * (1 / (xi - s) + 1 / (xi + s) - 2 / (c2 / h))

    mu_y = by * (1 - c2) * 0.5 * _circle_trapezoid(f, c1, c2, kern, n).real
    k = np.arange(len(ck), dtype=float)
    # double integral with (xi1 - r xi2)^-2 kernel: (q+1) sum k |c_k|^2 r^-(k+1)
    weight = k if r is None else k * inv_r ** (k + 1)
    nu_q = (q + 1) * float(np.sum(weight * ck**2))
    g = _series(ck, rho, 1).real
    nu_b = (bx * c1 + by * c2) * (1 - c2) ** 2 / h**2 * g**2
    return mu_q + mu_x + mu_y, nu_q + nu_b, float(np.abs(ck[-8:]).max())


def meanvar_contour_lowrank(
    f,
    c1: float,
    c2: float,
    moments: MomentProfile = MomentProfile(),
    r_sequence: Optional[Sequence[float]] = None,
    n_nodes: int = 1 << 14,
    beta_y_form: str = "pole",
) -> MeanVar:
    """Unit-circle mean and variance for ``H = delta_1``.

    ``F`` is expanded in its Fourier series on ``|xi| = 1``; contour integrals
    with poles inside the disk become power series in the pole location.  With
    ``r_sequence=None`` the ``r -> 1`` limit is taken exactly; otherwise values
    at each ``r`` are combined by Richardson extrapolation in ``r - 1``.

    ``beta_y_form`` selects the last bracket of the ``beta_y`` mean kernel:
    ``"pole"`` uses ``-2/(xi + c2/h)``, ``"constant"`` uses ``-2/(c2/h)``.
    """
    f = as_spectral_function(f)
    _check_ratios(c1, c2)
    if beta_y_form not in ("pole", "constant"):
        raise ValueError("beta_y_form must be 'pole' or 'constant'")
    a, _ = wachter_edges(c1, c2)
    if f.singular_at_zero and a <= 0:
        raise ValueError("log statistic undefined: support touches zero")
    if r_sequence is None:
        mu, nu, tail = _lowrank_terms(f, c1, c2, moments, n_nodes, None, beta_y_form)
        mu2, nu2, _ = _lowrank_terms(f, c1, c2, moments, n_nodes // 2, None, beta_y_form)
        diag = {"tail_coefficient": tail, "error_mu": abs(mu - mu2), "error_nu": abs(nu - nu2)}
        return MeanVar(mu, nu, "contour_lowrank", diag)
    rs = np.asarray(r_sequence, dtype=float)
    if rs.ndim != 1 or len(rs) < 2 or np.any(rs <= 1):
        raise ValueError("r_sequence needs at least two values above 1")
    vals = np.array([_lowrank_terms(f, c1, c2, moments, n_nodes, r, beta_y_form)[:2] for r in rs])
    eps = rs - 1.0
    # polynomial extrapolation in eps to eps = 0 (Neville)
    table = vals.copy()
    diffs = []
    for lvl in range(1, len(rs)):
        new = (eps[lvl:, None] * table[:-1] - eps[:-lvl, None] * table[1:]) / (eps[lvl:, None] - eps[:-lvl, None])
        diffs.append(np.abs(new[-1] - table[-1]))
        table = new
    if len(diffs) >= 2 and np.any(diffs[-1] > diffs[-2] + 1e-14):
        raise ArithmeticError(f"Richardson extrapolation not contracting: corrections {diffs}")
    mu, nu = table[-1]
    diag = {"error_mu": float(diffs[-1][0]), "error_nu": float(diffs[-1][1])}
    return MeanVar(float(mu), float(nu), "contour_lowrank", diag)


# ---------------------------------------------------------------------------
# General contour route
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContourParams:
    """Rectangle contour settings.

    ``margin`` is the clearance to the support as a fraction of its width; the
    left clearance is further limited to ``left_fraction`` of the left edge so
    that ``z = 0`` stays outside.  ``inner_scale`` shrinks the clearances for
    the inner contour of the double integrals.
    """

    nodes_per_side: int = 512
    margin: float = 0.1
    left_fraction: float = 0.5
    inner_scale: float = 0.5

    def __post_init__(self):
        if self.nodes_per_side < 16 or self.nodes_per_side % 2:
            raise ValueError("nodes_per_side must be an even integer >= 16")
        if not 0 < self.inner_scale < 1:
            raise ValueError("inner_scale must lie in (0, 1)")
        if not 0 < self.left_fraction < 1:
            raise ValueError("left_fraction must lie in (0, 1)")


def _rectangle(x0: float, x1: float, y: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Counterclockwise rectangle ``[x0, x1] x [-y, y]``: Gauss-Legendre nodes and weights ``dz``."""
    u, wu = np.polynomial.legendre.leggauss(n)
    corners = [complex(x0, -y), complex(x1, -y), complex(x1, y), complex(x0, y)]
    zs, ws = [], []
    for k in range(4):
        p0, p1 = corners[k], corners[(k + 1) % 4]
        zs.append(0.5 * (p0 + p1) + 0.5 * (p1 - p0) * u)
        ws.append(0.5 * (p1 - p0) * wu)
    return np.concatenate(zs), np.concatenate(ws)


class _ContourNodes:
    def __init__(self, sys, z: np.ndarray, dz: np.ndarray):
        self.z, self.dz = z, dz
        self.m0 = sys.m0(z)
        self.dm0 = 1.0 / sys.dz_dm0(self.m0)
        self.m = sys.m_of_m0(self.m0)
        resid = np.abs(sys.z_of_m0(self.m0) - z)
        if resid.max() > 1e-8 * max(1.0, np.abs(z).max()):
            raise ArithmeticError(f"Stieltjes solver failure on the contour (residual {resid.max():.2e})")


def _general_terms(f, c1, c2, H, moments, params: ContourParams, n: int):
    sys = fisher_system(c1, c2, H)
    support = sys.support()
    a, b = support[0][0], support[-1][1]
    width = b - a
    gap = params.margin * width
    left = min(gap, params.left_fraction * a) if f.singular_at_zero or a > 0 else gap
    if left <= 0:
        raise ValueError("contour cannot separate the support from z = 0")
    outer = _ContourNodes(sys, *_rectangle(a - left, b + gap, gap, n))
    s = params.inner_scale
    inner = _ContourNodes(sys, *_rectangle(a - s * left, b + s * gap, s * gap, n))

    t, w = H.locations, H.weights
    q, bx, by = moments.q, moments.beta_x, moments.beta_y
    c = outer
    fz = np.asarray(f(c.z), dtype=complex)
    m0 = c.m0[:, None]
    tt = t[None, :]
    J1 = np.sum(w * m0 / (tt + m0), axis=1)
    J2 = np.sum(w * m0**2 / (tt + m0) ** 2, axis=1)
    dJ1 = np.sum(w * tt / (tt + m0) ** 2, axis=1)
    dJ2 = np.sum(w * 2 * m0 * tt / (tt + m0) ** 3, axis=1)
    U = 1 - c2 * J1
    B = 1 - c2 * J2
    dU = -c2 * dJ1
    dB = -c2 * dJ2
    A = _h2(c1, c2) / c2 - (c1 / c2) * U**2 / B
    dA = -(c1 / c2) * (2 * U * dU * B - U**2 * dB) / B**2
    two_pi_i = 2j * np.pi
    mu1 = q / 2 * np.sum(fz * dA / A * c.dm0 * c.dz) / two_pi_i
    mu2 = q / 2 * np.sum(fz * dB / B * c.dm0 * c.dz) / two_pi_i
    # the two fourth-cumulant mean terms enter with the sign that reproduces the
    # closed forms and the unit-circle route under counterclockwise orientation
    s3 = np.sum(w * tt**2 / (tt + m0) ** 3, axis=1)
    mu3 = bx * c1 * np.sum(fz * (-c.m**2 * c.m0**2 * s3 / B) / A * c.dz) / two_pi_i
    s4 = np.sum(w * tt / (tt + m0) ** 3, axis=1)
    dm = sys.dm_dm0(c.m0) * c.dm0
    mu4 = -by * c2 * np.sum(fz * dm * c.m0**3 * (-s4) / B * c.dz) / two_pi_i
    mu = (mu1 + mu2 + mu3 + mu4).real

    # variance
    f_in = np.asarray(f(inner.z), dtype=complex)
    g_out = fz * c.dm0 * c.dz
    g_in = f_in * inner.dm0 * inner.dz
    kern = 1.0 / (c.m0[:, None] - inner.m0[None, :]) ** 2
    nu1 = -(q + 1) / (4 * np.pi**2) * (g_out @ kern @ g_in)
    du = tt * c.dm0[:, None] / (tt + m0) ** 2
    K = np.sum(fz[:, None] * du * c.dz[:, None], axis=0)
    nu2 = -(bx * c1 + by * c2) / (4 * np.pi**2) * np.sum(w * K**2)
    nu = (nu1 + nu2).real
    return float(mu), float(nu), {
        "imag_mu": float(abs((mu1 + mu2 + mu3 + mu4).imag)),
        "imag_nu": float(abs((nu1 + nu2).imag)),
    }


@lru_cache(maxsize=512)
def _general_cached(f, c1, c2, H, moments, params):
    n = params.nodes_per_side
    mu, nu, diag = _general_terms(f, c1, c2, H, moments, params, n)
    mu2, nu2, _ = _general_terms(f, c1, c2, H, moments, params, n // 2)
    diag = dict(diag, error_mu=abs(mu - mu2), error_nu=abs(nu - nu2))
    return MeanVar(mu, nu, "contour_general", diag)


def meanvar_contour_general(
    f,
    c1: float,
    c2: float,
    H: SpectrumH,
    moments: MomentProfile = MomentProfile(),
    contour_params: ContourParams = ContourParams(),
) -> MeanVar:
    """Mean and variance for atomic ``H`` by rectangle contours around the support."""
    f = as_spectral_function(f)
    _check_ratios(c1, c2)
    if f.singular_at_zero and c1 >= 1:
        raise ValueError("log statistic undefined: the LSD has a point mass at zero (c1 >= 1)")
    return _general_cached(f, float(c1), float(c2), H, moments, contour_params)


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------


def meanvar(f, c1: float, c2: float, H: SpectrumH, moments: MomentProfile = MomentProfile(), method: str = "auto") -> MeanVar:
    """Pick an evaluation route.

    ``auto``: closed form when available, else the unit-circle route for
    ``H = delta_1``, else the general contour.  ``closed``, ``contour`` and
    ``general`` force a route.
    """
    f = as_spectral_function(f)
    method = {"closed": "closed_form", "contour": "contour_lowrank", "general": "contour_general"}.get(method, method)
    if method == "auto":
        if H.is_unit_delta:
            method = "closed_form" if f.name in ("x", "log") else "contour_lowrank"
        else:
            method = "contour_general"
    if method == "closed_form":
        if not H.is_unit_delta or f.name not in ("x", "log"):
            raise ValueError("closed forms exist only for f in {x, log} with H = delta_1")
        fn = meanvar_x_delta1 if f.name == "x" else meanvar_log_delta1
        return fn(c1, c2, moments)
    if method == "contour_lowrank":
        if not H.is_unit_delta:
            raise ValueError("the unit-circle route requires H = delta_1")
        return meanvar_contour_lowrank(f, c1, c2, moments)
    if method == "contour_general":
        return meanvar_contour_general(f, c1, c2, H, moments)
    raise ValueError(f"unknown clt method {method!r}")

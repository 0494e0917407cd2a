"""Spectral test functions f used in linear spectral statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np


@dataclass(frozen=True)
class SpectralFunction:
    """A function applied eigenvalue-wise, valid for real or complex input.

    ``name`` is one of ``"x"``, ``"log"``, ``"log1p_scaled"`` or ``"custom"``.
    ``kappa`` is the scale of ``log(1 + kappa * x)``.
    """

    name: str
    kappa: Optional[float] = None
    func: Optional[Callable] = None

    def __post_init__(self):
        if self.name not in ("x", "log", "log1p_scaled", "custom"):
            raise ValueError(f"unknown spectral function {self.name!r}")
        if self.name == "log1p_scaled" and (self.kappa is None or self.kappa <= 0):
            raise ValueError("log1p_scaled needs kappa > 0")
        if self.name == "custom" and self.func is None:
            raise ValueError("custom spectral function needs a callable")

    def __call__(self, x):
        if self.name == "x":
            return x
        if self.name == "log":
            return np.log(x)
        if self.name == "log1p_scaled":
            return np.log1p(self.kappa * x)
        return self.func(x)

    @property
    def singular_at_zero(self) -> bool:
        return self.name == "log"

    def check_domain(self, values) -> None:
        """Raise if ``f`` is undefined at any of the real ``values``."""
        values = np.asarray(values, dtype=float)
        if self.name == "log" and np.any(values <= 0):
            raise ValueError("log statistic needs strictly positive eigenvalues")
        if self.name == "log1p_scaled" and np.any(1 + self.kappa * values <= 0):
            raise ValueError("log1p_scaled statistic undefined at some eigenvalues")

    def __str__(self) -> str:
        if self.name == "log1p_scaled":
            return f"log1p_scaled({self.kappa:g})"
        if self.name == "custom":
            return getattr(self.func, "__name__", "custom")
        return self.name


IDENTITY = SpectralFunction("x")
LOG = SpectralFunction("log")


def log1p_scaled(kappa: float) -> SpectralFunction:
    return SpectralFunction("log1p_scaled", kappa=float(kappa))


def as_spectral_function(f: Union[str, SpectralFunction, Callable]) -> SpectralFunction:
    """Coerce a tag (``"x"``, ``"log"``), an instance, or a callable."""
    if isinstance(f, SpectralFunction):
        return f
    if isinstance(f, str):
        if f == "x":
            return IDENTITY
        if f == "log":
            return LOG
        if f.startswith("log1p_scaled(") and f.endswith(")"):
            return log1p_scaled(float(f[len("log1p_scaled("):-1]))
        raise ValueError(f"unknown spectral function tag {f!r}")
    if callable(f):
        return SpectralFunction("custom", func=f)
    raise TypeError(f"cannot interpret {f!r} as a spectral function")

"""Gaussian point-sampled sources."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianSource:
    """``f(x) = amplitude * exp(-rate * |x|^2)``, cut to exactly zero where it falls below ``cutoff``."""

    amplitude: float
    rate: float
    dim: int = 1
    cutoff: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r2 = x**2 if self.dim == 1 else np.sum(x**2, axis=-1)
        val = self.amplitude * np.exp(-self.rate * r2)
        if self.cutoff > 0:
            val = np.where(np.abs(val) < self.cutoff * abs(self.amplitude), 0.0, val)
        return val

    def l2_norm(self, l):
        """``||f||_{L^2(-l, l)}`` in 1D (closed form via erf)."""
        if self.dim != 1:
            raise ValueError("closed form is 1D only")
        a = 2.0 * self.rate
        return abs(self.amplitude) * math.sqrt(math.sqrt(math.pi / a) * math.erf(math.sqrt(a) * l))


def wave_source_1d(k):
    return GaussianSource(k / math.sqrt(math.pi), k**2, 1)


def standard_source(kind, k=None):
    """Named sources: ``gaussian_1d`` (scaled by k), ``gaussian_2d_exp`` and ``gaussian_2d_frac``."""
    if kind == "gaussian_1d":
        if k is None:
            raise ValueError("gaussian_1d needs k")
        return wave_source_1d(k)
    if kind == "gaussian_2d_exp":
        return GaussianSource(2.0 * math.sqrt(math.pi), 4.0 * math.pi**2, 2)
    if kind == "gaussian_2d_frac":
        return GaussianSource(math.sqrt(math.pi) / 5.0, math.pi**2 / 25.0, 2)
    raise ValueError(f"unknown source kind {kind!r}")

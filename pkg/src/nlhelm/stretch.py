"""Absorption profiles and complex coordinate stretches for 1D and 2D PMLs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AbsorptionProfile:
    """Normalised linear ramp ``sigma(t) = (|t| - inner_extent) / pml_width`` outside the interface."""

    inner_extent: float
    pml_width: float
    ramp: str = "LinearNormalized"

    def __post_init__(self):
        if self.inner_extent <= 0 or self.pml_width <= 0:
            raise ValueError("inner_extent and pml_width must be positive")
        if self.ramp != "LinearNormalized":
            raise ValueError(f"unsupported ramp {self.ramp!r}")

    def sigma(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        return np.where(t > self.inner_extent, (t - self.inner_extent) / self.pml_width, 0.0)

    def integral(self, t):
        """Signed ``int_0^t sigma``, in closed form."""
        t = np.asarray(t, dtype=float)
        excess = np.maximum(np.abs(t) - self.inner_extent, 0.0)
        return np.sign(t) * excess**2 / (2.0 * self.pml_width)

    def eta(self, t):
        return np.abs(self.integral(t))


@dataclass(frozen=True)
class StretchConfig:
    z: complex
    k: float
    profile: AbsorptionProfile

    def __post_init__(self):
        object.__setattr__(self, "z", complex(self.z))
        if self.k <= 0:
            raise ValueError("wavenumber k must be positive")
        if self.z.real < 0:
            raise ValueError("Re(z) must be nonnegative")
        if self.z.imag <= 0 and self.z != 0:
            raise ValueError("Im(z) must be positive (z = 0 disables absorption)")

    @property
    def scale(self):
        return self.z / self.k

    @property
    def inner_extent(self):
        return self.profile.inner_extent


def stretch_1d(cfg, x):
    """Return the stretched coordinate and ``alpha = d x_tilde / d x`` at ``x``."""
    x = np.asarray(x, dtype=float)
    x_tilde = x + cfg.scale * cfg.profile.integral(x)
    alpha = 1.0 + cfg.scale * cfg.profile.sigma(x)
    inside = np.abs(x) <= cfg.profile.inner_extent
    x_tilde = np.where(inside, x + 0j, x_tilde)
    alpha = np.where(inside, 1.0 + 0j, alpha)
    if x_tilde.ndim == 0:
        return x_tilde[()], alpha[()]
    return x_tilde, alpha


def stretch_2d_cartesian(cfg_x1, cfg_x2, x):
    """Componentwise stretch; the Jacobian is ``alpha_1(x_1) * alpha_2(x_2)``."""
    x = np.asarray(x, dtype=float)
    t1, a1 = stretch_1d(cfg_x1, x[..., 0])
    t2, a2 = stretch_1d(cfg_x2, x[..., 1])
    return np.stack([t1, t2], axis=-1), a1 * a2


def stretch_2d_polar(cfg, x):
    """Stretch of the radial coordinate; the Jacobian is ``alpha_r(r) * r_tilde / r``."""
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    r_tilde, alpha_r = stretch_1d(cfg, r)
    # beta = 1 wherever the ramp has not started (this also covers r = 0)
    outside = r > cfg.profile.inner_extent
    safe = np.where(outside, r, 1.0)
    beta = np.where(outside, r_tilde / safe, 1.0 + 0j)
    x_tilde = x * beta[..., None]
    return x_tilde, alpha_r * beta


class Stretch:
    """Vectorised stretch map used by assembly: ``(N, d)`` points to stretched points and Jacobians.

    ``style`` is ``"1d"``, ``"cartesian"`` or ``"polar"``; ``None`` config means no PML.
    """

    def __init__(self, style, cfg=None, cfg_x2=None):
        if style not in ("1d", "cartesian", "polar"):
            raise ValueError(f"unknown stretch style {style!r}")
        self.style = style
        self.cfg = cfg
        self.cfg_x2 = cfg_x2 if cfg_x2 is not None else cfg

    @property
    def dim(self):
        return 1 if self.style == "1d" else 2

    @property
    def active(self):
        return self.cfg is not None and self.cfg.z != 0

    @property
    def symmetric(self):
        """True when the stretch commutes with the lattice symmetries (reflections, axis swap)."""
        if self.style != "cartesian" or not self.active:
            return True
        return self.cfg == self.cfg_x2

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        if not self.active:
            return points.astype(complex), np.ones(points.shape[:-1] if self.dim == 2 else points.shape, complex)
        if self.style == "1d":
            return stretch_1d(self.cfg, points)
        if self.style == "cartesian":
            return stretch_2d_cartesian(self.cfg, self.cfg_x2, points)
        return stretch_2d_polar(self.cfg, points)

    def unstretched(self, points, margin=0.0):
        """Mask of points whose whole ``margin``-box (sup norm) lies where the stretch is the identity."""
        points = np.asarray(points, dtype=float)
        if not self.active:
            return np.ones(points.shape[:-1] if self.dim == 2 else points.shape, bool)
        if self.style == "1d":
            return np.abs(points) + margin <= self.cfg.inner_extent
        if self.style == "cartesian":
            return (np.abs(points[..., 0]) + margin <= self.cfg.inner_extent) & (
                np.abs(points[..., 1]) + margin <= self.cfg_x2.inner_extent
            )
        far = np.hypot(np.abs(points[..., 0]) + margin, np.abs(points[..., 1]) + margin)
        return far <= self.cfg.inner_extent

"""Radial nonlocal kernels and their continuation to complex displacements."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate, special

# ln(1e16): beyond this many decay lengths a kernel is below double-precision resolution.
_LOG_EPS = math.log(1e16)
_EXP_GUARD = 700.0


class KernelFamily(str, Enum):
    EXPONENTIAL_1D = "Exponential1D"
    EXPONENTIAL_2D = "Exponential2D"
    PIECEWISE_CONSTANT_1D = "PiecewiseConstant1D"
    PIECEWISE_CONSTANT_2D = "PiecewiseConstant2D"
    FRACTIONAL_1D = "Fractional1D"
    FRACTIONAL_2D = "Fractional2D"


def fractional_constant(s, dim):
    """Normalisation of the fractional Laplacian kernel in ``dim`` dimensions."""
    if dim == 1:
        return 2 ** (2 * s) * s * special.gamma(s + 0.5) / (math.sqrt(math.pi) * special.gamma(1 - s))
    return 2 ** (2 * s) * s * special.gamma(s + 1) / (math.pi * special.gamma(1 - s))


@dataclass(frozen=True)
class KernelSpec:
    """Immutable description of a radial kernel ``gamma(x, y) = gamma_r(|x - y|)``.

    Only the parameters relevant to ``family`` need to be set.  ``truncation_radius``
    is the effective horizon of the infinite-range families (exponential and
    fractional); exponential kernels default to ``ln(1e16) * c_gamma``.
    """

    family: KernelFamily
    c_gamma: float | None = None
    delta: float | None = None
    s_order: float | None = None
    smoothing_tol: float = 0.01
    smoothing_eps0: float = 0.01
    truncation_radius: float | None = None
    smoothed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        fam = self.family
        if self.is_exponential:
            if self.c_gamma is None or self.c_gamma <= 0:
                raise ValueError(f"{fam.value} needs a positive c_gamma")
        elif self.is_piecewise_constant:
            if self.delta is None or self.delta <= 0:
                raise ValueError(f"{fam.value} needs a positive delta")
            if not (0 < self.smoothing_tol < 1 and 0 < self.smoothing_eps0 < 1):
                raise ValueError("smoothing_tol and smoothing_eps0 must lie in (0, 1)")
        else:
            if self.s_order is None or not 0 < self.s_order < 1:
                raise ValueError(f"{fam.value} needs s_order in (0, 1)")
        if self.truncation_radius is not None and self.truncation_radius <= 0:
            raise ValueError("truncation_radius must be positive")

    @property
    def dim(self):
        return 1 if self.family.value.endswith("1D") else 2

    @property
    def is_exponential(self):
        return self.family in (KernelFamily.EXPONENTIAL_1D, KernelFamily.EXPONENTIAL_2D)

    @property
    def is_piecewise_constant(self):
        return self.family in (KernelFamily.PIECEWISE_CONSTANT_1D, KernelFamily.PIECEWISE_CONSTANT_2D)

    @property
    def is_fractional(self):
        return self.family in (KernelFamily.FRACTIONAL_1D, KernelFamily.FRACTIONAL_2D)

    @property
    def tau(self):
        return -math.log(self.smoothing_tol) / self.smoothing_eps0

    @property
    def constant(self):
        """Prefactor of the radial profile."""
        if self.family is KernelFamily.EXPONENTIAL_1D:
            return 1.0 / (2.0 * self.c_gamma**3)
        if self.family is KernelFamily.EXPONENTIAL_2D:
            return 1.0 / (3.0 * math.pi * self.c_gamma**4)
        if self.family is KernelFamily.PIECEWISE_CONSTANT_1D:
            return 3.0 / self.delta**3
        if self.family is KernelFamily.PIECEWISE_CONSTANT_2D:
            return 8.0 / (math.pi * self.delta**4)
        return fractional_constant(self.s_order, self.dim)

    @property
    def horizon(self):
        """Radius beyond which the kernel is treated as exactly zero (``inf`` if unset)."""
        if self.truncation_radius is not None:
            return float(self.truncation_radius)
        if self.is_exponential:
            return _LOG_EPS * self.c_gamma
        if self.is_piecewise_constant:
            if self.smoothed:
                # the sigmoid tail falls below 1e-16 at |s|/delta = 1 + ln(1e16)/tau
                return self.delta * (1.0 + _LOG_EPS / self.tau)
            return float(self.delta)
        return math.inf

    @property
    def length_scale(self):
        """Smallest feature size of the profile, used to size quadrature panels."""
        if self.is_exponential:
            return 2.0 * self.c_gamma
        if self.is_piecewise_constant:
            return self.delta
        return math.inf

    def with_truncation(self, radius):
        return KernelSpec(
            family=self.family,
            c_gamma=self.c_gamma,
            delta=self.delta,
            s_order=self.s_order,
            smoothing_tol=self.smoothing_tol,
            smoothing_eps0=self.smoothing_eps0,
            truncation_radius=radius,
            smoothed=self.smoothed,
        )


def smooth_indicator(s, tol=0.01, eps0=0.01):
    """Sigmoid approximation of the indicator of ``[-1, 1]`` evaluated at ``|s|``.

    ``s`` may be complex, in which case it is taken to be an already continued
    distance and is not passed through ``abs``.
    """
    if not (0 < tol < 1 and 0 < eps0 < 1):
        raise ValueError("tol and eps0 must lie in (0, 1)")
    tau = -math.log(tol) / eps0
    s = np.asarray(s)
    if np.iscomplexobj(s):
        x = tau * (s - 1.0)
        out = np.empty(x.shape, dtype=complex)
        pos = x.real > 0
        e = np.exp(-x[pos])
        out[pos] = e / (1.0 + e)
        out[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
        return out[()] if out.ndim == 0 else out
    x = tau * (np.abs(s) - 1.0)
    out = special.expit(-x)
    out = np.where(x <= -_EXP_GUARD, 1.0, np.where(x >= _EXP_GUARD, 0.0, out))
    return out[()] if out.ndim == 0 else out


def continued_distance(delta, dim):
    """Principal square root of the sum of squared (possibly complex) components."""
    delta = np.asarray(delta)
    if dim == 1:
        return np.sqrt(delta * delta)
    if delta.shape[-1] != 2:
        raise ValueError("2D displacements need a trailing axis of length 2")
    return np.sqrt(delta[..., 0] ** 2 + delta[..., 1] ** 2)


def radial_profile(kernel, dist, real_argument=False):
    """Evaluate ``gamma_r`` at (possibly complex) continued distances.

    No horizon truncation is applied here; callers mask by the real displacement.
    """
    c = kernel.constant
    if kernel.is_exponential:
        return c * np.exp(-dist / kernel.c_gamma)
    if kernel.is_piecewise_constant:
        r = dist / kernel.delta
        if real_argument and not kernel.smoothed:
            return c * (np.abs(r) <= 1.0)
        return c * smooth_indicator(r, kernel.smoothing_tol, kernel.smoothing_eps0)
    power = kernel.dim + 2.0 * kernel.s_order
    if np.iscomplexobj(dist):
        return c * np.exp(-power * np.log(dist))
    return c * np.asarray(dist, dtype=float) ** (-power)


def eval_complex(kernel, delta):
    """Kernel value at a real or complex displacement.

    ``delta`` is a scalar (1D) or an array whose trailing axis holds the
    components.  Real displacements beyond the horizon give exactly zero.
    """
    delta = np.asarray(delta)
    dim = kernel.dim
    if dim == 2 and (delta.ndim == 0 or delta.shape[-1] != 2):
        raise ValueError("Expected a displacement with 2 components")
    if dim == 1 and delta.ndim > 0 and delta.shape[-1] == 1:
        delta = delta[..., 0]
    is_real = not np.iscomplexobj(delta) or not np.any(np.imag(delta))
    if is_real:
        delta = np.real(delta).astype(float)
    dist = continued_distance(delta, dim)
    if kernel.is_fractional and np.any(np.abs(dist) < 1e-14):
        raise ValueError("fractional kernel evaluated at zero separation")
    val = radial_profile(kernel, dist, real_argument=is_real)
    if is_real:
        val = np.where(np.abs(dist) > kernel.horizon, 0.0, val).astype(float)
    val = np.asarray(val)
    return val[()] if val.ndim == 0 else val


def second_moment(kernel):
    """Half the second moment of the kernel along one coordinate axis."""
    if kernel.is_fractional:
        raise ValueError("the second moment of a fractional kernel diverges")
    upper = kernel.horizon
    points = None
    if kernel.is_piecewise_constant:
        points = [kernel.delta]

    def prof(r):
        return float(radial_profile(kernel, np.float64(r), real_argument=True))

    if kernel.dim == 1:
        val, _ = integrate.quad(lambda r: r * r * prof(r), 0.0, upper, points=points,
                                epsabs=1e-13, epsrel=1e-13, limit=500)
        return val
    val, _ = integrate.quad(lambda r: r**3 * prof(r), 0.0, upper, points=points,
                            epsabs=1e-13, epsrel=1e-13, limit=500)
    return 0.5 * math.pi * val


def tail_mass(kernel, radius):
    """Integral of the kernel over displacements longer than ``radius``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if kernel.is_fractional:
        s = kernel.s_order
        mass = kernel.constant * radius ** (-2 * s) / s
        return mass if kernel.dim == 1 else math.pi * mass
    upper = kernel.horizon
    if radius >= upper:
        return 0.0

    def prof(r):
        return float(radial_profile(kernel, np.float64(r), real_argument=True))

    if kernel.dim == 1:
        val, _ = integrate.quad(prof, radius, upper, epsabs=1e-14, limit=500)
        return 2.0 * val
    val, _ = integrate.quad(lambda r: r * prof(r), radius, upper, epsabs=1e-14, limit=500)
    return 2.0 * math.pi * val

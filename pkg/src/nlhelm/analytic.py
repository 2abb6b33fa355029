"""Dispersion roots, the 1D nonlocal Green's function and PML decay bounds."""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate

from .kernel import KernelSpec, radial_profile


class RootKind(str, Enum):
    PROPAGATING_REAL = "PropagatingReal"
    EVANESCENT_COMPLEX = "EvanescentComplex"


@dataclass(frozen=True)
class DispersionRoot:
    k_tilde: complex
    classification: RootKind
    residual: float


class DispersionError(RuntimeError):
    pass


def _upper(z):
    z = complex(z)
    if z.imag < 0 or (z.imag == 0 and z.real < 0):
        z = -z
    return z


def _classify(kt, k):
    if abs(kt.imag) <= 1e-12 * max(1.0, abs(kt)):
        return RootKind.PROPAGATING_REAL
    return RootKind.EVANESCENT_COMPLEX


def _cquad(fun, a, b, **kw):
    opts = dict(epsabs=1e-13, epsrel=1e-13, limit=800)
    opts.update(kw)
    val, _ = integrate.quad(fun, a, b, complex_func=True, **opts)
    return val


def _profile(kernel, s):
    return float(radial_profile(kernel, np.float64(s), real_argument=True))


def _dispersion_breaks(kernel):
    if kernel.is_piecewise_constant:
        return [kernel.delta]
    return None


def exponential_symbol(c_gamma, xi):
    """Fourier symbol of the exponential kernel operator, valid for complex ``xi``."""
    return xi**2 / (1.0 + (c_gamma * xi) ** 2)


def dispersion_residual(kernel, k, k_tilde):
    """``|int (1 - exp(i k~ s)) gamma(s) ds - k^2|`` by adaptive quadrature.

    When the integral diverges (exponential kernel with ``Im k~ >= 1/c``) the
    analytic continuation of the symbol is used instead.
    """
    kt = complex(k_tilde)
    if kernel.is_fractional:
        return abs(abs(kt) ** (2 * kernel.s_order) - k**2) if kt.imag == 0 else float("nan")
    if kernel.is_exponential and abs(kt.imag) * kernel.c_gamma >= 0.5:
        return abs(exponential_symbol(kernel.c_gamma, kt) - k**2)
    upper = kernel.horizon
    val = 2.0 * _cquad(lambda s: (1.0 - cmath.cos(kt * s)) * _profile(kernel, s), 0.0, upper,
                       points=_dispersion_breaks(kernel))
    return abs(val - k**2)


def _newton(kernel, k, start, tol=1e-12, max_iter=60):
    upper = kernel.horizon
    pts = _dispersion_breaks(kernel)

    def F(xi):
        return 2.0 * _cquad(lambda s: (1.0 - cmath.cos(xi * s)) * _profile(kernel, s), 0.0, upper, points=pts) - k**2

    def dF(xi):
        return 2.0 * _cquad(lambda s: s * cmath.sin(xi * s) * _profile(kernel, s), 0.0, upper, points=pts)

    xi = complex(start)
    fx = F(xi)
    for _ in range(max_iter):
        d = dF(xi)
        if d == 0:
            return None
        step = fx / d
        lam = 1.0
        while lam > 1e-4:
            cand = xi - lam * step
            fc = F(cand)
            if abs(fc) < abs(fx) or abs(fc) <= tol * k**2:
                break
            lam *= 0.5
        xi, fx = cand, fc
        if abs(fx) <= tol * k**2 or abs(lam * step) <= 1e-15 * abs(xi):
            break
    if not math.isfinite(abs(fx)):
        return None
    return _upper(xi), abs(fx)


def dispersion_root(kernel, k, tol=1e-10):
    """Root ``k~`` of the dispersion identity with nonnegative imaginary part."""
    if kernel.dim != 1:
        raise ValueError("dispersion roots are defined for 1D kernels")
    if k <= 0:
        raise ValueError("k must be positive")
    if kernel.is_exponential:
        a = 1.0 - (kernel.c_gamma * k) ** 2
        if abs(a) < 1e-8:
            raise DispersionError("resonant parameterisation c_gamma * k = 1")
        kt = _upper(k * cmath.sqrt(1.0 / a))
        return DispersionRoot(kt, _classify(kt, k), abs(exponential_symbol(kernel.c_gamma, kt) - k**2))
    if kernel.is_fractional:
        kt = complex(k ** (1.0 / kernel.s_order))
        return DispersionRoot(kt, RootKind.PROPAGATING_REAL, abs(kt.real ** (2 * kernel.s_order) - k**2))
    starts = [k] + [complex(a, b) for a in np.linspace(0, 3 * k, 7) for b in np.linspace(0, 3 * k, 7)]
    best = None
    for s0 in starts:
        res = _newton(kernel, k, s0)
        if res is None:
            continue
        if best is None or res[1] < best[1]:
            best = res
        if res[1] <= tol:
            break
    if best is None or best[1] > tol:
        raise DispersionError(f"no dispersion root found (best residual {None if best is None else best[1]})")
    kt = best[0]
    if abs(kt.imag) <= 1e-12 * abs(kt):
        kt = complex(kt.real, 0.0)
    return DispersionRoot(kt, _classify(kt, k), best[1])


def _cdist(x, y):
    """Distance continued to complex ``x`` with the sign taken from the real part."""
    diff = np.asarray(x) - np.asarray(y)
    sign = np.where(np.real(diff) < 0, -1.0, 1.0)
    return sign * diff


def green_value(x0, x, k_tilde):
    """Outgoing 1D Green's function ``i/(2 k~) exp(i k~ |x - x0|)``; ``x`` may be complex."""
    kt = complex(k_tilde)
    if kt == 0:
        raise ValueError("k_tilde must be nonzero")
    return 1j / (2.0 * kt) * np.exp(1j * kt * _cdist(x, x0))


def _convolve(f, x, k_tilde, support, tol=1e-12):
    lo, hi = support
    x = complex(x)
    xr = x.real

    def integrand(y):
        return green_value(y, x, k_tilde) * f(y)

    total = 0j
    if lo < xr:
        total += _cquad(integrand, lo, min(xr, hi), epsabs=tol, epsrel=1e-12)
    if xr < hi:
        total += _cquad(integrand, max(xr, lo), hi, epsabs=tol, epsrel=1e-12)
    return total


def averaged_solution(f, kernel, k, x, support=(-1.0, 1.0), k_tilde=None):
    """``int G_x(y) f(y) dy`` with ``f`` vanishing outside ``support``; ``x`` may be complex."""
    kt = dispersion_root(kernel, k).k_tilde if k_tilde is None else k_tilde
    xs = np.atleast_1d(np.asarray(x))
    out = np.array([_convolve(f, xi, kt, support) for xi in xs.ravel()]).reshape(xs.shape)
    return out[0] if np.ndim(x) == 0 else out


def exact_solution_exponential(f, k, c_gamma, x, support=(-1.0, 1.0)):
    """Whole-line solution for the exponential kernel with a source supported in ``support``."""
    a = 1.0 - (c_gamma * k) ** 2
    if abs(a) < 1e-8:
        raise ValueError("resonant parameterisation c_gamma * k = 1")
    kt = _upper(k * cmath.sqrt(1.0 / a))
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    conv = np.array([_convolve(f, xi, kt, support) for xi in xs.ravel()]).reshape(xs.shape)
    fx = np.where((xs >= support[0]) & (xs <= support[1]), f(xs), 0.0)
    out = conv / a**2 + (c_gamma**2 / a) * fx
    return out[0] if np.ndim(x) == 0 else out


def kappa_weight(kernel, k_tilde, t):
    """Even weight ``kappa(t) = -(1/k~) int_|t|^inf sin(k~ (|t| - s)) gamma(s) ds``."""
    kt = complex(k_tilde)
    t_arr = np.atleast_1d(np.asarray(t))
    if kernel.is_exponential:
        # complex separations (stretched coordinates) use the continued distance
        ts = _cdist(t_arr, 0.0) if np.iscomplexobj(t_arr) else np.abs(t_arr.astype(float))
        c = kernel.c_gamma
        # closed form: the tail integral of sin * exp is elementary
        out = np.exp(-ts / c) / (2.0 * c * (1.0 + (c * kt) ** 2))
    else:
        if np.iscomplexobj(t_arr) and np.any(np.imag(t_arr)):
            raise ValueError("complex arguments are supported for the exponential kernel only")
        ts = np.abs(t_arr.real.astype(float))
        upper = kernel.horizon
        if not math.isfinite(upper):
            raise ValueError("kappa needs a finite horizon")
        out = np.zeros(ts.shape, dtype=complex)
        for i, ti in enumerate(ts):
            if ti >= upper:
                continue
            val = _cquad(lambda s: cmath.sin(kt * (ti - s)) * _profile(kernel, s), ti, upper,
                         points=[p for p in (_dispersion_breaks(kernel) or []) if ti < p < upper] or None)
            out[i] = -val / kt
    return out[0] if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class DecayBoundParams:
    l: float
    k: float
    z1: float
    z2: float
    k_tilde: complex
    f_norm: float
    lam: float = 0.5
    moment_constant: float = 1.0

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if self.z2 <= 0:
            raise ValueError("z2 must be positive")


def decay_bound(params, which, x, eta):
    """Upper bound on ``|u^a(x~)|`` (``which='average'``) or ``|u^e(x~)|`` (``'exact'``) in the layer.

    ``moment_constant`` is the ``(1 - (delta k)^2)^2`` factor of the exact bound, passed
    explicitly since its relation to the kernel parameters is not fixed.
    """
    if which not in ("average", "exact"):
        raise ValueError("which must be 'average' or 'exact'")
    if abs(x) <= params.l:
        raise ValueError("the bound applies for |x| > l only")
    kt = complex(params.k_tilde)
    p = params
    if abs(kt.imag) <= 1e-12 * abs(kt):
        kr = kt.real
        val = math.sqrt(p.l) / (math.sqrt(2.0) * kr) * math.exp(-(kr / p.k) * p.z2 * abs(eta)) * p.f_norm
    else:
        reach = abs(x + (p.z1 / p.k) * eta) - p.l
        val = math.sqrt(p.l) / (math.sqrt(2.0) * abs(kt)) * math.exp(-p.lam * kt.imag * reach) * p.f_norm
    if which == "exact":
        val /= p.moment_constant
    return val


def case2_condition(params):
    """Whether ``z1/z2 >= -(1/(1-lambda)) Re(k~)/Im(k~)`` holds (always true for ``z1 >= 0``, ``Re k~ >= 0``)."""
    kt = complex(params.k_tilde)
    if kt.imag <= 0:
        return False
    return params.z1 / params.z2 >= -(1.0 / (1.0 - params.lam)) * kt.real / kt.imag


def export_oracle(path, x, values, meta=None):
    """Freeze oracle values as JSON ``{"meta": ..., "points": [{"x", "re", "im"}, ...]}``."""
    pts = [{"x": float(xi), "re": float(np.real(v)), "im": float(np.imag(v))} for xi, v in zip(x, values)]
    with open(path, "w") as fh:
        json.dump({"meta": meta or {}, "points": pts}, fh, indent=2)


def load_oracle(path):
    with open(path) as fh:
        data = json.load(fh)
    x = np.array([p["x"] for p in data["points"]])
    v = np.array([complex(p["re"], p["im"]) for p in data["points"]])
    return x, v

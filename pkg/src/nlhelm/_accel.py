"""Compiled row evaluation for assembly (stretch, continued distance, kernel, Jacobians).

The numpy path in :mod:`nlhelm.assembly` computes the same quantities; this module
only fuses the loops so large 2D systems assemble in reasonable time.
"""
from __future__ import annotations

import cmath
import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

EXPONENTIAL, SMOOTH_INDICATOR, FRACTIONAL = 0, 1, 2
CARTESIAN, POLAR, ONE_D = 0, 1, 2

AVAILABLE = njit is not None


def kernel_code(kernel):
    """``(kind, constant, parameter, tau)`` for the compiled kernel, or None if unsupported."""
    if kernel.is_exponential:
        return EXPONENTIAL, kernel.constant, kernel.c_gamma, 0.0
    if kernel.is_piecewise_constant:
        if not kernel.smoothed:
            return None
        return SMOOTH_INDICATOR, kernel.constant, kernel.delta, kernel.tau
    return FRACTIONAL, kernel.constant, kernel.dim + 2.0 * kernel.s_order, 0.0


def stretch_code(stretch):
    c1, c2 = stretch.cfg, stretch.cfg_x2
    style = {"1d": ONE_D, "cartesian": CARTESIAN, "polar": POLAR}[stretch.style]
    return (style, complex(c1.scale), c1.profile.inner_extent, c1.profile.pml_width,
            complex(c2.scale), c2.profile.inner_extent, c2.profile.pml_width)


if AVAILABLE:

    @njit(cache=True, fastmath=True, inline="always")
    def _stretch1(x, sc, l, dp):
        ax = abs(x)
        if ax <= l:
            return complex(x, 0.0), complex(1.0, 0.0)
        e = ax - l
        integ = e * e / (2.0 * dp)
        if x < 0:
            integ = -integ
        return x + sc * integ, 1.0 + sc * (e / dp)

    # principal sqrt and exp from real functions: about 3x faster than cmath, which
    # also handles infinities and NaNs that cannot occur here
    @njit(cache=True, fastmath=True, inline="always")
    def _csqrt(w):
        x = w.real
        y = w.imag
        t = math.sqrt(0.5 * (math.sqrt(x * x + y * y) + abs(x)))
        if t == 0.0:
            return 0j
        if x >= 0:
            return complex(t, 0.5 * y / t)
        return complex(0.5 * abs(y) / t, math.copysign(t, y))

    @njit(cache=True, fastmath=True, inline="always")
    def _cexp(w):
        a = math.exp(w.real)
        return complex(a * math.cos(w.imag), a * math.sin(w.imag))

    @njit(cache=True, fastmath=True, inline="always")
    def _kernel(dist, kind, kc, kp, tau):
        if kind == 0:
            return kc * _cexp(dist * (-1.0 / kp))
        if kind == 1:
            x = tau * (dist / kp - 1.0)
            if x.real > 0:
                e = _cexp(-x)
                return kc * e / (1.0 + e)
            return kc / (1.0 + _cexp(x))
        return kc * _cexp(-kp * cmath.log(dist))

    @njit(cache=True, fastmath=True)
    def rows_1d(rows, d, t, w, h, kind, kc, kp, tau, sc, l, dp):
        out = np.empty(rows.shape[0], dtype=np.complex128)
        for i in range(rows.shape[0]):
            n = float(rows[i])
            acc = 0j
            for q in range(t.shape[0]):
                a = h * (n + d + 0.5 * t[q])
                b = h * (n - 0.5 * t[q])
                sa, ja = _stretch1(a, sc, l, dp)
                sb, jb = _stretch1(b, sc, l, dp)
                diff = sa - sb
                dist = _csqrt(diff * diff)
                acc += w[q] * _kernel(dist, kind, kc, kp, tau) * ja * jb
            out[i] = acc
        return out

    @njit(cache=True, fastmath=True, inline="always")
    def _stretch2(x1, x2, style, sc1, l1, dp1, sc2, l2, dp2):
        if style == 0:
            s1, a1 = _stretch1(x1, sc1, l1, dp1)
            s2, a2 = _stretch1(x2, sc2, l2, dp2)
            return s1, s2, a1 * a2
        r = math.hypot(x1, x2)
        rt, ar = _stretch1(r, sc1, l1, dp1)
        beta = rt / r if r > l1 else complex(1.0, 0.0)
        return x1 * beta, x2 * beta, ar * beta

    @njit(cache=True, fastmath=True)
    def rows_2d(rows, d1, d2, t, w, h, kind, kc, kp, tau, style, sc1, l1, dp1, sc2, l2, dp2):
        out = np.empty(rows.shape[0], dtype=np.complex128)
        for i in range(rows.shape[0]):
            n1 = float(rows[i, 0])
            n2 = float(rows[i, 1])
            acc = 0j
            for q in range(t.shape[0]):
                a1 = h * (n1 + d1 + 0.5 * t[q, 0])
                a2 = h * (n2 + d2 + 0.5 * t[q, 1])
                b1 = h * (n1 - 0.5 * t[q, 0])
                b2 = h * (n2 - 0.5 * t[q, 1])
                sa1, sa2, ja = _stretch2(a1, a2, style, sc1, l1, dp1, sc2, l2, dp2)
                sb1, sb2, jb = _stretch2(b1, b2, style, sc1, l1, dp1, sc2, l2, dp2)
                e1 = sa1 - sb1
                e2 = sa2 - sb2
                dist = _csqrt(e1 * e1 + e2 * e2)
                acc += w[q] * _kernel(dist, kind, kc, kp, tau) * ja * jb
            out[i] = acc
        return out

    @njit(cache=True, fastmath=True)
    def _axis_table(lo, hi, d, t, h, sc, l, dp):
        """Stretched differences and Jacobian products along one axis for indices lo..hi."""
        q = t.shape[0]
        e = np.empty((hi - lo + 1, q), dtype=np.complex128)
        j = np.empty((hi - lo + 1, q), dtype=np.complex128)
        for i in range(hi - lo + 1):
            n = float(lo + i)
            for p in range(q):
                sa, ja = _stretch1(h * (n + d + 0.5 * t[p]), sc, l, dp)
                sb, jb = _stretch1(h * (n - 0.5 * t[p]), sc, l, dp)
                e[i, p] = (sa - sb) * (sa - sb)
                j[i, p] = ja * jb
        return e, j

    @njit(cache=True, fastmath=True)
    def rows_2d_separable(rows, d1, d2, t, w, h, kind, kc, kp, tau, sc1, l1, dp1, sc2, l2, dp2):
        lo1, hi1 = rows[:, 0].min(), rows[:, 0].max()
        lo2, hi2 = rows[:, 1].min(), rows[:, 1].max()
        e1, j1 = _axis_table(lo1, hi1, d1, t[:, 0].copy(), h, sc1, l1, dp1)
        e2, j2 = _axis_table(lo2, hi2, d2, t[:, 1].copy(), h, sc2, l2, dp2)
        out = np.empty(rows.shape[0], dtype=np.complex128)
        for i in range(rows.shape[0]):
            a = rows[i, 0] - lo1
            b = rows[i, 1] - lo2
            acc = 0j
            for q in range(t.shape[0]):
                dist = _csqrt(e1[a, q] + e2[b, q])
                acc += w[q] * _kernel(dist, kind, kc, kp, tau) * j1[a, q] * j2[b, q]
            out[i] = acc
        return out


    @njit(cache=True, fastmath=True, inline="always")
    def _radial_parts(x1, x2, l, dp):
        """Real parts of the radial stretch: ``beta = 1 + sc*g`` and ``d r~/dr = 1 + sc*p``."""
        r = math.sqrt(x1 * x1 + x2 * x2)
        if r <= l:
            return 0.0, 0.0
        e = r - l
        return e * e / (2.0 * dp * r), e / dp

    @njit(cache=True, fastmath=True)
    def rows_2d_polar(rows, d1, d2, t, w, h, kind, kc, kp, tau, sc, l, dp):
        # the stretched difference is u + sc*v with real u, v, so its square is
        # |u|^2 + 2 sc u.v + sc^2 |v|^2
        out = np.empty(rows.shape[0], dtype=np.complex128)
        sc2 = sc * sc
        for i in range(rows.shape[0]):
            n1 = float(rows[i, 0])
            n2 = float(rows[i, 1])
            acc = 0j
            for q in range(t.shape[0]):
                a1 = h * (n1 + d1 + 0.5 * t[q, 0])
                a2 = h * (n2 + d2 + 0.5 * t[q, 1])
                b1 = h * (n1 - 0.5 * t[q, 0])
                b2 = h * (n2 - 0.5 * t[q, 1])
                ga, pa = _radial_parts(a1, a2, l, dp)
                gb, pb = _radial_parts(b1, b2, l, dp)
                u1 = a1 - b1
                u2 = a2 - b2
                uu = u1 * u1 + u2 * u2
                if ga == 0.0 and gb == 0.0:
                    acc += w[q] * _kernel(complex(math.sqrt(uu), 0.0), kind, kc, kp, tau)
                    continue
                v1 = a1 * ga - b1 * gb
                v2 = a2 * ga - b2 * gb
                sq = uu + 2.0 * sc * (u1 * v1 + u2 * v2) + sc2 * (v1 * v1 + v2 * v2)
                jac = (1.0 + sc * pa) * (1.0 + sc * ga) * (1.0 + sc * pb) * (1.0 + sc * gb)
                acc += w[q] * _kernel(_csqrt(sq), kind, kc, kp, tau) * jac
            out[i] = acc
        return out


def evaluate_rows(kernel, stretch, h, rows, rule):
    """Compiled counterpart of the numpy row evaluation; returns None when not applicable."""
    if not AVAILABLE or not stretch.active:
        return None
    kc = kernel_code(kernel)
    if kc is None:
        return None
    kind, const, par, tau = kc
    style, sc1, l1, dp1, sc2, l2, dp2 = stretch_code(stretch)
    w = np.ascontiguousarray(rule.weights, dtype=float)
    if style == ONE_D:
        t = np.ascontiguousarray(rule.nodes, dtype=float)
        return rows_1d(np.ascontiguousarray(rows[:, 0], dtype=np.int64), float(rule.offset[0]), t, w, h,
                       kind, const, par, tau, sc1, l1, dp1)
    t = np.ascontiguousarray(rule.nodes, dtype=float)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    if style == CARTESIAN:
        return rows_2d_separable(rows, float(rule.offset[0]), float(rule.offset[1]), t, w, h,
                                 kind, const, par, tau, sc1, l1, dp1, sc2, l2, dp2)
    return rows_2d_polar(rows, float(rule.offset[0]), float(rule.offset[1]), t, w, h,
                         kind, const, par, tau, sc1, l1, dp1)

"""Quadrature-based finite-difference stencils and assembly of the truncated PML system.

For a node ``x_n = h n`` and neighbour ``x_m = h (n + d)`` the coefficient is an integral
over the support of the hat / bilinear basis function at ``x_m``.  Writing
``y = x_m + h t`` with ``t`` in ``[-1, 1]^dim`` the kernel arguments become
``x_m + h t / 2`` and ``x_n - h t / 2``, whose *real* separation ``h (d + t)`` does not
depend on the row.  Quadrature rules are therefore built once per offset ``d`` and
applied to every row, with the complex stretch entering only through the kernel and
Jacobian values.
"""
from __future__ import annotations

import bisect
import json
import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp

from . import _accel
from .grid import Grid1D, Grid2D, IndexClass
from .kernel import KernelSpec, radial_profile, tail_mass
from .quadrature import QuadratureWarning, adaptive_interval, adaptive_square, interval_rule, square_rule
from .stretch import Stretch, StretchConfig

DEFAULT_ORDER = 8


class QuadratureError(RuntimeError):
    pass


@dataclass
class OffsetRule:
    offset: tuple
    nodes: np.ndarray
    weights: np.ndarray
    converged: bool = True


@dataclass
class StencilCoefficients:
    """Coefficients ``a_{n, n+d}`` of one row, keyed by offset, plus the diagonal."""

    offsets: np.ndarray
    values: np.ndarray
    diagonal: complex

    def as_dict(self):
        return {tuple(np.atleast_1d(d).tolist()): v for d, v in zip(self.offsets, self.values)}


@dataclass
class SparseComplexSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: object
    unknown_nodes: np.ndarray
    bandwidth: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_unknowns(self):
        return self.rhs.size

    def to_field(self, x):
        """Scatter a solution vector onto all grid nodes (zeros on the boundary layer)."""
        values = np.zeros(self.grid.n_nodes, dtype=complex)
        values[self.unknown_nodes] = x
        return values


# ---------------------------------------------------------------------------
# offset sets and per-offset rules


def stencil_offsets(kernel, h, dim, horizon=None):
    """Offsets whose basis support comes strictly closer than the horizon.

    Candidates extend one cell beyond ``ceil(horizon / h)``; the exact
    support-distance test prunes them, so the extra ring is never assumed.
    """
    horizon = kernel.horizon if horizon is None else horizon
    if not math.isfinite(horizon):
        raise ValueError("kernel needs a finite horizon or truncation_radius for assembly")
    reach = math.ceil(horizon / h - 1e-12) + 1
    rng = np.arange(-reach, reach + 1)
    if dim == 1:
        d = rng[:, None]
    else:
        d = np.array(list(product(rng, rng)))
    gap = np.maximum(np.abs(d) - 1, 0) * h
    keep = np.sqrt(np.sum(gap**2, axis=1)) < horizon
    keep &= np.any(d != 0, axis=1)
    return d[keep]


def _weight_2d(s):
    n2 = s[..., 0] ** 2 + s[..., 1] ** 2
    n1 = np.abs(s[..., 0]) + np.abs(s[..., 1])
    return np.where(n1 > 0, n2 / np.where(n1 > 0, n1, 1.0), 0.0)


def _geometry_1d(d, t):
    return (1.0 - np.abs(t)) * (d + t)


def _geometry_2d(d, t):
    phi = (1.0 - np.abs(t[..., 0])) * (1.0 - np.abs(t[..., 1]))
    return phi * _weight_2d(d + t)


def _test_profile(kernel, r, rate):
    """Kernel at the real distance ``r`` scaled by ``1 + rate``, a model of a stretched separation."""
    if rate == 0 or kernel.is_fractional:
        return radial_profile(kernel, r, real_argument=True)
    return radial_profile(kernel, r * (1.0 + rate))


def _real_integrand(kernel, h, d, horizon, dim, rates=(0.0,)):
    """Integrands driving panel refinement (prefactor excluded).

    Column ``j`` uses the kernel at ``(1 + rates[j]) r``; the nonzero rates model rows
    inside the layer, where the stretched separation makes the kernel oscillate.
    """

    def f(t):
        if dim == 1:
            r = h * np.abs(d[0] + t)
            g = _geometry_1d(d[0], t)
        else:
            r = h * np.hypot(d[0] + t[:, 0], d[1] + t[:, 1])
            g = _geometry_2d(d, t)
        ok = (r > 0) & (r <= horizon)
        rr = np.where(r > 0, r, 1.0)
        cols = [np.where(ok, g * _test_profile(kernel, rr, rate), 0.0) for rate in rates]
        return cols[0] if len(cols) == 1 else np.stack(cols, axis=1)

    return f


def stretch_rates(stretch, kernel, levels=3, extent=math.inf):
    """Representative values of ``(z/k) sigma`` seen by kernel evaluations near the layer.

    Points farther than a few kernel length scales beyond the layer only meet
    negligible kernel values, so the largest rate is taken there.  ``extent`` bounds
    the distance from the origin of any point the evaluations can touch; a stretch
    that stays idle up to it gets the plain real rule.
    """
    if not stretch.active:
        return (0.0,)
    reach = min(kernel.horizon, 5.0 * kernel.length_scale) if math.isfinite(kernel.length_scale) else 0.0
    top = 0j
    for cfg in {stretch.cfg, stretch.cfg_x2}:
        prof = cfg.profile
        sig = float(prof.sigma(min(prof.inner_extent + prof.pml_width + reach, extent)))
        cand = cfg.scale * sig
        if abs(cand) > abs(top):
            top = cand
    if top == 0:
        return (0.0,)
    return tuple([0.0] + [top * (j + 1) / levels for j in range(levels)])


def _prefactor(d, h, dim):
    if dim == 1:
        return -h / d[0]
    return -(h**2) / float(_weight_2d(np.asarray(d, dtype=float)))


def _finish_rule(d, nodes, weights, h, horizon, dim, converged):
    if dim == 1:
        r = h * np.abs(d[0] + nodes)
        g = _geometry_1d(d[0], nodes)
    else:
        r = h * np.hypot(d[0] + nodes[:, 0], d[1] + nodes[:, 1])
        g = _geometry_2d(d, nodes)
    w = weights * g * (r <= horizon) * _prefactor(d, h, dim)
    keep = w != 0
    return OffsetRule(tuple(int(v) for v in d), nodes[keep], w[keep], converged)


def _rule_1d(kernel, h, d, horizon, order, tol, rates=(0.0,)):
    f = _real_integrand(kernel, h, d, horizon, 1, rates)
    dd = int(d[0])
    beta = 1.0 - 2.0 * kernel.s_order if kernel.is_fractional else 0.0
    nodes, weights, ok = [], [], True
    for lo, hi in ((-1.0, 0.0), (0.0, 1.0)):
        cuts = [lo, hi]
        for c in (horizon / h - dd, -horizon / h - dd):
            if lo < c < hi:
                cuts.append(c)
        cuts.sort()
        for a, b in zip(cuts[:-1], cuts[1:]):
            sing = None
            if beta != 0.0 and abs(dd) == 1:
                if a == -dd:
                    sing = "left"
                elif b == -dd:
                    sing = "right"
            x, w, conv = adaptive_interval(f, a, b, order, tol, sing, beta)
            nodes.append(x)
            weights.append(w)
            ok &= conv
    return _finish_rule(d, np.concatenate(nodes), np.concatenate(weights), h, horizon, 1, ok)


def _duffy(p, a, b):
    """Map ``(u, v)`` in the unit square onto triangle ``(p, a, b)`` collapsing ``u = 0`` to ``p``."""
    e1 = a - p
    e2 = b - a
    det = abs(e1[0] * e2[1] - e1[1] * e2[0])

    def to_t(uv):
        u = uv[:, :1]
        v = uv[:, 1:]
        return p + u * e1 + u * v * e2

    return to_t, det


def _rule_2d(kernel, h, d, horizon, order, tol, max_depth, rates=(0.0,)):
    f = _real_integrand(kernel, h, d, horizon, 2, rates)
    tstar = -np.asarray(d, dtype=float)
    nodes, weights, ok = [], [], True
    for cx, cy in product(((-1.0, 0.0), (0.0, 1.0)), repeat=2):
        corners = [np.array([x, y]) for x in cx for y in cy]
        is_sing = any(np.array_equal(c, tstar) for c in corners)
        if not is_sing:
            x, w, conv = adaptive_square(f, (cx[0], cx[1], cy[0], cy[1]), order, tol, max_depth=max_depth)
            nodes.append(x)
            weights.append(w)
            ok &= conv
            continue
        p = tstar
        q = np.array([cx[0] + cx[1] - p[0], cy[0] + cy[1] - p[1]])
        if kernel.is_fractional:
            touching = int(np.sum(np.abs(tstar) == 1.0))
            beta = touching - 2.0 * kernel.s_order
        else:
            beta = 0.0
        for a, b in ((np.array([q[0], p[1]]), q), (q, np.array([p[0], q[1]]))):
            to_t, det = _duffy(p, a, b)

            def g(uv, to_t=to_t, det=det):
                vals = f(to_t(uv))
                jac = uv[:, 0] * det
                return vals * (jac if vals.ndim == 1 else jac[:, None])

            uv, w, conv = adaptive_square(g, (0.0, 1.0, 0.0, 1.0), order, tol, singular_u0=beta != 0.0,
                                          beta=beta, max_depth=max_depth)
            nodes.append(to_t(uv))
            weights.append(w * uv[:, 0] * det)
            ok &= conv
    return _finish_rule(d, np.concatenate(nodes), np.concatenate(weights), h, horizon, 2, ok)


def _coarse_scale(kernel, h, d, horizon, dim, order):
    f = _real_integrand(kernel, h, d, horizon, dim)
    total = 0.0
    if dim == 1:
        for lo, hi in ((-1.0, 0.0), (0.0, 1.0)):
            x, w = interval_rule(lo, hi, order)
            total += np.dot(w, np.abs(f(x)))
    else:
        for cx, cy in product(((-1.0, 0.0), (0.0, 1.0)), repeat=2):
            x, w = square_rule((cx[0], cx[1], cy[0], cy[1]), order)
            total += np.dot(w, np.abs(f(x)))
    return total


_RULE_CACHE = {}
_RULE_CACHE_LIMIT = 100_000


def _cached_rule(kernel, h, d, horizon, order, tol, rates, max_depth):
    key = (kernel, h, tuple(int(v) for v in d), horizon, order, tol, tuple(rates), max_depth)
    rule = _RULE_CACHE.get(key)
    if rule is None:
        if len(d) == 1:
            rule = _rule_1d(kernel, h, d, horizon, order, tol, rates)
        else:
            rule = _rule_2d(kernel, h, d, horizon, order, tol, max_depth, rates)
        if len(_RULE_CACHE) >= _RULE_CACHE_LIMIT:
            _RULE_CACHE.clear()
        _RULE_CACHE[key] = rule
    return rule


def build_rules(kernel, h, offsets, horizon, order=DEFAULT_ORDER, rtol=1e-10, floor=1.0, max_depth=None,
                rates=(0.0,)):
    """Adaptive rule for each offset, to ``rtol`` times ``max(own scale, floor * largest scale)``.

    The default ``floor=1`` measures every offset against the dominant stencil entry, so
    small far-field entries do not drive refinement; ``floor=0`` makes every tolerance
    purely relative to the offset's own integrand.
    ``rates`` adds stretched test kernels (see :func:`stretch_rates`).  Rules are built
    for one offset per lattice-symmetry orbit and mapped onto the rest; the integrand
    is invariant under reflections and axis swaps applied to ``d`` and ``t`` together.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    dim = offsets.shape[1]
    max_depth = 7 if max_depth is None else max_depth
    g_idx, canon = _canonicalise(offsets)
    uniq, inverse = np.unique(canon, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    scales = np.array([_coarse_scale(kernel, h, d, horizon, dim, order) for d in uniq])
    top = scales.max() if scales.size else 1.0
    base = [
        _cached_rule(kernel, h, d, horizon, order, rtol * max(sc, floor * top, 1e-300), rates, max_depth)
        for d, sc in zip(uniq, scales)
    ]
    group = _symmetry_group(dim)
    rules = []
    for d, gi, ui in zip(offsets, g_idx, inverse):
        r = base[ui]
        g = group[gi]
        # canonical = g d, so t = g^T t_canonical; as row vectors that is t_canonical @ g
        nodes = r.nodes * g[0, 0] if dim == 1 else r.nodes @ g
        rules.append(OffsetRule(tuple(int(v) for v in d), nodes, r.weights, r.converged))
    return rules


# ---------------------------------------------------------------------------
# row evaluation


def _evaluate(kernel, stretch, h, rows, rule, chunk=4096):
    """Coefficients for ``rows`` (lattice indices, shape (R, dim)) at one offset."""
    fast = _accel.evaluate_rows(kernel, stretch, h, rows, rule)
    if fast is not None:
        return fast
    d = np.asarray(rule.offset, dtype=float)
    t = rule.nodes
    out = np.empty(rows.shape[0], dtype=complex)
    dim = rows.shape[1]
    for start in range(0, rows.shape[0], chunk):
        n = rows[start:start + chunk].astype(float)
        if dim == 1:
            a = h * (n[:, :1] + d[0] + 0.5 * t[None, :])
            b = h * (n[:, :1] - 0.5 * t[None, :])
            sa, ja = stretch(a)
            sb, jb = stretch(b)
            diff = sa - sb
            dist = np.sqrt(diff * diff)
        else:
            a = h * (n[:, None, :] + d + 0.5 * t[None, :, :])
            b = h * (n[:, None, :] - 0.5 * t[None, :, :])
            sa, ja = stretch(a)
            sb, jb = stretch(b)
            diff = sa - sb
            dist = np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)
        vals = radial_profile(kernel, dist) * ja * jb
        out[start:start + chunk] = vals @ rule.weights
    return out


def _free_value(kernel, h, rule):
    """Coefficient for rows where the stretch is the identity over the whole stencil."""
    d = np.asarray(rule.offset, dtype=float)
    t = rule.nodes
    if t.ndim == 1:
        r = h * np.abs(d[0] + t)
    else:
        r = h * np.hypot(d[0] + t[:, 0], d[1] + t[:, 1])
    return complex(radial_profile(kernel, r, real_argument=True) @ rule.weights)


def _symmetry_group(dim):
    if dim == 1:
        return [np.array([[1]]), np.array([[-1]])]
    mats = []
    for swap in (False, True):
        for s1, s2 in product((1, -1), repeat=2):
            f = np.diag([s1, s2])
            mats.append((np.array([[0, 1], [1, 0]]) @ f) if swap else f)
    return mats


def _canonicalise(rows):
    """Group element index mapping each row into the fundamental domain, and the image."""
    dim = rows.shape[1]
    group = _symmetry_group(dim)
    if dim == 1:
        g_idx = (rows[:, 0] < 0).astype(int)
    else:
        s1 = rows[:, 0] < 0
        s2 = rows[:, 1] < 0
        flipped = np.abs(rows)
        swap = flipped[:, 1] > flipped[:, 0]
        # order in _symmetry_group: swap-major, then (s1, s2) in ((1,1),(1,-1),(-1,1),(-1,-1))
        g_idx = swap.astype(int) * 4 + s1.astype(int) * 2 + s2.astype(int)
    images = np.einsum("rij,rj->ri", np.stack(group)[g_idx], rows)
    return g_idx, images


def _offset_permutations(offsets):
    dim = offsets.shape[1]
    lookup = {tuple(d): i for i, d in enumerate(offsets.tolist())}
    perms = []
    for g in _symmetry_group(dim):
        img = offsets @ g.T
        try:
            perms.append(np.array([lookup[tuple(v)] for v in img.tolist()]))
        except KeyError as exc:
            raise RuntimeError("offset set is not closed under lattice symmetries") from exc
    return perms


class RowTable:
    """Coefficients for many lattice rows, computed once per symmetry/invariance class.

    Rows are mapped into the fundamental domain of the lattice symmetries (when the
    stretch allows it), cartesian rows are collapsed along unstretched axes, and the
    coefficients of the distinct representatives are tabulated.  ``rows(start, stop)``
    then expands any slice back to the original rows and offset order.
    """

    def __init__(self, kernel, stretch, h, rows, offsets, rules, exploit_symmetry=True,
                 exploit_invariance=True, chunk=4096):
        rows = np.asarray(rows, dtype=np.int64)
        n = rows.shape[0]
        if exploit_symmetry and stretch.symmetric:
            self.g_idx, images = _canonicalise(rows)
            self.perms = _offset_permutations(offsets)
        else:
            self.g_idx, images = np.zeros(n, dtype=int), rows
            self.perms = [np.arange(offsets.shape[0])]
        reps, inverse = np.unique(images, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        if exploit_invariance and rows.shape[1] == 2:
            red = _axis_reduce(stretch, h, reps, offsets)
            if red is not None:
                reps, inverse = red[0], red[1][inverse]
        self.inverse = inverse
        self.n_representatives = reps.shape[0]
        self.table = np.empty((reps.shape[0], offsets.shape[0]), dtype=complex)
        for start in range(0, reps.shape[0], chunk):
            self.table[start:start + chunk] = _table(kernel, stretch, h, reps[start:start + chunk], offsets,
                                                     rules, exploit_invariance)

    def rows(self, start=0, stop=None):
        inv = self.inverse[start:stop]
        g = self.g_idx[start:stop]
        out = self.table[inv]
        for gi, perm in enumerate(self.perms):
            sel = g == gi
            if gi and np.any(sel):
                out[sel] = out[sel][:, perm]
        return out


def row_coefficients(kernel, stretch, h, rows, offsets, rules, exploit_symmetry=True,
                     exploit_invariance=True):
    """Coefficient table of shape ``(len(rows), len(offsets))`` for lattice ``rows``."""
    return RowTable(kernel, stretch, h, rows, offsets, rules, exploit_symmetry, exploit_invariance).rows()


def _axis_reduce(stretch, h, rows, offsets):
    """Collapse cartesian rows along axes where the whole stencil is unstretched.

    The integrand only sees differences along such an axis, so the row index there
    can be replaced by 0.  Returns ``(reduced_unique_rows, inverse)`` or None.
    """
    if stretch.style != "cartesian" or not stretch.active:
        return None
    reach = np.abs(offsets).max(axis=0) + 0.5
    inner = np.array([stretch.cfg.inner_extent, stretch.cfg_x2.inner_extent])
    free = (np.abs(rows) + reach[None, :]) * h <= inner[None, :]
    if not np.any(free):
        return None
    reduced = np.where(free, 0, rows)
    uniq, inverse = np.unique(reduced, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def _table(kernel, stretch, h, rows, offsets, rules, exploit_invariance):
    out = np.empty((rows.shape[0], offsets.shape[0]), dtype=complex)
    pos = rows * h
    if dim_of(rows) == 1:
        row_free = stretch.unstretched(pos[:, 0], margin=0.5 * h)
    else:
        row_free = stretch.unstretched(pos, margin=0.5 * h)
    for j, (d, rule) in enumerate(zip(offsets, rules)):
        if not exploit_invariance:
            out[:, j] = _evaluate(kernel, stretch, h, rows, rule)
            continue
        mpos = (rows + d) * h
        col_free = stretch.unstretched(mpos[:, 0] if mpos.shape[1] == 1 else mpos, margin=0.5 * h)
        free = row_free & col_free
        if np.any(free):
            out[free, j] = _free_value(kernel, h, rule)
        busy = ~free
        if np.any(busy):
            out[busy, j] = _evaluate(kernel, stretch, h, rows[busy], rule)
    return out


def dim_of(rows):
    return rows.shape[1]


# ---------------------------------------------------------------------------
# public operations


def _as_stretch(stretch, dim, shape=None):
    if isinstance(stretch, Stretch):
        return stretch
    if stretch is None:
        return Stretch("1d" if dim == 1 else "cartesian", None)
    if isinstance(stretch, StretchConfig):
        if dim == 1:
            return Stretch("1d", stretch)
        return Stretch("polar" if shape == "disk" else "cartesian", stretch)
    raise TypeError(f"cannot interpret {stretch!r} as a stretch")


def _check_kernel(kernel, stretch):
    if kernel.is_piecewise_constant and not kernel.smoothed and stretch.active:
        raise ValueError("the sharp piecewise-constant kernel has no complex continuation; use smoothed=True")


def _single(kernel, stretch, grid, n, m, order, rtol):
    dim = grid.dim
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    m = np.atleast_1d(np.asarray(m, dtype=np.int64))
    d = m - n
    if not np.any(d):
        raise ValueError("coefficient requested for m == n; the diagonal is a row sum")
    stretch = _as_stretch(stretch, dim, getattr(grid, "shape", None))
    _check_kernel(kernel, stretch)
    horizon = kernel.horizon
    offsets = stencil_offsets(kernel, grid.h, dim, horizon)
    if not any(np.array_equal(d, o) for o in offsets):
        return 0j
    rule = build_rules(kernel, grid.h, d[None, :], horizon, order, rtol,
                       rates=stretch_rates(stretch, kernel))[0]
    if not rule.converged:
        raise QuadratureError(f"quadrature did not converge for row {n.tolist()}, column {m.tolist()}")
    return complex(_evaluate(kernel, stretch, grid.h, n[None, :], rule)[0])


def coeff_1d(kernel, stretch, grid, n, m, order=DEFAULT_ORDER, rtol=1e-10):
    """Stencil coefficient between lattice nodes ``n`` and ``m`` of a 1D grid."""
    return _single(kernel, stretch, grid, n, m, order, rtol)


def coeff_2d(kernel, stretch, grid, n, m, order=DEFAULT_ORDER, rtol=1e-10):
    """Stencil coefficient between multi-indices ``n`` and ``m`` of a 2D grid."""
    return _single(kernel, stretch, grid, n, m, order, rtol)


def row_stencil(kernel, stretch, grid, n, order=DEFAULT_ORDER, rtol=1e-10):
    """All off-diagonal coefficients of row ``n`` and the (row-sum) diagonal."""
    dim = grid.dim
    stretch = _as_stretch(stretch, dim, getattr(grid, "shape", None))
    offsets = stencil_offsets(kernel, grid.h, dim)
    rules = build_rules(kernel, grid.h, offsets, kernel.horizon, order, rtol, rates=stretch_rates(stretch, kernel))
    row = np.atleast_1d(np.asarray(n, dtype=np.int64))[None, :]
    vals = row_coefficients(kernel, stretch, grid.h, row, offsets, rules)[0]
    return StencilCoefficients(offsets=offsets, values=vals, diagonal=-vals.sum())


def _node_lookup(grid):
    if grid.dim == 1:
        n0 = int(grid.index[0])
        unknown_id = np.full(grid.n_nodes, -1, dtype=np.int64)
        unknown_id[grid.unknowns] = np.arange(grid.unknowns.size)

        def find(lattice):
            pos = lattice[..., 0] - n0
            ok = (pos >= 0) & (pos < grid.n_nodes)
            res = np.full(pos.shape, -1, dtype=np.int64)
            res[ok] = unknown_id[pos[ok]]
            return res

        return find
    table = grid.lookup()
    half = grid.half_width
    unknown_id = np.full(grid.n_nodes, -1, dtype=np.int64)
    unknown_id[grid.unknowns] = np.arange(grid.unknowns.size)

    def find(lattice):
        p = lattice + half
        ok = np.all((p >= 0) & (p <= 2 * half), axis=-1)
        res = np.full(p.shape[:-1], -1, dtype=np.int64)
        node = table[p[ok][:, 0], p[ok][:, 1]]
        res[ok] = np.where(node >= 0, unknown_id[np.maximum(node, 0)], -1)
        return res

    return find


def check_source_support(values, grid, rel_tol=1e-10):
    outside = ~grid.interior_mask
    peak = np.max(np.abs(values)) if values.size else 0.0
    if peak > 0 and np.any(np.abs(values[outside]) > rel_tol * peak):
        raise ValueError("source support extends beyond the interior region")


def assemble(kernel, stretch, grid, source, k, *, order=DEFAULT_ORDER, rtol=1e-10,
             exploit_symmetry=True, exploit_invariance=True, strict=False, row_chunk=8192):
    """Assemble ``sum_m a_{n,m} u_m - k^2 J(x_n) u_n = f(x_n)`` over interior and PML nodes.

    Columns on the boundary layer (or beyond the grid) are dropped, which imposes the
    zero volume constraint; they still enter the diagonal through the row sum.
    Fractional kernels add the analytic tail mass beyond the truncation radius.
    """
    dim = grid.dim
    if kernel.dim != dim:
        raise ValueError(f"kernel is {kernel.dim}D but grid is {dim}D")
    stretch = _as_stretch(stretch, dim, getattr(grid, "shape", None))
    _check_kernel(kernel, stretch)
    if dim == 2 and stretch.active:
        expected = "polar" if grid.shape == "disk" else "cartesian"
        if stretch.style != expected:
            raise ValueError(f"{grid.shape} domains use the {expected} PML")
    h = grid.h
    horizon = kernel.horizon
    if not math.isfinite(horizon):
        pos = grid.nodes[grid.unknown_mask]
        span = np.ptp(pos) if dim == 1 else float(np.max(np.hypot(pos[:, 0], pos[:, 1]))) * 2
        kernel = kernel.with_truncation(span)
        horizon = kernel.horizon
    if grid.delta_b + 1e-12 < horizon and not kernel.is_fractional:
        warnings.warn("boundary layer is thinner than the kernel horizon", stacklevel=2)

    offsets = stencil_offsets(kernel, h, dim, horizon)
    unknown_nodes = grid.unknowns
    lattice = grid.index[unknown_nodes]
    if dim == 1:
        lattice = lattice[:, None]
    extent = float(np.max(np.linalg.norm(lattice, axis=1))) * h + horizon + h
    rates = stretch_rates(stretch, kernel, extent=extent)
    rules = build_rules(kernel, h, offsets, horizon, order, rtol, rates=rates)
    bad = [r.offset for r in rules if not r.converged]
    if bad:
        msg = f"quadrature tolerance not met for offsets {bad[:5]}{'...' if len(bad) > 5 else ''}"
        if strict:
            raise QuadratureError(msg)
        warnings.warn(msg, QuadratureWarning, stacklevel=2)

    nu = unknown_nodes.size
    pos = lattice * h
    _, jac = stretch(pos[:, 0] if dim == 1 else pos)
    tail = tail_mass(kernel, horizon) if kernel.is_fractional else 0.0

    # insert d = 0 so that columns come out sorted within each row

    zero_at = bisect.bisect_left([tuple(o) for o in offsets.tolist()], tuple([0] * dim))
    find = _node_lookup(grid)
    table = RowTable(kernel, stretch, h, lattice, offsets, rules, exploit_symmetry, exploit_invariance)
    # write straight into preallocated CSR arrays: wide 2D stencils are memory-bound
    width = offsets.shape[0] + 1
    itype = np.int32 if nu * width < np.iinfo(np.int32).max else np.int64
    indptr = np.zeros(nu + 1, dtype=itype)
    indices = np.empty(nu * width, dtype=itype)
    data = np.empty(nu * width, dtype=complex)
    nnz = 0
    diag = np.empty(nu, dtype=complex)
    max_band = 0
    for start in range(0, nu, row_chunk):
        rows = lattice[start:start + row_chunk]
        stop = start + rows.shape[0]
        vals = table.rows(start, stop)
        dg = -vals.sum(axis=1) - k**2 * jac[start:stop] + tail
        diag[start:stop] = dg
        cols = find(rows[:, None, :] + offsets[None, :, :])
        cols = np.insert(cols, zero_at, np.arange(start, stop), axis=1)
        vals = np.insert(vals, zero_at, dg, axis=1)
        keep = cols >= 0
        if dim == 1 and np.any(keep):
            band = np.abs(cols - np.arange(start, stop)[:, None])
            max_band = max(max_band, int(band[keep].max()))
        counts = keep.sum(axis=1)
        indptr[start + 1:stop + 1] = nnz + np.cumsum(counts)
        m = int(counts.sum())
        indices[nnz:nnz + m] = cols[keep]
        data[nnz:nnz + m] = vals[keep]
        nnz += m
        del vals, cols, keep
    matrix = sp.csr_matrix((data[:nnz], indices[:nnz], indptr), shape=(nu, nu), copy=False)

    node_pos = grid.nodes
    fvals = np.asarray(source(node_pos), dtype=complex) if source is not None else np.zeros(grid.n_nodes, complex)
    check_source_support(fvals, grid)
    rhs = np.where(grid.classes[unknown_nodes] == IndexClass.INTERIOR, fvals[unknown_nodes], 0.0)

    meta = {
        "h": h,
        "dim": dim,
        "k": k,
        "horizon": horizon,
        "n_offsets": int(offsets.shape[0]),
        "order": order,
        "rtol": rtol,
        "tail_mass": tail,
        "unconverged_offsets": [list(o) for o in bad],
        "stretch_style": stretch.style,
        "pml_active": stretch.active,
    }
    return SparseComplexSystem(matrix=matrix, rhs=rhs.astype(complex), grid=grid, unknown_nodes=unknown_nodes,
                               bandwidth=max_band if dim == 1 else None, metadata=meta)


def dump_system(system, path, header_path=None, extra=None):
    """Write the matrix as ``row col re im`` lines plus a JSON header alongside."""
    coo = system.matrix.tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
    header = dict(system.metadata)
    header.update({"n_unknowns": int(system.n_unknowns), "nnz": int(coo.nnz)})
    if extra:
        header.update(extra)
    header_path = header_path or str(path) + ".json"
    with open(header_path, "w") as fh:
        json.dump(header, fh, indent=2, default=str)
    return header_path

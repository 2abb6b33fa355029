import cmath
import math

import numpy as np
import pytest
from scipy import integrate

from nlhelm.assembly import (_weight_2d, assemble, coeff_1d, coeff_2d, dump_system, row_stencil,
                             stencil_offsets)
from nlhelm.grid import IndexClass, build_grid_1d, build_grid_2d
from nlhelm.kernel import KernelSpec, eval_complex, tail_mass
from nlhelm.sources import GaussianSource, wave_source_1d
from nlhelm.stretch import AbsorptionProfile, Stretch, StretchConfig, stretch_1d, stretch_2d_cartesian

K = 2 * math.pi


def _cquad(f, a, b, points=()):
    pts = sorted(p for p in set(points) if a < p < b)
    edges = [a, *pts, b]
    total = 0j
    for lo, hi in zip(edges, edges[1:]):
        total += integrate.quad(f, lo, hi, complex_func=True, epsabs=1e-15, epsrel=1e-13, limit=400)[0]
    return total


def oracle_1d(kernel, cfg, h, n, m):
    """Brute-force coefficient: hat-weighted integral with the stretched kernel."""
    xn, xm = n * h, m * h

    def g(y):
        X = (xm + y) / 2
        Y = xn + (xm - y) / 2
        if cfg is None:
            sx, ax, sy, ay = X, 1.0, Y, 1.0
        else:
            sx, ax = stretch_1d(cfg, X)
            sy, ay = stretch_1d(cfg, Y)
        if abs(y - xn) > kernel.horizon:
            return 0j
        return (1 - abs(y - xm) / h) * (y - xn) * complex(eval_complex(kernel, complex(sx - sy))) * ax * ay

    l = 1.0 if cfg is None else cfg.profile.inner_extent
    # kinks: hat peak, ramp onsets for X and Y
    pts = [xm, 2 * l - xm, -2 * l - xm, xm + 2 * (xn - l), xm + 2 * (xn + l)]
    return -_cquad(g, xm - h, xm + h, pts) / ((m - n) * h)


@pytest.mark.parametrize("n,m,z", [(3, 5, 0), (-7, -6, 0), (36, 38, 40 + 40j), (50, 47, 40 + 40j), (31, 33, 40j)])
def test_coeff_1d_matches_oracle(n, m, z):
    kernel = KernelSpec("Exponential1D", c_gamma=0.9 / K)
    h = 2.0**-5
    cfg = StretchConfig(z, K, AbsorptionProfile(1.0, 1.0)) if z else None
    grid = build_grid_1d(h, 1.0, 1.0, kernel.horizon)
    stretch = Stretch("1d", cfg)
    val = coeff_1d(kernel, stretch, grid, n, m)
    ref = oracle_1d(kernel, cfg, h, n, m)
    assert abs(val - ref) <= 1e-10 * abs(ref)


def test_constant_kernel_coefficient():
    kernel = KernelSpec("PiecewiseConstant1D", delta=1.0, smoothed=False)
    h = 0.125
    grid = build_grid_1d(h, 1.0, 1.0, 1.0)
    c = kernel.constant
    for d in (1, 2, 5):
        assert coeff_1d(kernel, None, grid, 0, d) == pytest.approx(-c * h, rel=1e-12)


def test_beyond_cutoff_is_zero():
    kernel = KernelSpec("PiecewiseConstant1D", delta=0.25, smoothed=False)
    grid = build_grid_1d(2**-4, 1.0, 1.0, 0.25)
    assert coeff_1d(kernel, None, grid, 0, 6) == 0
    k2 = KernelSpec("PiecewiseConstant2D", delta=0.25, smoothed=False)
    g2 = build_grid_2d(0.125, "square", 1.0, 1.0, 0.25)
    assert coeff_2d(k2, None, g2, (0, 0), (5, 0)) == 0


def test_m_equal_n_rejected():
    kernel = KernelSpec("Exponential1D", c_gamma=0.2)
    grid = build_grid_1d(0.125, 1.0, 1.0, kernel.horizon)
    with pytest.raises(ValueError):
        coeff_1d(kernel, None, grid, 2, 2)


def test_weight_function():
    h = 0.1
    w = _weight_2d(np.array([[h, 0.0], [h, h], [2 * h, h]]))
    assert w == pytest.approx([h, h, 5 * h / 3], rel=1e-14)


def test_constant_kernel_2d_oracle():
    kernel = KernelSpec("PiecewiseConstant2D", delta=1.0, smoothed=False)
    h = 0.125
    grid = build_grid_2d(h, "square", 1.0, 1.0, 1.0)
    c = kernel.constant
    val = coeff_2d(kernel, None, grid, (0, 0), (1, 0))

    def f(y2, y1):
        phi = (1 - abs(y1 - h) / h) * (1 - abs(y2) / h)
        return phi * (y1 * y1 + y2 * y2) / (abs(y1) + abs(y2))

    total = 0.0
    for a, b in ((0, h), (h, 2 * h)):
        for cc, dd in ((-h, 0), (0, h)):
            total += integrate.dblquad(f, a, b, cc, dd, epsabs=1e-15, epsrel=1e-13)[0]
    assert val == pytest.approx(-c / h * total, rel=1e-10)


def test_coeff_2d_pml_oracle():
    kernel = KernelSpec("Exponential2D", c_gamma=0.1)
    h = 0.125
    cfg = StretchConfig(20j, K, AbsorptionProfile(1.0, 1.0))
    grid = build_grid_2d(h, "square", 1.0, 1.0, kernel.horizon)
    n, m = np.array([9, 3]), np.array([10, 4])
    val = coeff_2d(kernel, Stretch("cartesian", cfg), grid, n, m)
    xn, xm = n * h, m * h

    def g(y2, y1, part):
        y = np.array([y1, y2])
        X = (xm + y) / 2
        Y = xn + (xm - y) / 2
        sx, jx = stretch_2d_cartesian(cfg, cfg, X)
        sy, jy = stretch_2d_cartesian(cfg, cfg, Y)
        e = sx - sy
        dist = cmath.sqrt(e[0] ** 2 + e[1] ** 2)
        kv = kernel.constant * cmath.exp(-dist / kernel.c_gamma)
        phi = (1 - abs(y1 - xm[0]) / h) * (1 - abs(y2 - xm[1]) / h)
        v = phi * _weight_2d(y - xn) * kv * jx * jy
        return v.real if part == 0 else v.imag

    total = 0j
    for a, b in ((xm[0] - h, xm[0]), (xm[0], xm[0] + h)):
        for cc, dd in ((xm[1] - h, xm[1]), (xm[1], xm[1] + h)):
            re = integrate.dblquad(g, a, b, cc, dd, args=(0,), epsabs=1e-13, epsrel=1e-12)[0]
            im = integrate.dblquad(g, a, b, cc, dd, args=(1,), epsabs=1e-13, epsrel=1e-12)[0]
            total += re + 1j * im
    ref = -total / _weight_2d(xm - xn)
    assert abs(val - ref) <= 1e-9 * abs(ref)


def test_unknowns_and_bandwidth():
    kernel = KernelSpec("PiecewiseConstant1D", delta=0.25)
    grid = build_grid_1d(2**-4, 1.0, 1.0, 0.25)
    system = assemble(kernel.with_truncation(0.25), None, grid, wave_source_1d(K), K)
    assert system.n_unknowns == 65
    assert 2 * system.bandwidth + 1 <= 9


def test_zero_source_gives_zero_rhs():
    kernel = KernelSpec("Exponential1D", c_gamma=0.9 / K)
    grid = build_grid_1d(2**-4, 1.0, 1.0, kernel.horizon)
    cfg = StretchConfig(40 + 40j, K, AbsorptionProfile(1.0, 1.0))
    system = assemble(kernel, cfg, grid, GaussianSource(0.0, 1.0), K)
    assert not np.any(system.rhs)


def test_source_outside_domain_rejected():
    kernel = KernelSpec("Exponential1D", c_gamma=0.9 / K)
    grid = build_grid_1d(2**-4, 1.0, 1.0, kernel.horizon)
    with pytest.raises(ValueError):
        assemble(kernel, None, grid, GaussianSource(1.0, 0.5), K)


@pytest.mark.parametrize("dim", [1, 2])
def test_constant_annihilation(dim):
    if dim == 1:
        kernel = KernelSpec("Exponential1D", c_gamma=0.9 / K, truncation_radius=0.25)
        grid = build_grid_1d(2**-5, 1.0, 1.0, kernel.horizon)
        stretch = Stretch("1d", StretchConfig(40 + 40j, K, AbsorptionProfile(1.0, 1.0)))
        f = wave_source_1d(K)
    else:
        kernel = KernelSpec("Exponential2D", c_gamma=0.1 / K, truncation_radius=20 * 0.1 / K)
        grid = build_grid_2d(2**-3, "square", 1.0, 1.0, kernel.horizon)
        stretch = Stretch("cartesian", StretchConfig(20j, K, AbsorptionProfile(1.0, 1.0)))
        f = GaussianSource(2 * math.sqrt(math.pi), 4 * math.pi**2, 2)
    system = assemble(kernel, stretch, grid, f, K)
    pos = grid.nodes[system.unknown_nodes]
    _, jac = stretch(pos)
    A = system.matrix
    sums = np.asarray(A.sum(axis=1)).ravel() + K**2 * jac
    # rows whose whole stencil stays on unknowns
    full = np.diff(A.indptr) == len(stencil_offsets(kernel, grid.h, dim)) + 1
    assert full.sum() > 0
    scale = np.abs(A.diagonal())
    assert np.all(np.abs(sums[full]) <= 1e-12 * scale[full])


def test_pml_transparency():
    kernel = KernelSpec("Exponential2D", c_gamma=0.1 / K, truncation_radius=20 * 0.1 / K)
    grid = build_grid_2d(2**-3, "square", 1.0, 1.0, kernel.horizon)
    f = GaussianSource(2 * math.sqrt(math.pi), 4 * math.pi**2, 2)
    idle = Stretch("cartesian", StretchConfig(20j, K, AbsorptionProfile(100.0, 1.0)))
    a = assemble(kernel, idle, grid, f, K, exploit_invariance=False, exploit_symmetry=False).matrix
    b = assemble(kernel, None, grid, f, K).matrix
    assert abs(a - b).max() <= 1e-12 * abs(b).max()


def test_no_pml_symmetry_1d():
    kernel = KernelSpec("Exponential1D", c_gamma=0.9 / K)
    grid = build_grid_1d(2**-5, 1.0, 1.0, kernel.horizon)
    A = assemble(kernel, None, grid, wave_source_1d(K), K).matrix.toarray()
    inner = np.flatnonzero(np.abs(grid.nodes[grid.unknowns]) <= 1.0)
    sub = A[np.ix_(inner, inner)]
    assert np.allclose(sub, sub.T, rtol=1e-10, atol=1e-10 * np.abs(sub).max())


def test_fractional_diagonal_includes_tail():
    kernel = KernelSpec("Fractional1D", s_order=0.5, truncation_radius=1.0)
    grid = build_grid_1d(2**-4, 1.0, 1.0, 1.0)
    system = assemble(kernel, None, grid, wave_source_1d(K), K)
    row = row_stencil(kernel, None, grid, 0)
    i = int(np.flatnonzero(grid.index[system.unknown_nodes] == 0)[0])
    diag = system.matrix[i, i]
    plain = row.diagonal - K**2
    assert diag - plain == pytest.approx(tail_mass(kernel, 1.0), rel=1e-12)


def test_operator_consistency():
    # rows applied to cos(x) approximate cos(x_n) * symbol(1) to second order
    c = 0.1
    kernel = KernelSpec("Exponential1D", c_gamma=c)
    errs = []
    for h in (2.0**-4, 2.0**-5):
        grid = build_grid_1d(h, 1.0, 1.0, kernel.horizon)
        A = assemble(kernel, None, grid, None, 1.0).matrix
        u = np.cos(grid.nodes[grid.unknowns])
        i = int(np.flatnonzero(grid.index[grid.unknowns] == 0)[0])
        errs.append(abs((A @ u)[i] + 1.0 - 1.0 / (1.0 + c * c)))
    assert errs[1] < errs[0] / 3


def test_dump_system(tmp_path):
    kernel = KernelSpec("Exponential1D", c_gamma=0.9 / K)
    grid = build_grid_1d(2**-3, 1.0, 1.0, kernel.horizon)
    system = assemble(kernel, None, grid, wave_source_1d(K), K)
    dump_system(system, tmp_path / "a.txt")
    lines = (tmp_path / "a.txt").read_text().splitlines()
    assert len(lines) == system.matrix.nnz
    assert (tmp_path / "a.txt.json").exists()


def test_classes_of_rhs():
    kernel = KernelSpec("Exponential1D", c_gamma=0.9 / K)
    grid = build_grid_1d(2**-4, 1.0, 1.0, kernel.horizon)
    system = assemble(kernel, StretchConfig(40j, K, AbsorptionProfile(1.0, 1.0)), grid, wave_source_1d(K), K)
    pml = grid.classes[system.unknown_nodes] == IndexClass.PML
    assert not np.any(system.rhs[pml])

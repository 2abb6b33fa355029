import math

import numpy as np
import pytest
import scipy.sparse as sp

from nlhelm.assembly import assemble
from nlhelm.grid import build_grid_1d, build_grid_2d
from nlhelm.kernel import KernelSpec
from nlhelm.solver import SolveOptions, SolverError, lumped_stencil, solve
from nlhelm.sources import GaussianSource, wave_source_1d
from nlhelm.stretch import AbsorptionProfile, Stretch, StretchConfig

K = 2 * math.pi


def _system_1d(h=2**-5):
    kernel = KernelSpec("Exponential1D", c_gamma=0.9 / K)
    grid = build_grid_1d(h, 1.0, 1.0, kernel.horizon)
    cfg = StretchConfig(40 + 40j, K, AbsorptionProfile(1.0, 1.0))
    return assemble(kernel, cfg, grid, wave_source_1d(K), K)


def _system_2d(shape="square"):
    c = 0.1 / K
    kernel = KernelSpec("Exponential2D", c_gamma=c, truncation_radius=20 * c)
    grid = build_grid_2d(2**-3, shape, 1.0, 1.0, kernel.horizon)
    style = "cartesian" if shape == "square" else "polar"
    stretch = Stretch(style, StretchConfig(20j, K, AbsorptionProfile(1.0, 1.0)))
    return assemble(kernel, stretch, grid, GaussianSource(2 * math.sqrt(math.pi), 4 * math.pi**2, 2), K)


@pytest.mark.parametrize("method", ["banded", "sparse_lu", "dense", "gmres"])
def test_identity(method):
    A = sp.identity(5, dtype=complex, format="csr")
    b = np.arange(1, 6) + 1j
    rep = solve((A, b), method=method, preconditioner="ilu")
    assert np.allclose(rep.solution, b, rtol=1e-14)


@pytest.mark.parametrize("method", ["banded", "sparse_lu", "dense"])
def test_diagonal(method):
    A = sp.diags([2.0, 1 + 1j]).tocsr()
    rep = solve((A, np.array([1.0, 1.0 + 0j])), method=method)
    assert rep.solution == pytest.approx([0.5, 0.5 - 0.5j], rel=1e-14)


def test_dense_oracle_1d():
    system = _system_1d()
    x = solve(system, method="banded").solution
    ref = np.linalg.solve(system.matrix.toarray(), system.rhs)
    assert np.linalg.norm(x - ref) <= 1e-9 * np.linalg.norm(ref)


def test_methods_agree_2d():
    system = _system_2d()
    ref = solve(system, method="sparse_lu").solution
    for opts in (SolveOptions(method="gmres", preconditioner="lumped"), SolveOptions(method="gmres")):
        x = solve(system, opts).solution
        assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_polar_gmres():
    system = _system_2d("disk")
    rep = solve(system, method="gmres", preconditioner="lumped")
    assert rep.residual <= 1e-10 and rep.iterations > 0


def test_linearity():
    system = _system_1d(2**-4)
    A = system.matrix
    rng = np.random.default_rng(3)
    b1 = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
    b2 = rng.standard_normal(A.shape[0])
    x1 = solve((A, b1), method="banded").solution
    x2 = solve((A, b2), method="banded").solution
    x3 = solve((A, 2 * b1 - 3j * b2), method="banded").solution
    assert np.allclose(x3, 2 * x1 - 3j * x2, rtol=1e-10, atol=1e-12)


def test_zero_rhs():
    A = sp.identity(3, dtype=complex, format="csr")
    rep = solve((A, np.zeros(3)))
    assert rep.method == "trivial" and not np.any(rep.solution)
    with pytest.raises(ValueError):
        solve((A, np.zeros(3)), allow_zero_rhs=False)


def test_field_has_zero_boundary():
    system = _system_1d(2**-4)
    rep = solve(system)
    g = system.grid
    assert rep.field.size == g.n_nodes
    assert not np.any(rep.field[~g.unknown_mask])


@pytest.mark.parametrize("method", ["sparse_lu", "dense", "banded"])
def test_singular_reported(method):
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]], dtype=complex))
    with pytest.raises(SolverError):
        solve((A, np.array([1.0, 0.0])), method=method)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        solve((sp.identity(3, format="csr"), np.ones(2)))


def test_bad_options():
    with pytest.raises(ValueError):
        SolveOptions(method="cg")
    with pytest.raises(ValueError):
        SolveOptions(preconditioner="jacobi")


def test_gmres_iteration_limit():
    system = _system_2d()
    with pytest.raises(SolverError) as err:
        solve(system, SolveOptions(method="gmres", preconditioner="lumped", max_iters=2, restart=2, tol=1e-14))
    assert "history" in err.value.diagnostics


def test_lumped_keeps_row_sums_and_is_narrow():
    system = _system_2d()
    lat = system.grid.index[system.unknown_nodes]
    P = lumped_stencil(system.matrix, lat)
    assert np.max(np.diff(P.indptr)) <= 5
    full = np.diff(system.matrix.indptr) == np.max(np.diff(system.matrix.indptr))
    full &= np.diff(P.indptr) == 5
    s_a = np.asarray(system.matrix.sum(axis=1)).ravel()
    s_p = np.asarray(P.sum(axis=1)).ravel()
    assert np.allclose(s_p[full], s_a[full], rtol=1e-12, atol=1e-10)

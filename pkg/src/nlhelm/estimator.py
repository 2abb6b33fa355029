"""Estimator-style facade: ``fit`` assembles and solves, ``predict`` samples the field."""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .assembly import assemble
from .grid import build_grid_1d, build_grid_2d
from .kernel import KernelSpec
from .solver import SolveOptions, solve
from .sources import standard_source
from .stretch import AbsorptionProfile, Stretch, StretchConfig

_STYLE = {"interval": "1d", "square": "cartesian", "disk": "polar"}


class NonlocalPMLSolver(BaseEstimator):
    """Nonlocal Helmholtz solve on a PML-truncated grid.

    Parameters mirror the experiment config keys.  ``source`` is a named source
    (``gaussian_1d``, ``gaussian_2d_exp``, ``gaussian_2d_frac``) or a callable of the
    node coordinates.  ``fit`` ignores its data arguments; they exist for pipeline
    compatibility.
    """

    def __init__(self, kernel="Exponential1D", c_gamma=None, delta=None, s=None, truncation_radius=None,
                 k=2 * math.pi, z=40 + 40j, l=1.0, d_pml=1.0, shape="interval", h=2**-6, delta_b=None,
                 source="gaussian_1d", method="auto", tol=1e-10, order=8):
        self.kernel = kernel
        self.c_gamma = c_gamma
        self.delta = delta
        self.s = s
        self.truncation_radius = truncation_radius
        self.k = k
        self.z = z
        self.l = l
        self.d_pml = d_pml
        self.shape = shape
        self.h = h
        self.delta_b = delta_b
        self.source = source
        self.method = method
        self.tol = tol
        self.order = order

    def _kernel_spec(self):
        c = self.c_gamma
        if c is None and self.kernel.startswith("Exponential"):
            c = 0.9 / self.k
        return KernelSpec(self.kernel, c_gamma=c, delta=self.delta, s_order=self.s,
                          truncation_radius=self.truncation_radius)

    def fit(self, X=None, y=None):
        if self.shape not in _STYLE:
            raise ValueError(f"unknown shape {self.shape!r}")
        spec = self._kernel_spec()
        horizon = spec.horizon
        delta_b = self.delta_b
        if delta_b is None:
            delta_b = horizon if math.isfinite(horizon) else self.h
        if self.shape == "interval":
            grid = build_grid_1d(self.h, self.l, self.d_pml, delta_b)
        else:
            grid = build_grid_2d(self.h, self.shape, self.l, self.d_pml, delta_b)
        cfg = StretchConfig(self.z, self.k, AbsorptionProfile(self.l, self.d_pml)) if self.z != 0 else None
        stretch = Stretch(_STYLE[self.shape], cfg)
        f = standard_source(self.source, self.k) if isinstance(self.source, str) else self.source
        self.system_ = assemble(spec, stretch, grid, f, self.k, order=self.order)
        self.report_ = solve(self.system_, SolveOptions(method=self.method, tol=self.tol))
        self.grid_ = grid
        self.field_ = self.report_.field
        self.n_unknowns_ = self.system_.n_unknowns
        return self

    def predict(self, X):
        """Linear interpolation of the nodal field at the rows of ``X`` (zero off the grid)."""
        check_is_fitted(self, "field_")
        X = check_array(X, dtype=float, ensure_2d=True)
        g = self.grid_
        if X.shape[1] != g.dim:
            raise ValueError(f"expected {g.dim} coordinate column(s), got {X.shape[1]}")
        if g.dim == 1:
            order = np.argsort(g.nodes)
            xs, vals = g.nodes[order], self.field_[order]
            re = np.interp(X[:, 0], xs, vals.real, left=0.0, right=0.0)
            im = np.interp(X[:, 0], xs, vals.imag, left=0.0, right=0.0)
            return re + 1j * im
        n = g.half_width
        table = np.zeros((2 * n + 1, 2 * n + 1), dtype=complex)
        table[g.index[:, 0] + n, g.index[:, 1] + n] = self.field_
        axis = np.arange(-n, n + 1) * g.h
        interp = RegularGridInterpolator((axis, axis), table, bounds_error=False, fill_value=0.0)
        return interp(X)

    def score(self, X, y):
        """Negative relative discrepancy ``-||predict(X) - y|| / ||y||``."""
        pred = self.predict(X)
        y = np.asarray(y)
        return -float(np.linalg.norm(pred - y) / max(np.linalg.norm(y), np.finfo(float).tiny))

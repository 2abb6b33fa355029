"""Uniform grids over the truncated domain and their node classification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

_TOL = 1e-12


class IndexClass(IntEnum):
    INTERIOR = 0
    PML = 1
    BOUNDARY_LAYER = 2


def _as_multiple(value, h, name):
    ratio = value / h
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(f"{name}={value} is not an integer multiple of h={h}")
    return n


def _cells(delta_b, h):
    return max(1, math.ceil(delta_b / h - 1e-9))


@dataclass(frozen=True)
class Grid1D:
    h: float
    l: float
    d_pml: float
    delta_b: float
    index: np.ndarray = field(repr=False)
    classes: np.ndarray = field(repr=False)

    dim = 1

    @property
    def nodes(self):
        return self.index * self.h

    @property
    def n_nodes(self):
        return self.index.size

    @property
    def unknown_mask(self):
        return self.classes != IndexClass.BOUNDARY_LAYER

    @property
    def unknowns(self):
        return np.flatnonzero(self.unknown_mask)

    @property
    def interior_mask(self):
        return self.classes == IndexClass.INTERIOR

    def classify(self, x):
        return classify_1d(x, self.l, self.d_pml, self.h * _cells(self.delta_b, self.h))

    def node_of(self, x):
        n = round(x / self.h)
        return int(n - self.index[0])


def classify_1d(x, l, d_pml, delta_b):
    ax = np.abs(np.asarray(x, dtype=float))
    cls = np.full(ax.shape, IndexClass.BOUNDARY_LAYER, dtype=np.int8)
    cls[ax <= l + d_pml + _TOL] = IndexClass.PML
    cls[ax <= l + _TOL] = IndexClass.INTERIOR
    if np.any(ax > l + d_pml + delta_b + _TOL):
        raise ValueError("point outside the truncated domain")
    return cls


def build_grid_1d(h, l, d_pml, delta_b):
    """Uniform grid on ``[-l-d_pml-delta_b, l+d_pml+delta_b]`` with ``delta_b`` rounded up to whole cells."""
    if h <= 0 or delta_b <= 0:
        raise ValueError("h and delta_b must be positive")
    m1 = _as_multiple(l, h, "l")
    m2 = _as_multiple(d_pml, h, "d_pml")
    nb = _cells(delta_b, h)
    n = m1 + m2 + nb
    index = np.arange(-n, n + 1)
    classes = classify_1d(index * h, l, d_pml, nb * h)
    return Grid1D(h=h, l=l, d_pml=d_pml, delta_b=delta_b, index=index, classes=classes)


@dataclass(frozen=True)
class Grid2D:
    h: float
    shape: str
    l: float
    d_pml: float
    delta_b: float
    index: np.ndarray = field(repr=False)
    classes: np.ndarray = field(repr=False)

    dim = 2

    @property
    def nodes(self):
        return self.index * self.h

    @property
    def n_nodes(self):
        return self.index.shape[0]

    @property
    def unknown_mask(self):
        return self.classes != IndexClass.BOUNDARY_LAYER

    @property
    def unknowns(self):
        return np.flatnonzero(self.unknown_mask)

    @property
    def interior_mask(self):
        return self.classes == IndexClass.INTERIOR

    @property
    def half_width(self):
        return int(np.abs(self.index).max())

    def classify(self, x):
        return classify_2d(x, self.shape, self.l, self.d_pml, self.h * _cells(self.delta_b, self.h))

    def lookup(self):
        """Dense ``(2N+1, 2N+1)`` table mapping lattice index to node position, -1 if absent."""
        n = self.half_width
        table = np.full((2 * n + 1, 2 * n + 1), -1, dtype=np.int64)
        table[self.index[:, 0] + n, self.index[:, 1] + n] = np.arange(self.n_nodes)
        return table


def _norm(x, shape):
    x = np.asarray(x, dtype=float)
    if shape == "square":
        return np.max(np.abs(x), axis=-1)
    return np.hypot(x[..., 0], x[..., 1])


def classify_2d(x, shape, l, d_pml, delta_b):
    if shape not in ("square", "disk"):
        raise ValueError(f"unknown domain shape {shape!r}")
    r = _norm(x, shape)
    cls = np.full(r.shape, IndexClass.BOUNDARY_LAYER, dtype=np.int8)
    cls[r <= l + d_pml + _TOL] = IndexClass.PML
    cls[r <= l + _TOL] = IndexClass.INTERIOR
    if np.any(r > l + d_pml + delta_b + _TOL):
        raise ValueError("point outside the truncated domain")
    return cls


def build_grid_2d(h, shape, l, d_pml, delta_b):
    """Cartesian lattice over a square (sup-norm layers) or disk (Euclidean layers).

    ``l`` is the half side of the square or the radius ``l_r`` of the disk.
    """
    if shape not in ("square", "disk"):
        raise ValueError(f"unknown domain shape {shape!r}")
    if h <= 0 or delta_b <= 0:
        raise ValueError("h and delta_b must be positive")
    m1 = _as_multiple(l, h, "l")
    m2 = _as_multiple(d_pml, h, "d_pml")
    nb = _cells(delta_b, h)
    n = m1 + m2 + nb
    i1, i2 = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
    index = np.stack([i1.ravel(), i2.ravel()], axis=1)
    outer = l + d_pml + nb * h
    keep = _norm(index * h, shape) <= outer + _TOL
    index = index[keep]
    classes = classify_2d(index * h, shape, l, d_pml, nb * h)
    return Grid2D(h=h, shape=shape, l=l, d_pml=d_pml, delta_b=delta_b, index=index, classes=classes)

"""Tensor-product phase-space grids.

Phase space is the box [-Lx,Lx]^d x [-Lv,Lv]^d discretized with midpoint
(cell-centered) nodes, nx cells per spatial axis and nv per velocity axis.
All quadrature in the package is the midpoint rule on these cells, which
keeps summation-by-parts identities exact for the drift-form operators.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _centers(L: float, n: int) -> np.ndarray:
    h = 2.0 * L / n
    return -L + (np.arange(n) + 0.5) * h


@dataclass(frozen=True)
class SpatialGrid:
    """Spatial part of a phase grid: [-Lx,Lx]^d with nx midpoint cells per axis."""

    d: int
    nx: int
    Lx: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if self.nx < 8:
            raise ValueError(f"nx must be >= 8, got {self.nx}")
        if self.Lx <= 0:
            raise ValueError("Lx must be positive")

    @property
    def hx(self) -> float:
        return 2.0 * self.Lx / self.nx

    @property
    def x(self) -> np.ndarray:
        return _centers(self.Lx, self.nx)

    @property
    def shape(self) -> tuple:
        return (self.nx,) * self.d

    @property
    def size(self) -> int:
        return self.nx**self.d

    @property
    def cell_volume(self) -> float:
        return self.hx**self.d

    def meshes(self):
        """Broadcastable coordinate arrays, one per axis."""
        return np.meshgrid(*([self.x] * self.d), indexing="ij", sparse=True)

    def radius_sq(self) -> np.ndarray:
        m = self.meshes()
        out = m[0] ** 2
        for a in m[1:]:
            out = out + a**2
        return out


@dataclass(frozen=True)
class PhaseGrid:
    """Phase-space grid. Axes 0..d-1 are x, axes d..2d-1 are v."""

    d: int
    nx: int
    nv: int
    Lx: float
    Lv: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if self.nx < 8 or self.nv < 8:
            raise ValueError(f"nx, nv must be >= 8, got nx={self.nx}, nv={self.nv}")
        if self.Lx <= 0 or self.Lv <= 0:
            raise ValueError("Lx, Lv must be positive")

    @property
    def hx(self) -> float:
        return 2.0 * self.Lx / self.nx

    @property
    def hv(self) -> float:
        return 2.0 * self.Lv / self.nv

    @property
    def x(self) -> np.ndarray:
        return _centers(self.Lx, self.nx)

    @property
    def v(self) -> np.ndarray:
        return _centers(self.Lv, self.nv)

    @property
    def shape(self) -> tuple:
        return (self.nx,) * self.d + (self.nv,) * self.d

    @property
    def size(self) -> int:
        return self.nx**self.d * self.nv**self.d

    @property
    def cell_volume(self) -> float:
        return self.hx**self.d * self.hv**self.d

    @property
    def spatial(self) -> SpatialGrid:
        return SpatialGrid(self.d, self.nx, self.Lx)

    def axis_coord(self, axis: int) -> np.ndarray:
        """1D coordinate values along a phase axis (x for axis<d, else v)."""
        return self.x if axis < self.d else self.v

    def axis_h(self, axis: int) -> float:
        return self.hx if axis < self.d else self.hv

    def broadcast_1d(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Reshape a 1D per-axis array so it broadcasts along `axis`."""
        shape = [1] * (2 * self.d)
        shape[axis] = len(values)
        return values.reshape(shape)

    def v_meshes(self):
        """Broadcastable velocity coordinate arrays (one per v-axis)."""
        return [self.broadcast_1d(self.v, self.d + k) for k in range(self.d)]

    def x_meshes(self):
        return [self.broadcast_1d(self.x, k) for k in range(self.d)]

    def v_radius_sq(self) -> np.ndarray:
        out = self.v_meshes()[0] ** 2
        for a in self.v_meshes()[1:]:
            out = out + a**2
        return out

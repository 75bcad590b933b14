"""Phase-space and spatial fields, with flat binary serialization.

Binary layout (little-endian): magic b"KRLX", version u32, d u32, nx u32,
nv u32, Lx f64, Lv f64, then row-major float64 values.  nv = 0 marks a
spatial field; the payload length distinguishes scalar (nx^d values) from
vector (d * nx^d values) spatial fields.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grids import PhaseGrid, SpatialGrid

_MAGIC = b"KRLX"
_VERSION = 1


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DistributionField:
    """Phase-space density sampled at cell centers."""

    grid: PhaseGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def mass(self) -> float:
        return float(self.values.sum()) * self.grid.cell_volume

    def with_values(self, values: np.ndarray) -> "DistributionField":
        return DistributionField(self.grid, values)

    def __add__(self, other):
        _check_same_grid(self, other)
        return DistributionField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return DistributionField(self.grid, self.values - other.values)

    def __mul__(self, c: float):
        return DistributionField(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpatialField:
    """Scalar or d-vector field on the spatial grid."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape == self.grid.shape:
            pass
        elif v.shape == (self.grid.d,) + self.grid.shape:
            pass
        else:
            raise ValueError(
                f"values shape {v.shape} matches neither scalar {self.grid.shape} "
                f"nor vector {(self.grid.d,) + self.grid.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == self.grid.d + 1

    @property
    def sup(self) -> float:
        if self.is_vector:
            return float(np.sqrt((self.values**2).sum(axis=0)).max())
        return float(np.abs(self.values).max())

    def __sub__(self, other):
        if self.grid != other.grid:
            raise ValueError("grid mismatch")
        return SpatialField(self.grid, self.values - other.values)


def _check_same_grid(f, g):
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


# ---------------------------------------------------------------------------
# serialization

_HEADER = struct.Struct("<4sIIII dd")


def write_field(path, f) -> None:
    """Write a DistributionField or SpatialField in the flat binary format."""
    if isinstance(f, DistributionField):
        g = f.grid
        hdr = _HEADER.pack(_MAGIC, _VERSION, g.d, g.nx, g.nv, g.Lx, g.Lv)
    elif isinstance(f, SpatialField):
        g = f.grid
        hdr = _HEADER.pack(_MAGIC, _VERSION, g.d, g.nx, 0, g.Lx, 0.0)
    else:
        raise TypeError(f"cannot serialize {type(f)}")
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path):
    """Read a field written by write_field; returns the matching field type."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, version, d, nx, nv, Lx, Lv = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != _VERSION:
            raise ValueError(f"unsupported version {version}")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if nv > 0:
        grid = PhaseGrid(d, nx, nv, Lx, Lv)
        return DistributionField(grid, payload.reshape(grid.shape))
    sgrid = SpatialGrid(d, nx, Lx)
    if payload.size == sgrid.size:
        return SpatialField(sgrid, payload.reshape(sgrid.shape))
    if payload.size == d * sgrid.size:
        return SpatialField(sgrid, payload.reshape((d,) + sgrid.shape))
    raise ValueError(f"payload size {payload.size} fits no field on the stored grid")


def write_csv_slice(path, f, axis_pair=None, fixed=None, header_lines=()) -> None:
    """Write a 1D/2D slice of a field as CSV rows (coord1[, coord2], value).

    axis_pair selects which axes vary (defaults to the first one or two);
    all remaining axes are held at `fixed` indices (default: middle cell).
    """
    vals = f.values
    ndim = vals.ndim
    if axis_pair is None:
        axis_pair = tuple(range(min(2, ndim)))
    axis_pair = tuple(axis_pair)
    if len(axis_pair) not in (1, 2):
        raise ValueError("axis_pair must select one or two axes")
    idx = []
    for ax in range(ndim):
        if ax in axis_pair:
            idx.append(slice(None))
        else:
            i = (fixed or {}).get(ax, vals.shape[ax] // 2)
            idx.append(i)
    sub = vals[tuple(idx)]
    coords = []
    for ax in axis_pair:
        if isinstance(f, DistributionField):
            coords.append(f.grid.axis_coord(ax))
        else:
            coords.append(f.grid.x)
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        if len(axis_pair) == 1:
            fh.write("coord,value\n")
            for c, val in zip(coords[0], sub):
                fh.write(f"{c:.17g},{val:.17g}\n")
        else:
            fh.write("coord1,coord2,value\n")
            for i, c1 in enumerate(coords[0]):
                for j, c2 in enumerate(coords[1]):
                    fh.write(f"{c1:.17g},{c2:.17g},{sub[i, j]:.17g}\n")

"""Uniform axis-aligned box grids and per-node field containers.

Grids carry node classification (interior vs boundary) and the exact
Euclidean distance to the boundary of the box, which the cutoff bands
are built from.  Fields are immutable after construction; their arrays
are marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError

_H_RTOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ChartGrid:
    """Nodes of a uniform grid on a box in chart coordinates."""

    dim: int
    lo: np.ndarray                 # (dim,)
    hi: np.ndarray                 # (dim,)
    res: tuple                     # nodes per axis
    h: float
    points: np.ndarray = field(repr=False)            # (*shape, dim)
    interior_mask: np.ndarray = field(repr=False)     # (*shape,) bool
    boundary_distance: np.ndarray = field(repr=False)  # (*shape,)

    @property
    def shape(self) -> tuple:
        return tuple(self.res)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.res))

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.linspace(self.lo[axis], self.hi[axis], self.res[axis])

    def node_index(self, flat: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))


def build_grid(dim: int, bounds, resolution) -> ChartGrid:
    """Create the grid; spacing must come out identical on every axis.

    bounds: sequence of (lo, hi) per axis.  resolution: nodes per axis,
    a single integer or one per axis (>= 5 each).
    """
    if dim < 2:
        raise GridError(f"dimension must be >= 2, got {dim}")
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (dim, 2):
        raise GridError(f"bounds must have shape ({dim}, 2), got {bounds.shape}")
    if np.isscalar(resolution) or isinstance(resolution, (int, np.integer)):
        res = tuple(int(resolution) for _ in range(dim))
    else:
        res = tuple(int(r) for r in resolution)
        if len(res) != dim:
            raise GridError(f"need one resolution per axis, got {len(res)}")
    for r in res:
        if r < 5:
            raise GridError(f"resolution must be >= 5 nodes per axis, got {r}")
    lo, hi = bounds[:, 0], bounds[:, 1]
    widths = hi - lo
    if np.any(widths <= 0):
        raise GridError("degenerate bounds: each axis needs hi > lo")
    spacings = widths / (np.asarray(res) - 1)
    h = float(spacings[0])
    if np.any(np.abs(spacings - h) > _H_RTOL * max(h, 1.0)):
        raise GridError(
            f"spacing must be identical on every axis, got {spacings.tolist()}")

    axes = [np.linspace(lo[a], hi[a], res[a]) for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack(mesh, axis=-1)

    # distance to the faces of the box, exact for boxes
    dist = np.minimum.reduce(
        [np.minimum(mesh[a] - lo[a], hi[a] - mesh[a]) for a in range(dim)])
    dist = np.maximum(dist, 0.0)

    interior = np.ones(tuple(res), dtype=bool)
    for a in range(dim):
        sl = [slice(None)] * dim
        sl[a] = 0
        interior[tuple(sl)] = False
        sl[a] = -1
        interior[tuple(sl)] = False

    interior.flags.writeable = False
    return ChartGrid(dim=dim, lo=_readonly(lo), hi=_readonly(hi), res=res, h=h,
                     points=_readonly(points), interior_mask=interior,
                     boundary_distance=_readonly(dist))


def _check_grid_values(grid: ChartGrid, values: np.ndarray, trailing: tuple, kind: str):
    expect = grid.shape + trailing
    if values.shape != expect:
        raise GridError(f"{kind} values must have shape {expect}, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise GridError(f"{kind} contains non-finite values")


@dataclass(frozen=True)
class ScalarField:
    grid: ChartGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_grid_values(self.grid, np.asarray(self.values, dtype=float),
                           (), "ScalarField")
        object.__setattr__(self, "values", _readonly(self.values))

    @classmethod
    def from_function(cls, grid: ChartGrid, fn) -> "ScalarField":
        """fn maps a (..., dim) coordinate array to values."""
        return cls(grid, np.asarray(fn(grid.points), dtype=float))

    @classmethod
    def constant(cls, grid: ChartGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))


@dataclass(frozen=True)
class CovectorField:
    grid: ChartGrid
    values: np.ndarray = field(repr=False)  # (*shape, dim)

    def __post_init__(self):
        _check_grid_values(self.grid, np.asarray(self.values, dtype=float),
                           (self.grid.dim,), "CovectorField")
        object.__setattr__(self, "values", _readonly(self.values))


def symmetrize_upper(a: np.ndarray) -> np.ndarray:
    """Copy the upper triangle onto the lower one (bit-exact symmetry)."""
    upper = np.triu(a)
    return upper + np.swapaxes(np.triu(a, 1), -1, -2)


@dataclass(frozen=True)
class Sym2Field:
    """Symmetric rank-2 field; the upper triangle is the stored source of truth."""

    grid: ChartGrid
    values: np.ndarray = field(repr=False)  # (*shape, dim, dim)

    def __post_init__(self):
        n = self.grid.dim
        vals = symmetrize_upper(np.asarray(self.values, dtype=float))
        _check_grid_values(self.grid, vals, (n, n), "Sym2Field")
        object.__setattr__(self, "values", _readonly(vals))

    @classmethod
    def from_function(cls, grid: ChartGrid, fn) -> "Sym2Field":
        return cls(grid, np.asarray(fn(grid.points), dtype=float))

    @classmethod
    def identity(cls, grid: ChartGrid, scale: float = 1.0) -> "Sym2Field":
        n = grid.dim
        vals = np.zeros(grid.shape + (n, n))
        vals[...] = scale * np.eye(n)
        return cls(grid, vals)

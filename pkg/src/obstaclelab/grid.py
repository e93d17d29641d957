"""Uniform structured grids on boxes in 1, 2 or 3 dimensions.

Fields are stored as numpy arrays of shape ``grid.extent`` in row-major
(C) order, axis 0 slowest.  Everything here is immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "Grid",
    "ScalarField",
    "GridSizeError",
    "DomainError",
    "node_values",
    "laplacian_apply",
    "interpolate",
    "interpolate_many",
    "sphere_quadrature",
    "ball_volume",
    "sphere_area",
    "write_snapshot",
    "read_snapshot",
]


class GridSizeError(ValueError):
    """Grid too small for the requested stencil or sampling."""


class DomainError(ValueError):
    """A point or ball leaves the grid box."""


BoundaryData = Union[float, np.ndarray, Callable[..., np.ndarray]]


@dataclass(frozen=True)
class Grid:
    """Uniform grid: node ``i`` sits at ``origin + h * i``."""

    dim: int
    extent: tuple[int, ...]
    h: float
    origin: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        object.__setattr__(self, "extent", tuple(int(n) for n in self.extent))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "h", float(self.h))
        if len(self.extent) != self.dim or len(self.origin) != self.dim:
            raise ValueError("extent and origin must have one entry per axis")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"spacing must be positive, got {self.h}")
        if min(self.extent) < 3:
            raise GridSizeError(f"need at least 3 nodes per axis, got {self.extent}")

    @classmethod
    def from_box(cls, lo: Sequence[float], hi: Sequence[float], h: float) -> "Grid":
        """Grid covering ``[lo, hi]`` per axis; each side must be a multiple of h."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        cells = (hi - lo) / h
        ncell = np.rint(cells).astype(int)
        if np.any(np.abs(cells - ncell) > 1e-9 * np.maximum(1.0, cells)):
            raise ValueError(f"box sides {hi - lo} are not multiples of h={h}")
        return cls(len(lo), tuple(ncell + 1), h, tuple(lo))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.extent

    @property
    def size(self) -> int:
        return int(np.prod(self.extent))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.h * (np.array(self.extent) - 1)

    def axis(self, k: int) -> np.ndarray:
        """Node coordinates along axis ``k``."""
        return self.origin[k] + self.h * np.arange(self.extent[k])

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.axis(k) for k in range(self.dim)), indexing="ij"))

    def points(self) -> np.ndarray:
        """All node coordinates as an ``(size, dim)`` array in row-major order."""
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    def coordinate(self, index: Sequence[int]) -> np.ndarray:
        return self.lo + self.h * np.asarray(index, dtype=float)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.extent, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        mask.setflags(write=False)
        return mask

    @property
    def interior(self) -> tuple[slice, ...]:
        return (slice(1, -1),) * self.dim

    @property
    def interior_shape(self) -> tuple[int, ...]:
        return tuple(n - 2 for n in self.extent)

    def contains(self, point, slack: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        eps = 1e-12 * self.h + slack
        return bool(np.all(p >= self.lo - eps) and np.all(p <= self.hi + eps))

    def ball_inside(self, center, r: float) -> bool:
        """True if the closed ball B_r(center) lies in the closed box."""
        c = np.asarray(center, dtype=float)
        eps = 1e-12 * self.h
        return bool(np.all(c - r >= self.lo - eps) and np.all(c + r <= self.hi + eps))

    def distance_to_boundary(self, point) -> float:
        p = np.asarray(point, dtype=float)
        return float(min(np.min(p - self.lo), np.min(self.hi - p)))

    def describe(self) -> dict:
        return {"dim": self.dim, "extent": list(self.extent), "h": self.h, "origin": list(self.origin)}


def node_values(grid: Grid, data: BoundaryData) -> np.ndarray:
    """Evaluate ``data`` at every node.

    ``data`` may be a scalar, an array of shape ``grid.extent`` or a callable
    taking one coordinate array per axis (meshgrid layout).
    """
    if callable(data):
        out = np.asarray(data(*grid.mesh()), dtype=float)
        return np.broadcast_to(out, grid.extent).copy()
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.extent, float(arr))
    if arr.shape == grid.extent:
        return arr.copy()
    if arr.size == grid.size:
        return arr.reshape(grid.extent).copy()
    raise ValueError(f"data of shape {arr.shape} does not match grid {grid.extent}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node values on a grid. The values array is made read-only."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.extent:
            if v.size != self.grid.size:
                raise ValueError(f"values shape {v.shape} does not match grid {self.grid.extent}")
            v = v.reshape(self.grid.extent)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, f: BoundaryData) -> "ScalarField":
        return cls(grid, node_values(grid, f))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.extent))

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.grid.boundary_mask

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        axes = tuple(self.grid.axis(k) for k in range(self.grid.dim))
        return RegularGridInterpolator(axes, self.values, method="linear", bounds_error=True)

    def __call__(self, points) -> np.ndarray:
        return interpolate_many(self, points)


def laplacian_apply(field: ScalarField) -> ScalarField:
    """Second-order (2n+1)-point Laplacian; boundary nodes are set to 0."""
    grid = field.grid
    if min(grid.extent) < 3:
        raise GridSizeError("Laplacian needs at least 3 nodes per axis")
    u = field.values
    out = np.zeros(grid.extent)
    core = grid.interior
    for k in range(grid.dim):
        plus = list(core)
        minus = list(core)
        plus[k] = slice(2, None)
        minus[k] = slice(None, -2)
        out[core] += u[tuple(plus)] - 2.0 * u[core] + u[tuple(minus)]
    out[core] /= grid.h**2
    return ScalarField(grid, out)


def _clip_to_box(grid: Grid, pts: np.ndarray) -> np.ndarray:
    lo, hi = grid.lo, grid.hi
    eps = 1e-10 * grid.h
    if np.any(pts < lo - eps) or np.any(pts > hi + eps):
        bad = pts[np.any((pts < lo - eps) | (pts > hi + eps), axis=1)][0]
        raise DomainError(f"point {bad} outside the grid box [{lo}, {hi}]")
    return np.clip(pts, lo, hi)


def interpolate_many(field: ScalarField, points) -> np.ndarray:
    """Multilinear interpolation at an ``(m, dim)`` array of points."""
    pts = np.asarray(points, dtype=float).reshape(-1, field.grid.dim)
    pts = _clip_to_box(field.grid, pts)
    return field._interpolator(pts)


def interpolate(field: ScalarField, point) -> float:
    return float(interpolate_many(field, np.asarray(point, dtype=float)[None, :])[0])


def ball_volume(n: int, r: float = 1.0) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n


def sphere_area(n: int, r: float = 1.0) -> float:
    """Surface measure of the sphere of radius r in R^n (counting measure for n=1)."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2) * r ** (n - 1)


def sphere_quadrature(center, r: float, m: int, grid: Grid | None = None):
    """Equal-weight quadrature on the sphere of radius ``r`` about ``center``.

    Returns ``(points, weights)`` with weights summing to the surface measure.
    2D uses equally spaced angles, 3D a Fibonacci lattice; in 1D the sphere is
    the pair ``center -+ r`` with unit weights and ``m`` is ignored.
    """
    c = np.atleast_1d(np.asarray(center, dtype=float))
    n = c.size
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    if grid is not None and not grid.ball_inside(c, r):
        raise DomainError(f"ball B_{r}({c}) leaves the grid box")
    if n == 1:
        return np.array([[c[0] - r], [c[0] + r]]), np.ones(2)
    if m < 16:
        raise ValueError(f"need at least 16 sphere samples, got {m}")
    if n == 2:
        theta = 2.0 * np.pi * np.arange(m) / m
        unit = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    elif n == 3:
        k = np.arange(m) + 0.5
        z = 1.0 - 2.0 * k / m
        phi = np.pi * (3.0 - math.sqrt(5.0)) * np.arange(m)
        s = np.sqrt(1.0 - z * z)
        unit = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    else:
        raise ValueError(f"unsupported dimension {n}")
    weights = np.full(m, sphere_area(n, r) / m)
    return c + r * unit, weights


def write_snapshot(field: ScalarField, path) -> None:
    """Plain-text snapshot: ``dim h n1 [n2 [n3]] origin...`` then one value per line."""
    g = field.grid
    header = " ".join([str(g.dim), repr(g.h), *map(str, g.extent), *map(repr, g.origin)])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, field.values.ravel(order="C"), fmt="%.17g")


def read_snapshot(path) -> ScalarField:
    path = Path(path)
    with open(path) as fh:
        tokens = fh.readline().split()
        dim = int(tokens[0])
        h = float(tokens[1])
        extent = tuple(int(t) for t in tokens[2 : 2 + dim])
        origin = tuple(float(t) for t in tokens[2 + dim : 2 + 2 * dim])
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    grid = Grid(dim, extent, h, origin)
    return ScalarField(grid, values.reshape(extent))

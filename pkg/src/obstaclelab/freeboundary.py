"""Contact sets, free-boundary points and quadratic-growth diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .grid import ScalarField, write_snapshot

__all__ = [
    "ContactGeometry",
    "GrowthReport",
    "contact_set",
    "growth_ratio",
    "default_delta",
    "hausdorff",
    "slab_flatness",
    "write_fb_points",
    "read_fb_points",
    "write_mask",
]


def default_delta(h: float) -> float:
    """Zero threshold at the quadratic-growth scale, h**2."""
    return h * h


@dataclass(frozen=True, eq=False)
class ContactGeometry:
    """``zero_mask`` marks nodes with ``u < delta``; ``fb_points`` lie on the
    grid edges joining a masked and an unmasked node."""

    zero_mask: np.ndarray
    fb_points: np.ndarray
    delta: float
    edges: np.ndarray = dc_field(repr=False)

    @property
    def count(self) -> int:
        return len(self.fb_points)


def contact_set(field: ScalarField, delta: float | None = None) -> ContactGeometry:
    """Threshold ``field`` at ``delta`` and place free-boundary points.

    On each edge where the mask changes the point is the zero of the linear
    interpolant of ``u - delta``. Points are ordered by axis, then row-major.
    """
    grid = field.grid
    delta = default_delta(grid.h) if delta is None else float(delta)
    if not delta > 0:
        raise ValueError("delta must be positive")
    u = field.values
    mask = u < delta
    flat = np.arange(grid.size).reshape(grid.extent)
    pts, edges = [], []
    for k in range(grid.dim):
        a = [slice(None)] * grid.dim
        b = [slice(None)] * grid.dim
        a[k], b[k] = slice(None, -1), slice(1, None)
        ua, ub = u[tuple(a)], u[tuple(b)]
        change = mask[tuple(a)] != mask[tuple(b)]
        if not change.any():
            continue
        ia = flat[tuple(a)][change]
        ib = flat[tuple(b)][change]
        fa, fb = ua[change] - delta, ub[change] - delta
        t = fa / (fa - fb)
        base = np.stack(np.unravel_index(ia, grid.extent), axis=1).astype(float)
        base[:, k] += t
        pts.append(grid.lo + grid.h * base)
        edges.append(np.stack([ia, ib], axis=1))
    if pts:
        fb = np.concatenate(pts)
        ed = np.concatenate(edges)
    else:
        fb = np.zeros((0, grid.dim))
        ed = np.zeros((0, 2), dtype=int)
    mask.setflags(write=False)
    return ContactGeometry(mask, fb, delta, ed)


@dataclass(frozen=True)
class GrowthReport:
    """``ratios`` holds ``(r, sup_{B_r} u / r^2)`` in increasing r."""

    center: tuple[float, ...]
    ratios: list[tuple[float, float]]
    skipped: list[float]

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.ratios])


def growth_ratio(field: ScalarField, x0, radii) -> GrowthReport:
    """Normalised sup of ``u`` over closed balls about ``x0``.

    Radii whose ball leaves the box are skipped and listed in ``skipped``.
    """
    grid = field.grid
    x0 = np.asarray(x0, dtype=float)
    radii = sorted(float(r) for r in radii)
    if radii and radii[0] < 4 * grid.h * (1 - 1e-12):
        raise ValueError(f"radius {radii[0]} below 4h = {4 * grid.h}")
    pts = grid.points()
    dist = np.linalg.norm(pts - x0, axis=1)
    vals = field.values.ravel()
    ratios, skipped = [], []
    for r in radii:
        if not grid.ball_inside(x0, r):
            skipped.append(r)
            continue
        inside = dist <= r * (1 + 1e-12)
        ratios.append((r, float(vals[inside].max()) / r**2))
    return GrowthReport(tuple(x0), ratios, skipped)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point clouds."""
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


def slab_flatness(fb_points: np.ndarray, x0, e, radii) -> list[tuple[float, float]]:
    """Measured flatness of the free boundary near ``x0`` in direction ``e``.

    For each ``r`` returns ``(r, max |e.(p - x0)| / r)`` over the points ``p``
    within distance ``r`` of ``x0``; radii with no points are left out. Near a
    regular point this should tend to zero with ``r``. It is a diagnostic only.
    """
    x0 = np.asarray(x0, dtype=float)
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    d = np.asarray(fb_points, dtype=float).reshape(-1, len(x0)) - x0
    dist = np.linalg.norm(d, axis=1)
    normal = np.abs(d @ e)
    out = []
    for r in sorted(float(r) for r in radii):
        inside = dist <= r
        if inside.any():
            out.append((r, float(normal[inside].max()) / r))
    return out


def write_fb_points(geom: ContactGeometry, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for p in geom.fb_points:
            w.writerow([repr(float(c)) for c in p])


def read_fb_points(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append([float(c) for c in row])
    return np.array(rows)


def write_mask(field: ScalarField, geom: ContactGeometry, path) -> None:
    write_snapshot(field.with_values(geom.zero_mask.astype(float)), path)

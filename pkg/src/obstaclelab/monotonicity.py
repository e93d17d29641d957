"""Monneau's functional ``M(r) = r^-(n+3) ∫_{∂B_r(x0)} (u - p(· - x0))^2``."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .blowup import SingularProfile, classify_point, default_sphere_samples, project_psd_trace1
from .grid import ScalarField, interpolate_many, sphere_quadrature

__all__ = ["MonneauCurve", "monneau", "check_monotone", "write_curve", "read_curve",
           "default_slack", "fitted_matrix"]

FORM_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class MonneauCurve:
    center: np.ndarray
    A: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    m: int
    rescaled_values: np.ndarray
    skipped: tuple[float, ...] = ()

    @property
    def form_discrepancy(self) -> float:
        if len(self.values) == 0:
            return 0.0
        return float(np.max(np.abs(self.values - self.rescaled_values)))


def _singular_matrix(p, n: int) -> np.ndarray:
    if isinstance(p, SingularProfile):
        A = np.asarray(p.A, dtype=float)
    else:
        A = np.asarray(p, dtype=float)
    if A.shape != (n, n):
        raise ValueError(f"p must be an {n}x{n} matrix")
    vals = np.linalg.eigvalsh(0.5 * (A + A.T))
    if vals.min() < -1e-9 or abs(vals.sum() - 1.0) > 1e-9:
        raise ValueError("p must be PSD with unit trace")
    return A


def monneau(field: ScalarField, x0, p, radii, m: int | None = None) -> MonneauCurve:
    """Evaluate ``M(r, u, p)`` at each admissible radius.

    ``p`` is a trace-one PSD matrix (or :class:`SingularProfile`). The direct
    sphere sum and the rescaled unit-sphere form are both computed; they must
    agree within 1e-10. Radii whose ball leaves the box or that are below 4h
    are skipped.
    """
    grid = field.grid
    n = grid.dim
    x0 = np.asarray(x0, dtype=float)
    A = _singular_matrix(p, n)
    m = m or default_sphere_samples(n)
    unit, unit_w = sphere_quadrature(np.zeros(n), 1.0, m)
    kept, direct, scaled, skipped = [], [], [], []
    for r in sorted(float(r) for r in radii):
        if r < 4 * grid.h * (1 - 1e-12) or not grid.ball_inside(x0, r):
            skipped.append(r)
            continue
        y, w = sphere_quadrature(x0, r, m)
        d = y - x0
        diff = interpolate_many(field, y) - 0.5 * np.einsum("qi,ij,qj->q", d, A, d)
        direct.append(np.dot(w, diff * diff) / r ** (n + 3))
        ur = interpolate_many(field, x0 + r * unit) / r**2
        diff1 = ur - 0.5 * np.einsum("qi,ij,qj->q", unit, A, unit)
        scaled.append(np.dot(unit_w, diff1 * diff1))
        kept.append(r)
    curve = MonneauCurve(x0, A, np.array(kept), np.array(direct), m, np.array(scaled),
                         tuple(skipped))
    scale = max(1.0, float(np.max(curve.values))) if kept else 1.0
    if curve.form_discrepancy > FORM_TOLERANCE * scale:
        raise RuntimeError(f"direct and rescaled forms differ by {curve.form_discrepancy:.3e}")
    return curve


def check_monotone(curve: MonneauCurve, slack: float = 0.0) -> tuple[bool, float]:
    """Return ``(ok, worst)``: ``worst`` is the most negative increment (0 if none)."""
    if len(curve.values) < 2:
        raise ValueError("need at least two radii")
    inc = np.diff(curve.values)
    worst = float(min(0.0, inc.min()))
    return bool(np.all(inc >= -slack)), worst


def default_slack(h: float) -> float:
    return max(1e-6, 10.0 * h * h)


def write_curve(curve: MonneauCurve, path) -> None:
    """CSV ``r,M`` preceded by a one-line JSON header (prefixed with ``#``)."""
    header = {"center": curve.center.tolist(), "p_matrix": curve.A.tolist(), "m": curve.m}
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        fh.write("r,M\n")
        for r, v in zip(curve.radii, curve.values):
            fh.write(f"{float(r)!r},{float(v)!r}\n")


def read_curve(path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        header = json.loads(fh.readline()[1:])
        fh.readline()
        rows = [tuple(map(float, line.split(","))) for line in fh if line.strip()]
    return header, np.array(rows)


def fitted_matrix(field: ScalarField, x0, radii, thresholds=None) -> np.ndarray:
    """Singular-family fit at the finest admissible radius."""
    rep = classify_point(field, x0, radii, thresholds)
    return project_psd_trace1(rep.finest.A)

"""Desk-scale versions of the two applications: the Schaeffer sweep over the
additive family ``(f + t)_+`` and singular-time detection along a parabolic
trajectory."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .blowup import Thresholds, Verdict, classify_points
from .elliptic import DEFAULT_OMEGA, ConvergenceError, assemble_lcp, solve_psor
from .freeboundary import contact_set
from .grid import BoundaryData, Grid, ScalarField, node_values
from .parabolic import Trajectory

__all__ = [
    "TRecord",
    "SweepResult",
    "SingularTimesReport",
    "schaeffer_sweep",
    "singular_times",
    "flagged_hull",
    "maximal_runs",
    "subsample",
]


def subsample(points: np.ndarray, max_points: int | None) -> np.ndarray:
    """At most ``max_points`` rows, evenly spaced along the input order."""
    if max_points is None or len(points) <= max_points:
        return points
    idx = np.unique(np.linspace(0, len(points) - 1, max_points).round().astype(int))
    return points[idx]


@dataclass
class _Tally:
    regular: int = 0
    singular: int = 0
    undetermined: int = 0
    unresolved: int = 0
    singular_points: list = dc_field(default_factory=list)
    strata: list = dc_field(default_factory=list)


def _tally(field, points, radii, thresholds) -> _Tally:
    out = _Tally()
    for rep in classify_points(field, points, radii, thresholds, errors="skip"):
        if rep is None:
            out.unresolved += 1
        elif rep.verdict is Verdict.REGULAR:
            out.regular += 1
        elif rep.verdict is Verdict.SINGULAR:
            out.singular += 1
            out.singular_points.append(rep.point.tolist())
            out.strata.append(rep.stratum)
        else:
            out.undetermined += 1
    return out


@dataclass
class TRecord:
    t: float
    converged: bool
    iterations: int
    final_residual: float
    contact_nodes: int
    fb_count: int
    classified: int
    regular: int
    singular: int
    undetermined: int
    unresolved: int
    singular_points: list
    strata: list


@dataclass
class SweepResult:
    t_values: list[float]
    records: list[TRecord]
    grid: dict
    monotone: bool
    worst_increment: float
    nested: bool

    def flagged(self) -> list[float]:
        return [r.t for r in self.records if r.singular > 0]

    def failed(self) -> list[float]:
        return [r.t for r in self.records if not r.converged]

    def to_dict(self) -> dict:
        return {"t_values": self.t_values, "records": [asdict(r) for r in self.records],
                "grid": self.grid, "monotone": self.monotone,
                "worst_increment": self.worst_increment, "nested": self.nested}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _sweep_chunk(grid: Grid, base: np.ndarray, ts, radii, thresholds, omega, tol, maxit,
                 warm_start, max_points, delta):
    """Sequential sweep over ``ts``; returns records and monotonicity data."""
    records = []
    prev_u = prev_mask = first = None
    worst = np.inf
    nested = True
    for t in ts:
        problem = assemble_lcp(grid, np.maximum(base + t, 0.0))
        try:
            u, stats = solve_psor(problem, omega, tol, maxit,
                                  prev_u if warm_start and prev_u is not None else None)
        except ConvergenceError as err:
            st = err.stats
            records.append(TRecord(float(t), False, st.iterations, st.final_residual,
                                   0, 0, 0, 0, 0, 0, 0, [], []))
            continue
        geom = contact_set(u, delta)
        pts = subsample(geom.fb_points, max_points)
        tal = _tally(u, pts, radii, thresholds)
        records.append(TRecord(float(t), True, stats.iterations, stats.final_residual,
                               int(geom.zero_mask.sum()), geom.count, len(pts), tal.regular,
                               tal.singular, tal.undetermined, tal.unresolved, tal.singular_points, tal.strata))
        if prev_u is not None:
            worst = min(worst, float(np.min(u.values - prev_u.values)))
            nested &= bool(np.all(prev_mask | ~geom.zero_mask))
        else:
            first = (u.values, geom.zero_mask)
        prev_u, prev_mask = u, geom.zero_mask
    last = None if prev_u is None else (prev_u.values, prev_mask)
    return records, worst, nested, first, last


def schaeffer_sweep(grid: Grid, f: BoundaryData, t_values: Sequence[float],
                    thresholds: Thresholds | None = None, radii: Sequence[float] | None = None,
                    omega: float = DEFAULT_OMEGA, tol: float = 1e-10, maxit: int = 100_000,
                    warm_start: bool = True, workers: int = 1,
                    max_points: int | None = None) -> SweepResult:
    """Solve with data ``(f + t)_+`` for each ``t`` and classify the free boundary.

    ``t_values`` must be strictly increasing. With ``workers > 1`` the t list
    is cut into contiguous chunks, each swept in its own process; warm starts
    run within a chunk. Solutions must be nondecreasing in ``t`` within
    ``10*tol`` and contact masks nested; ``monotone`` and ``nested`` record
    whether that held. Non-converged ``t`` are recorded and skipped.
    """
    ts = [float(t) for t in t_values]
    if any(a >= b for a, b in zip(ts[:-1], ts[1:])):
        raise ValueError("t values must be strictly increasing")
    thresholds = thresholds or Thresholds()
    delta = thresholds.zero_threshold(grid.h)
    base = node_values(grid, f)
    args = (radii, thresholds, omega, tol, maxit, warm_start, max_points, delta)
    if workers <= 1 or len(ts) < 2:
        chunks = [_sweep_chunk(grid, base, ts, *args)]
    else:
        parts = [list(c) for c in np.array_split(np.array(ts), min(workers, len(ts))) if len(c)]
        with ProcessPoolExecutor(max_workers=len(parts)) as pool:
            futures = [pool.submit(_sweep_chunk, grid, base, p, *args) for p in parts]
            chunks = [fut.result() for fut in futures]
    records, worst, nested = [], np.inf, True
    last = None
    for recs, w, nst, first, end in chunks:
        records.extend(recs)
        worst = min(worst, w)
        nested &= nst
        if last is not None and first is not None:
            worst = min(worst, float(np.min(first[0] - last[0])))
            nested &= bool(np.all(last[1] | ~first[1]))
        if end is not None:
            last = end
    worst = 0.0 if not np.isfinite(worst) else worst
    return SweepResult(ts, records, grid.describe(), bool(worst >= -10 * tol), worst, bool(nested))


def maximal_runs(indices: Sequence[int]) -> list[tuple[int, int]]:
    """Group sorted integers into maximal runs of consecutive values."""
    runs = []
    for i in indices:
        if runs and i == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], i)
        else:
            runs.append((i, i))
    return runs


def flagged_hull(result: SweepResult) -> tuple[float, float] | None:
    """Smallest closed interval containing every flagged ``t``."""
    f = result.flagged()
    return (min(f), max(f)) if f else None


@dataclass
class SingularTimesReport:
    times: list[float]
    checked: list[int]
    flagged_steps: list[int]
    intervals: list[tuple[float, float]]
    fraction: float
    singular_points: dict[int, list]
    undetermined_steps: list[int]
    fb_counts: dict[int, int]

    @property
    def flagged_times(self) -> list[float]:
        return [self.times[k] for k in self.flagged_steps]

    @property
    def undetermined_times(self) -> list[float]:
        return [self.times[k] for k in self.undetermined_steps]

    def to_dict(self) -> dict:
        return {"flagged_steps": self.flagged_steps, "flagged_times": self.flagged_times,
                "intervals": self.intervals, "fraction": self.fraction,
                "checked_steps": self.checked,
                "singular_points": {str(k): v for k, v in self.singular_points.items()},
                "undetermined_steps": self.undetermined_steps,
                "undetermined_times": self.undetermined_times}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def singular_times(trajectory: Trajectory, thresholds: Thresholds | None = None,
                   radii: Sequence[float] | None = None, stride: int = 1,
                   max_points: int | None = None) -> SingularTimesReport:
    """Flag time levels with at least one Singular free-boundary point.

    Every ``stride``-th level is examined. A level where some point cannot be
    classified (too close to the box) and none is Singular counts as
    undetermined. Intervals are maximal runs of consecutive examined levels
    that are flagged, given as ``(t_first, t_last)``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    thresholds = thresholds or Thresholds()
    times = [float(t) for t in trajectory.times]
    delta = thresholds.zero_threshold(trajectory.grid.h)
    checked = list(range(0, len(times), stride))
    flagged, undetermined, points, counts = [], [], {}, {}
    for k in checked:
        field = trajectory.fields[k]
        geom = contact_set(field, delta)
        counts[k] = geom.count
        if geom.count == 0:
            continue
        tal = _tally(field, subsample(geom.fb_points, max_points), radii, thresholds)
        if tal.singular:
            flagged.append(k)
            points[k] = tal.singular_points
        elif tal.unresolved:
            undetermined.append(k)
    pos = {k: i for i, k in enumerate(checked)}
    runs = maximal_runs([pos[k] for k in flagged])
    intervals = [(times[checked[a]], times[checked[b]]) for a, b in runs]
    fraction = len(flagged) / len(checked) if checked else 0.0
    return SingularTimesReport(times, checked, flagged, intervals, fraction, points,
                               undetermined, counts)

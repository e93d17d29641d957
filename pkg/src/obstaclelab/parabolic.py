"""Backward-Euler time stepping for the parabolic obstacle problem

    ∂t u = Δu - χ{u>0},  u >= 0,  ∂t u >= 0,

plus the Duvaut transform between a temperature history θ and u.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid

from .elliptic import (
    ConstraintViolation,
    DEFAULT_OMEGA,
    SolveStats,
    boundary_load,
    laplacian_operator,
    solve_lcp,
)
from .freeboundary import default_delta
from .grid import BoundaryData, Grid, ScalarField, node_values, read_snapshot, write_snapshot

__all__ = [
    "Trajectory",
    "step_implicit",
    "solve_parabolic",
    "duvaut_forward",
    "temperature_from_u",
    "time_monotonicity",
    "contact_sets_nested",
    "save_trajectory",
    "load_trajectory",
]

MONOTONE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    fields: list[ScalarField]
    boundary_schedule: Callable | None = None
    tau: float | None = None
    stats: list[SolveStats] | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) != len(self.fields):
            raise ValueError("need one field per time")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if any(f.grid != self.fields[0].grid for f in self.fields):
            raise ValueError("all fields must share one grid")
        object.__setattr__(self, "times", t)

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    def stack(self) -> np.ndarray:
        return np.stack([f.values for f in self.fields])

    def __len__(self):
        return len(self.times)


class _Stepper:
    """Caches ``I/τ - Δ_h`` for repeated steps on one grid."""

    def __init__(self, grid: Grid, tau: float):
        if not tau > 0:
            raise ValueError("time step must be positive")
        self.grid = grid
        self.tau = float(tau)
        n = int(np.prod(grid.interior_shape))
        self.M = (laplacian_operator(grid) + sp.identity(n, format="csr") / tau).tocsr()

    def step(self, u_prev: ScalarField, boundary_next: np.ndarray, omega, tol, maxit):
        grid = self.grid
        bmask = grid.boundary_mask
        if np.any(u_prev.values < 0):
            raise ConstraintViolation("previous field must be nonnegative")
        if np.any(boundary_next[bmask] < u_prev.values[bmask] - MONOTONE_SLACK):
            raise ValueError("boundary data must not decrease in time")
        prev = u_prev.values[grid.interior].ravel()
        q = 1.0 - prev / self.tau - boundary_load(grid, boundary_next)
        z, stats = solve_lcp(self.M, q, prev, omega, tol, maxit)
        out = np.where(bmask, boundary_next, 0.0)
        out[grid.interior] = z.reshape(grid.interior_shape)
        return ScalarField(grid, out), stats


def step_implicit(u_prev: ScalarField, tau: float, boundary_next: BoundaryData,
                  omega: float = DEFAULT_OMEGA, tol: float = 1e-10, maxit: int = 100_000,
                  full_output: bool = False):
    """One backward-Euler step, solved as an LCP with operator ``I/τ - Δ_h``.

    On ``{v > 0}`` the returned ``v`` satisfies ``(v - u_prev)/τ = Δ_h v - 1``;
    elsewhere ``v = 0`` with a nonnegative residual.
    """
    grid = u_prev.grid
    bnext = node_values(grid, boundary_next)
    field, stats = _Stepper(grid, tau).step(u_prev, bnext, omega, tol, maxit)
    return (field, stats) if full_output else field


def solve_parabolic(grid: Grid, initial: ScalarField | BoundaryData,
                    boundary_schedule: Callable, tau: float, T: float,
                    omega: float = DEFAULT_OMEGA, tol: float = 1e-10,
                    maxit: int = 100_000) -> Trajectory:
    """March from ``t = 0`` to ``T`` in steps of ``tau``.

    ``boundary_schedule(t, *coords)`` gives the Dirichlet data for ``u``; it
    must be nonnegative and nondecreasing in ``t``. The initial field's
    boundary nodes are replaced by the schedule at ``t = 0``.
    """
    nsteps = int(round(T / tau))
    if nsteps < 1 or abs(nsteps * tau - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a positive multiple of tau={tau}")
    times = tau * np.arange(nsteps + 1)
    bmask = grid.boundary_mask

    def data(t):
        return node_values(grid, lambda *x: boundary_schedule(t, *x))

    b_prev = data(times[0])
    if np.any(b_prev[bmask] < 0):
        raise ConstraintViolation("boundary schedule must be nonnegative")
    # reject non-monotone schedules before doing any work
    b = b_prev
    for t in times[1:]:
        nb = data(t)
        if np.any(nb[bmask] < b[bmask] - MONOTONE_SLACK):
            raise ValueError(f"boundary schedule decreases before t={t:g}")
        b = nb
    init = initial if isinstance(initial, ScalarField) else ScalarField.from_function(grid, initial)
    u0 = np.where(bmask, b_prev, init.values)
    if np.any(u0 < 0):
        raise ConstraintViolation("initial field must be nonnegative")
    u = ScalarField(grid, u0)
    stepper = _Stepper(grid, tau)
    fields, stats = [u], []
    for t in times[1:]:
        u, st = stepper.step(u, data(t), omega, tol, maxit)
        fields.append(u)
        stats.append(st)
    return Trajectory(times, fields, boundary_schedule, float(tau), stats)


def duvaut_forward(theta: Trajectory) -> Trajectory:
    """``u(t) = ∫_{t0}^t θ ds`` nodewise, by the cumulative trapezoidal rule."""
    data = theta.stack()
    if np.any(data < 0):
        raise ConstraintViolation("temperature must be nonnegative")
    u = cumulative_trapezoid(data, theta.times, axis=0, initial=0.0)
    grid = theta.grid
    return Trajectory(theta.times, [ScalarField(grid, v) for v in u], None, theta.tau)


def temperature_from_u(u: Trajectory, slack: float = MONOTONE_SLACK) -> Trajectory:
    """``θ = ∂t u`` by centred differences inside, second-order one-sided at the ends."""
    if len(u) < 2:
        raise ValueError("need at least two time levels")
    data = u.stack()
    if len(u) > 1 and np.min(np.diff(data, axis=0)) < -slack:
        raise ValueError("trajectory is not nondecreasing in time")
    order = 2 if len(u) >= 3 else 1
    theta = np.gradient(data, u.times, axis=0, edge_order=order)
    grid = u.grid
    return Trajectory(u.times, [ScalarField(grid, v) for v in theta], None, u.tau)


def time_monotonicity(traj: Trajectory) -> float:
    """Smallest nodewise increment ``u_{k+1} - u_k`` over the trajectory."""
    if len(traj) < 2:
        return 0.0
    return float(np.min(np.diff(traj.stack(), axis=0)))


def contact_sets_nested(traj: Trajectory, delta: float | None = None) -> bool:
    """True if ``{u(t_k) < δ}`` contains ``{u(t_{k+1}) < δ}`` for every k."""
    delta = default_delta(traj.grid.h) if delta is None else delta
    masks = traj.stack() < delta
    return bool(np.all(~masks[1:] | masks[:-1]))


def save_trajectory(traj: Trajectory, directory) -> Path:
    """Write ``step_00000.txt ...`` snapshots plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(traj) - 1)))
    names = []
    for k, f in enumerate(traj.fields):
        name = f"step_{k:0{width}d}.txt"
        write_snapshot(f, d / name)
        names.append(name)
    manifest = {"times": traj.times.tolist(), "tau": traj.tau, "grid": traj.grid.describe(),
                "files": names}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return d


def load_trajectory(directory) -> Trajectory:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    fields = [read_snapshot(d / name) for name in manifest["files"]]
    return Trajectory(np.array(manifest["times"]), fields, None, manifest.get("tau"))

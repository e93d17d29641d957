"""Discrete elliptic obstacle problem as a linear complementarity problem.

On the interior nodes we look for ``u >= 0`` with ``w = -Δ_h u + g >= 0`` and
``u * w = 0``; the boundary values are eliminated into the linear term, so
the operator is the SPD matrix of ``-Δ_h`` with Dirichlet rows removed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .grid import BoundaryData, Grid, ScalarField, laplacian_apply, node_values

__all__ = [
    "LcpProblem",
    "SolveStats",
    "ConvergenceError",
    "ConstraintViolation",
    "laplacian_operator",
    "assemble_lcp",
    "solve_lcp",
    "solve_psor",
    "complementarity_residual",
    "optimal_omega",
    "hessian_bound",
]

DEFAULT_OMEGA = 1.8


class ConstraintViolation(ValueError):
    """Data violates a sign constraint of the obstacle formulation."""


class ConvergenceError(RuntimeError):
    """PSOR hit ``maxit`` above tolerance. Carries the last iterate."""

    def __init__(self, message, z, stats, field=None):
        super().__init__(message)
        self.z = z
        self.stats = stats
        self.field = field


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_residual: float
    omega: float
    converged: bool = True

    def to_json(self) -> str:
        return json.dumps({"iterations": self.iterations, "final_residual": self.final_residual,
                           "omega": self.omega})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class LcpProblem:
    """``M z + q >= 0, z >= 0, z.(Mz+q) = 0`` on the interior nodes of ``grid``.

    ``boundary_values`` is a full-grid array; only its boundary nodes matter.
    """

    grid: Grid
    operator: sp.csr_matrix
    linear_term: np.ndarray
    boundary_values: np.ndarray
    g: float = 1.0

    def __post_init__(self):
        n = int(np.prod(self.grid.interior_shape))
        if self.operator.shape != (n, n) or self.linear_term.shape != (n,):
            raise ValueError("operator/linear term do not match the grid interior")
        bv = self.boundary_values[self.grid.boundary_mask]
        if np.any(bv < 0):
            raise ConstraintViolation("boundary values must be nonnegative")
        asym = abs(self.operator - self.operator.T)
        if asym.nnz and asym.max() > 1e-12 * abs(self.operator).max():
            raise ValueError("operator must be symmetric")

    def embed(self, z: np.ndarray) -> np.ndarray:
        """Full-grid array: interior from ``z``, boundary from the data."""
        u = np.array(self.boundary_values, dtype=float)
        u[self.grid.interior] = z.reshape(self.grid.interior_shape)
        return u

    def interior_vector(self, field: ScalarField) -> np.ndarray:
        return np.ascontiguousarray(field.values[self.grid.interior]).ravel()


def laplacian_operator(grid: Grid) -> sp.csr_matrix:
    """Matrix of ``-Δ_h`` acting on interior nodes (row-major), Dirichlet eliminated."""
    blocks = []
    for m in grid.interior_shape:
        blocks.append(sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1],
                               format="csr"))
    eyes = [sp.identity(m, format="csr") for m in grid.interior_shape]
    A = None
    for k in range(grid.dim):
        factors = eyes[:k] + [blocks[k]] + eyes[k + 1:]
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        A = term if A is None else A + term
    return (A / grid.h**2).tocsr()


def boundary_load(grid: Grid, boundary_values: np.ndarray) -> np.ndarray:
    """Contribution ``Σ f_nbr / h^2`` of boundary neighbours at each interior node."""
    F = np.where(grid.boundary_mask, boundary_values, 0.0)
    return laplacian_apply(ScalarField(grid, F)).values[grid.interior].ravel()


def assemble_lcp(grid: Grid, boundary_data: BoundaryData, g: float = 1.0) -> LcpProblem:
    """Discrete obstacle problem ``Δu = g χ_{u>0}``, ``u >= 0``, ``u = f`` on the boundary."""
    if not g > 0:
        raise ValueError(f"g must be positive, got {g}")
    values = node_values(grid, boundary_data)
    values[~grid.boundary_mask] = 0.0
    bnd = values[grid.boundary_mask]
    if np.any(bnd < 0):
        raise ConstraintViolation(f"boundary data must be >= 0 (min {bnd.min():.3g})")
    q = g - boundary_load(grid, values)
    return LcpProblem(grid, laplacian_operator(grid), q, values, float(g))


def _as_csr(M) -> sp.csr_matrix:
    M = sp.csr_matrix(M, dtype=float)
    M.sort_indices()
    return M


def solve_lcp(M, q, z0=None, omega: float = DEFAULT_OMEGA, tol: float = 1e-10,
              maxit: int = 100_000, check_every: int = 10):
    """Projected SOR for ``z >= 0, Mz + q >= 0, z.(Mz + q) = 0``.

    Converged means the complementarity residual is at most ``tol``. Raises
    :class:`ConvergenceError` after ``maxit`` sweeps otherwise.
    """
    if not 0 < omega < 2:
        raise ValueError(f"omega must lie in (0, 2), got {omega}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    M = _as_csr(M)
    q = np.ascontiguousarray(q, dtype=float).ravel()
    diag = M.diagonal()
    if np.any(diag <= 0):
        raise ValueError("operator must have a positive diagonal")
    z = np.zeros_like(q) if z0 is None else np.maximum(np.array(z0, dtype=float).ravel(), 0.0)
    args = (M.indptr, M.indices, M.data)
    it = 0
    res = _kernels.lcp_residual(*args, q, z)
    while res > tol and it < maxit:
        k = min(check_every, maxit - it)
        _kernels.psor_sweeps(*args, diag, q, z, omega, k)
        it += k
        res = _kernels.lcp_residual(*args, q, z)
    if res > tol:
        stats = SolveStats(it, float(res), float(omega), converged=False)
        raise ConvergenceError(f"PSOR did not converge in {it} sweeps (residual {res:.3e})", z, stats)
    return z, SolveStats(it, float(res), float(omega))


def solve_psor(problem: LcpProblem, omega: float = DEFAULT_OMEGA, tol: float = 1e-10,
               maxit: int = 100_000, u0: ScalarField | np.ndarray | None = None):
    """Solve the assembled problem; returns ``(field, stats)``."""
    z0 = None
    if u0 is not None:
        arr = u0.values if isinstance(u0, ScalarField) else np.asarray(u0, dtype=float)
        z0 = arr.reshape(problem.grid.extent)[problem.grid.interior].ravel()
    try:
        z, stats = solve_lcp(problem.operator, problem.linear_term, z0, omega, tol, maxit)
    except ConvergenceError as err:
        err.field = ScalarField(problem.grid, problem.embed(err.z))
        raise
    return ScalarField(problem.grid, problem.embed(z)), stats


def complementarity_residual(problem: LcpProblem, field: ScalarField) -> float:
    """KKT residual of ``field``; zero iff the discrete conditions hold exactly.

    Interior part is ``max |min(u, -Δ_h u + g)|`` plus the most negative value;
    any mismatch with the prescribed boundary values is added on top.
    """
    if field.grid != problem.grid:
        raise ValueError("field and problem live on different grids")
    M = _as_csr(problem.operator)
    z = problem.interior_vector(field)
    interior = _kernels.lcp_residual(M.indptr, M.indices, M.data, problem.linear_term, z)
    mask = problem.grid.boundary_mask
    mismatch = float(np.max(np.abs(field.values[mask] - problem.boundary_values[mask])))
    lowest = float(min(0.0, field.values[mask].min()))
    return float(interior) + mismatch - lowest


def optimal_omega(grid: Grid, shift: float = 0.0) -> float:
    """SOR parameter 2/(1+sqrt(1-ρ_J²)) for ``shift·I - Δ_h`` on ``grid``.

    ρ_J is the Jacobi spectral radius; ``shift`` is 1/τ for implicit steps.
    """
    lap_diag = 2.0 * grid.dim / grid.h**2
    rho = np.mean([math.cos(math.pi / (n - 1)) for n in grid.extent])
    rho *= lap_diag / (lap_diag + shift)
    return 2.0 / (1.0 + math.sqrt(1.0 - rho * rho))


def hessian_bound(field: ScalarField) -> float:
    """Largest divided second difference (pure and mixed) over interior nodes."""
    u = field.values
    g = field.grid
    core = g.interior
    worst = 0.0
    for k in range(g.dim):
        p, m = list(core), list(core)
        p[k], m[k] = slice(2, None), slice(None, -2)
        d2 = (u[tuple(p)] - 2 * u[core] + u[tuple(m)]) / g.h**2
        worst = max(worst, float(np.abs(d2).max()))
        for j in range(k + 1, g.dim):
            pp, pm, mp, mm = list(core), list(core), list(core), list(core)
            pp[k], pp[j] = slice(2, None), slice(2, None)
            pm[k], pm[j] = slice(2, None), slice(None, -2)
            mp[k], mp[j] = slice(None, -2), slice(2, None)
            mm[k], mm[j] = slice(None, -2), slice(None, -2)
            dkj = (u[tuple(pp)] - u[tuple(pm)] - u[tuple(mp)] + u[tuple(mm)]) / (4 * g.h**2)
            worst = max(worst, float(np.abs(dkj).max()))
    return worst

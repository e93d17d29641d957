import itertools

import numpy as np
import pytest

from obstaclelab.elliptic import assemble_lcp, optimal_omega, solve_psor
from obstaclelab.grid import Grid

RHO = 0.5


def brute_force_lcp(M, q):
    """Enumerate active sets; return the unique KKT point of an SPD LCP."""
    n = len(q)
    for pattern in itertools.product([False, True], repeat=n):
        free = np.array(pattern)
        z = np.zeros(n)
        if free.any():
            z[free] = np.linalg.solve(M[np.ix_(free, free)], -q[free])
        w = M @ z + q
        if np.all(z >= -1e-12) and np.all(w >= -1e-12) and np.all(np.abs(z * w) < 1e-10):
            return z
    raise AssertionError("no KKT point found")


def radial_exact(r, rho=RHO):
    r = np.asarray(r, dtype=float)
    safe = np.maximum(r, rho)
    u = (safe**2 - rho**2) / 4 - (rho**2 / 2) * np.log(safe / rho)
    return np.where(r > rho, u, 0.0)


def radial_data(*x):
    return radial_exact(np.sqrt(sum(c * c for c in x)))


def solve_box(h, data, dim=2, omega=None, tol=1e-10):
    grid = Grid.from_box([-1.0] * dim, [1.0] * dim, h)
    problem = assemble_lcp(grid, data)
    u, stats = solve_psor(problem, omega or optimal_omega(grid), tol)
    return problem, u, stats


@pytest.fixture(scope="session")
def half_x1sq():
    """Solved problem with data x1^2/2 on the boundary of (-1,1)^2, h = 1/64."""
    return solve_box(1 / 64, lambda x, y: 0.5 * x * x)


@pytest.fixture(scope="session")
def radial64():
    return solve_box(1 / 64, radial_data)


@pytest.fixture(scope="session")
def radial128():
    return solve_box(1 / 128, radial_data)


@pytest.fixture(scope="session")
def melting64():
    """Melting square: boundary value t on (-1,1)^2, h = 1/64, tau = 1e-3, T = 1."""
    from obstaclelab.grid import ScalarField
    from obstaclelab.parabolic import solve_parabolic

    grid = Grid.from_box([-1.0, -1.0], [1.0, 1.0], 1 / 64)
    tau = 1e-3
    return solve_parabolic(grid, ScalarField.zeros(grid), lambda t, x, y: t + 0 * x, tau, 1.0,
                           omega=optimal_omega(grid, 1 / tau))


@pytest.fixture(scope="session")
def melting64_report(melting64):
    from obstaclelab.blowup import default_radii
    from obstaclelab.experiments import singular_times

    return singular_times(melting64, radii=default_radii(1 / 64), max_points=32)

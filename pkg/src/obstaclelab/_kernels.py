"""Compiled inner loops for projected SOR on CSR matrices."""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def psor_sweeps(indptr, indices, data, diag, q, z, omega, nsweeps):
    # lexicographic Gauss-Seidel order; w_i = (Mz + q)_i
    n = z.shape[0]
    for _ in range(nsweeps):
        for i in range(n):
            s = q[i]
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * z[indices[k]]
            v = z[i] - omega * s / diag[i]
            z[i] = v if v > 0.0 else 0.0


@numba.njit(cache=True, nogil=True)
def lcp_residual(indptr, indices, data, q, z):
    """max_i |min(z_i, w_i)| + max(0, -min_i z_i)."""
    n = z.shape[0]
    worst = 0.0
    neg = 0.0
    for i in range(n):
        s = q[i]
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * z[indices[k]]
        m = abs(min(z[i], s))
        if m > worst:
            worst = m
        if -z[i] > neg:
            neg = -z[i]
    return worst + neg


def warmup():
    """Trigger compilation on a 1x1 problem."""
    indptr = np.array([0, 1], dtype=np.int32)
    indices = np.array([0], dtype=np.int32)
    data = np.array([1.0])
    z = np.zeros(1)
    psor_sweeps(indptr, indices, data, data, -data, z, 1.0, 1)
    lcp_residual(indptr, indices, data, -data, z)

"""Blow-up rescaling and regular/singular classification of free-boundary points.

At a free-boundary point ``x0`` the rescalings ``u(x0 + r x) / r^2`` are
compared in L2(B_1) with the two model families

* half-space profiles ``1/2 [(e.x)_+]^2`` with ``|e| = 1``, and
* quadratics ``1/2 <Ax, x>`` with ``A`` symmetric, PSD and ``tr A = 1``,

and the best fits across a decreasing sequence of radii decide the verdict.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field as dc_field
from enum import Enum
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .grid import DomainError, ScalarField, ball_volume, interpolate_many, sphere_quadrature

__all__ = [
    "ResolutionError",
    "NotFreeBoundaryPoint",
    "Verdict",
    "Thresholds",
    "RegularProfile",
    "SingularProfile",
    "BlowupProfile",
    "BlowupSample",
    "RadiusFit",
    "ClassificationReport",
    "unit_ball_lattice",
    "rescale",
    "project_simplex",
    "project_psd_trace1",
    "fit_regular",
    "fit_singular",
    "classify_point",
    "classify_points",
    "recenter",
    "default_radii",
]

MIN_RADIUS_FACTOR = 4.0
MAX_HHAT = 1.0 / 8.0


class ResolutionError(ValueError):
    """Blow-up radius too small for the grid, or no admissible radius left."""


class NotFreeBoundaryPoint(ValueError):
    """``u(x0)`` exceeds the zero threshold."""


class NonConvergenceWarning(RuntimeWarning):
    pass


class Verdict(str, Enum):
    REGULAR = "Regular"
    SINGULAR = "Singular"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class Thresholds:
    """Decision thresholds; ``delta=None`` means h**2 of the field's grid."""

    rho_reg: float = 0.05
    rho_sing: float = 0.05
    rho_drift: float = 0.1
    eps_ker: float = 0.1
    delta: float | None = None
    hhat: float = 1.0 / 16.0
    recenter: bool = True

    @classmethod
    def from_dict(cls, d: dict | None) -> "Thresholds":
        d = dict(d or {})
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    def zero_threshold(self, h: float) -> float:
        return h * h if self.delta is None else float(self.delta)


@dataclass(frozen=True, eq=False)
class RegularProfile:
    e: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.e, dtype=float)
        norm = np.linalg.norm(e)
        if not norm > 0:
            raise ValueError("direction must be nonzero")
        object.__setattr__(self, "e", e / norm)

    tag = "Regular"

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return 0.5 * np.maximum(x @ self.e, 0.0) ** 2

    def rotated(self, R) -> "RegularProfile":
        return RegularProfile(np.asarray(R) @ self.e)


@dataclass(frozen=True, eq=False)
class SingularProfile:
    A: np.ndarray

    tag = "Singular"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("A must be a symmetric square matrix")
        A = 0.5 * (A + A.T)
        if np.linalg.eigvalsh(A).min() < -1e-12 or abs(np.trace(A) - 1.0) > 1e-12:
            raise ValueError("A must be positive semidefinite with unit trace")
        object.__setattr__(self, "A", A)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return 0.5 * np.einsum("qi,ij,qj->q", x, self.A, x)

    def kernel_dim(self, eps: float) -> int:
        return int(np.sum(np.linalg.eigvalsh(self.A) < eps))

    def rotated(self, R) -> "SingularProfile":
        R = np.asarray(R)
        return SingularProfile(R @ self.A @ R.T)


BlowupProfile = Union[RegularProfile, SingularProfile]


@lru_cache(maxsize=None)
def unit_ball_lattice(n: int, hhat: float):
    """Lattice ``hhat * Z^n`` inside the closed unit ball, equal weights summing to |B_1|."""
    K = int(math.floor(1.0 / hhat + 1e-9))
    k = np.arange(-K, K + 1) * hhat
    pts = np.stack([c.ravel() for c in np.meshgrid(*([k] * n), indexing="ij")], axis=1)
    pts = pts[np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12]
    w = np.full(len(pts), ball_volume(n) / len(pts))
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def default_sphere_samples(n: int) -> int:
    return {1: 2, 2: 256, 3: 2048}[n]


@dataclass(frozen=True, eq=False)
class BlowupSample:
    """Values of ``u(x0 + r x) / r^2`` on the unit-ball lattice and unit sphere."""

    center: np.ndarray
    radius: float
    hhat: float
    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    sphere_points: np.ndarray
    sphere_weights: np.ndarray
    sphere_values: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def distance(self, profile) -> float:
        """L2(B_1) distance between the sample and ``profile``."""
        d = self.values - profile(self.points)
        return float(math.sqrt(np.dot(self.weights, d * d)))


def _check_radius(field: ScalarField, x0, r: float, hhat: float):
    grid = field.grid
    if hhat > MAX_HHAT + 1e-15:
        raise ValueError(f"sample spacing {hhat} exceeds {MAX_HHAT}")
    if r < MIN_RADIUS_FACTOR * grid.h * (1 - 1e-12):
        raise ResolutionError(f"radius {r} below {MIN_RADIUS_FACTOR:g}h = {MIN_RADIUS_FACTOR * grid.h}")
    if not grid.ball_inside(x0, r):
        raise DomainError(f"ball of radius {r} about {x0} leaves the grid box")


def rescale(field: ScalarField, x0, r: float, hhat: float = 1.0 / 16.0,
            m: int | None = None) -> BlowupSample:
    """Blow-up sample of ``field`` at ``x0`` and radius ``r``."""
    x0 = np.asarray(x0, dtype=float)
    _check_radius(field, x0, r, hhat)
    n = field.grid.dim
    pts, w = unit_ball_lattice(n, hhat)
    sp, sw = sphere_quadrature(np.zeros(n), 1.0, m or default_sphere_samples(n))
    vals = interpolate_many(field, x0 + r * pts) / r**2
    svals = interpolate_many(field, x0 + r * sp) / r**2
    return BlowupSample(x0, float(r), hhat, pts, w, vals, sp, sw, svals)


# --- spectahedron projection -------------------------------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, n + 1)
    cond = u - css / k > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1)
    return np.maximum(v - theta, 0.0)


def _project_spectahedron(M: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(M)
    lam = project_simplex(lam)
    A = np.einsum("...ij,...j,...kj->...ik", V, lam, V)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def project_psd_trace1(M) -> np.ndarray:
    """Frobenius-nearest symmetric PSD matrix with unit trace."""
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, rtol=0, atol=1e-14):
        warnings.warn("non-symmetric input symmetrised before projection", RuntimeWarning,
                      stacklevel=2)
    return _project_spectahedron(0.5 * (M + M.T))


# --- symmetric-matrix coordinates ---------------------------------------------

@lru_cache(maxsize=None)
def _sym_basis(n: int) -> np.ndarray:
    """Frobenius-orthonormal basis of symmetric n x n matrices."""
    basis = []
    for i in range(n):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        basis.append(E)
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0 / math.sqrt(2.0)
            basis.append(E)
    B = np.array(basis)
    B.setflags(write=False)
    return B


def _quadratic_features(pts: np.ndarray) -> np.ndarray:
    B = _sym_basis(pts.shape[1])
    return 0.5 * np.einsum("qi,kij,qj->qk", pts, B, pts)


# --- batched fits ------------------------------------------------------------

def _weighted_sq(S, P, w):
    d = S - P
    return (d * d) @ w


def _regular_objective(S, X, w, E):
    # S: (P, Q) samples, E: (P, n) unit directions
    prof = 0.5 * np.maximum(np.einsum("qi,pi->pq", X, E), 0.0) ** 2
    return _weighted_sq(S, prof, w)


def _regular_coarse(S, X, w, dirs):
    prof = 0.5 * np.maximum(X @ dirs.T, 0.0) ** 2  # (Q, K)
    ss = (S * S) @ w
    cross = (S * w) @ prof
    pp = w @ (prof * prof)
    return ss[:, None] - 2 * cross + pp[None, :]


def _fit_regular_batch(S, X, w, xtol=1e-9):
    P = S.shape[0]
    n = X.shape[1]
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
        J = _regular_coarse(S, X, w, dirs)
        k = np.argmin(J, axis=1)
        E = dirs[k]
        return E, np.sqrt(np.maximum(_regular_objective(S, X, w, E), 0.0))
    if n == 2:
        K = 64
        theta = 2 * np.pi * np.arange(K) / K
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        k = np.argmin(_regular_coarse(S, X, w, dirs), axis=1)
        step = 2 * np.pi / K
        a = theta[k] - step
        b = theta[k] + step
        gr = (math.sqrt(5.0) - 1) / 2

        def f(t):
            return _regular_objective(S, X, w, np.stack([np.cos(t), np.sin(t)], axis=1))

        c = b - gr * (b - a)
        d = a + gr * (b - a)
        fc, fd = f(c), f(d)
        while np.max(b - a) > xtol:
            left = fc < fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            new_c = b - gr * (b - a)
            new_d = a + gr * (b - a)
            # reuse the surviving interior point
            c_next = np.where(left, new_c, d)
            d_next = np.where(left, c, new_d)
            fc_keep, fd_keep = fc, fd
            fresh = f(np.where(left, new_c, new_d))
            fc = np.where(left, fresh, fd_keep)
            fd = np.where(left, fc_keep, fresh)
            c, d = c_next, d_next
        t = 0.5 * (a + b)
        E = np.stack([np.cos(t), np.sin(t)], axis=1)
    else:
        _, dirs = _fibonacci_dirs(256)
        k = np.argmin(_regular_coarse(S, X, w, dirs), axis=1)
        E = dirs[k].copy()
        E = _compass_refine(S, X, w, E, step=0.25, xtol=xtol)
    return E, np.sqrt(np.maximum(_regular_objective(S, X, w, E), 0.0))


@lru_cache(maxsize=None)
def _fibonacci_dirs(m):
    pts, wts = sphere_quadrature(np.zeros(3), 1.0, m)
    return wts, pts


def _tangent_frame(E):
    ref = np.where(np.abs(E[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    t1 = np.cross(E, ref)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(E, t1)
    return t1, t2


def _compass_refine(S, X, w, E, step, xtol, maxit=500):
    """Deterministic compass search on the sphere, one step size per point."""
    P = len(E)
    s = np.full(P, step)
    J = _regular_objective(S, X, w, E)
    for _ in range(maxit):
        live = s > xtol
        if not live.any():
            break
        t1, t2 = _tangent_frame(E)
        best_J = J.copy()
        best_E = E.copy()
        for t, sign in ((t1, 1), (t1, -1), (t2, 1), (t2, -1)):
            cand = E + sign * s[:, None] * t
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            Jc = _regular_objective(S, X, w, cand)
            better = live & (Jc < best_J)
            best_J = np.where(better, Jc, best_J)
            best_E[better] = cand[better]
        moved = best_J < J
        s = np.where(moved | ~live, s, 0.5 * s)
        E, J = best_E, best_J
    return E


def _fit_singular_batch(S, X, w, tol=1e-10, maxit=10_000, history=False):
    """Projected gradient on the spectahedron in Frobenius-orthonormal coordinates."""
    P = S.shape[0]
    n = X.shape[1]
    B = _sym_basis(n)
    Phi = _quadratic_features(X)  # (Q, K)
    G = Phi.T @ (Phi * w[:, None])
    b = (S * w) @ Phi  # (P, K)
    L = 2.0 * np.linalg.eigvalsh(G).max()
    step = 0.5 / L
    coords = np.einsum("kij,ij->k", B, np.eye(n) / n)
    a = np.tile(coords, (P, 1))
    done = np.zeros(P, dtype=bool)
    iters = np.zeros(P, dtype=int)
    hist = [] if history else None

    def objective(a):
        return _weighted_sq(S, a @ Phi.T, w)

    if history:
        hist.append(objective(a))
    for it in range(maxit):
        live = ~done
        if not live.any():
            break
        al = a[live]
        grad = 2.0 * (al @ G - b[live])
        Mtx = np.einsum("pk,kij->pij", al - step * grad, B)
        new = np.einsum("pij,kij->pk", _project_spectahedron(Mtx), B)
        pg = np.linalg.norm(new - al, axis=1) / step
        a[live] = new
        iters[live] = it + 1
        idx = np.flatnonzero(live)
        done[idx[pg <= tol]] = True
        if history:
            hist.append(objective(a))
    A = _project_spectahedron(np.einsum("pk,kij->pij", a, B))
    res = np.sqrt(np.maximum(objective(np.einsum("pij,kij->pk", A, B)), 0.0))
    return A, res, done, iters, (np.array(hist) if history else None)


def fit_regular(sample: BlowupSample):
    """Best half-space profile: returns ``(e, residual)``."""
    E, res = _fit_regular_batch(sample.values[None, :], sample.points, sample.weights)
    return E[0], float(res[0])


def fit_singular(sample: BlowupSample, full_output: bool = False):
    """Best ``1/2 <Ax,x>`` with ``A`` in the spectahedron: returns ``(A, residual)``.

    Starts from ``I/n`` with fixed step ``0.5/L``. If the iteration cap is hit
    the last iterate is returned and a :class:`NonConvergenceWarning` issued.
    With ``full_output`` a third item carries ``converged``, ``iterations``
    and the objective history.
    """
    A, res, done, iters, hist = _fit_singular_batch(
        sample.values[None, :], sample.points, sample.weights, history=full_output)
    if not done[0]:
        warnings.warn("projected gradient hit the iteration cap", NonConvergenceWarning,
                      stacklevel=2)
    if full_output:
        info = {"converged": bool(done[0]), "iterations": int(iters[0]),
                "history": np.sqrt(np.maximum(hist[:, 0], 0.0))}
        return A[0], float(res[0]), info
    return A[0], float(res[0])


# --- classification ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadiusFit:
    r: float
    reg_residual: float
    e: np.ndarray
    sing_residual: float
    A: np.ndarray
    sing_converged: bool = True

    def to_dict(self) -> dict:
        return {"r": self.r, "reg_residual": self.reg_residual, "e": self.e.tolist(),
                "sing_residual": self.sing_residual, "A": self.A.tolist(),
                "sing_converged": self.sing_converged}


@dataclass(frozen=True, eq=False)
class ClassificationReport:
    """Per-point verdict. ``point`` is the input, ``center`` the blow-up centre."""

    point: np.ndarray
    center: np.ndarray
    verdict: Verdict
    stratum: int | None
    per_radius: list[RadiusFit]
    drift_regular: float
    drift_singular: float
    thresholds: Thresholds = dc_field(repr=False, default_factory=Thresholds)

    @property
    def drift(self) -> float:
        return self.drift_regular if self.verdict is Verdict.REGULAR else self.drift_singular

    @property
    def finest(self) -> RadiusFit:
        return self.per_radius[-1]

    @property
    def profile(self) -> BlowupProfile | None:
        if self.verdict is Verdict.REGULAR:
            return RegularProfile(self.finest.e)
        if self.verdict is Verdict.SINGULAR:
            return SingularProfile(self.finest.A)
        return None

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "center": self.center.tolist(),
                "verdict": self.verdict.value, "stratum": self.stratum,
                "per_radius": [f.to_dict() for f in self.per_radius], "drift": self.drift,
                "drift_regular": self.drift_regular, "drift_singular": self.drift_singular}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def default_radii(h: float, count: int = 3, finest: float = 8.0) -> list[float]:
    """Dyadic radii ``finest*h * 2^k``, largest first."""
    return [finest * h * 2 ** k for k in range(count - 1, -1, -1)]


def _gradient_components(field: ScalarField) -> list[ScalarField]:
    g = np.gradient(field.values, field.grid.h)
    if field.grid.dim == 1:
        g = [g]
    return [field.with_values(c) for c in g]


def recenter(field: ScalarField, points, delta: float, max_steps: int = 8,
             grads: list[ScalarField] | None = None) -> np.ndarray:
    """Move points onto the discrete free boundary.

    Near the free boundary ``u ≈ d²/2`` with ``d`` the distance to it, so each
    step moves ``sqrt(2u)`` against the gradient direction, halving the step
    until ``u`` decreases. Points already at ``u <= 1e-6·delta`` stay put.
    """
    grid = field.grid
    x = np.array(points, dtype=float).reshape(-1, grid.dim)
    grads = grads or _gradient_components(field)
    u = interpolate_many(field, x)
    live = u > 1e-6 * delta
    for _ in range(max_steps):
        if not live.any():
            break
        xl = x[live]
        gvec = np.stack([interpolate_many(c, xl) for c in grads], axis=1)
        gn = np.linalg.norm(gvec, axis=1)
        ok = gn > 0
        d = np.zeros_like(xl)
        d[ok] = gvec[ok] / gn[ok, None]
        length = np.minimum(np.sqrt(2.0 * u[live]), 2.0 * grid.h)
        accepted = np.zeros(len(xl), dtype=bool)
        new_x = xl.copy()
        new_u = u[live].copy()
        for alpha in (1.0, 0.5, 0.25, 0.125):
            trial = np.clip(xl - alpha * length[:, None] * d, grid.lo, grid.hi)
            ut = interpolate_many(field, trial)
            take = ~accepted & ok & (ut < u[live])
            new_x[take] = trial[take]
            new_u[take] = ut[take]
            accepted |= take
        idx = np.flatnonzero(live)
        x[idx] = new_x
        u[idx] = new_u
        live[idx[~accepted]] = False
        live &= u > 1e-6 * delta
    return x


def _drifts(fits: list[RadiusFit]) -> tuple[float, float]:
    dr, ds = 0.0, 0.0
    for big, small in zip(fits[:-1], fits[1:]):
        c = float(np.clip(np.dot(big.e, small.e), -1.0, 1.0))
        dr = max(dr, math.acos(c))
        ds = max(ds, float(np.linalg.norm(big.A - small.A)))
    return dr, ds


def _decide(fits: list[RadiusFit], th: Thresholds) -> tuple[Verdict, float, float]:
    dr, ds = _drifts(fits)
    last = fits[-2:]
    if all(f.reg_residual <= th.rho_reg and f.reg_residual < f.sing_residual for f in last):
        return Verdict.REGULAR, dr, ds
    if all(f.sing_residual <= th.rho_sing for f in last) and ds <= th.rho_drift:
        return Verdict.SINGULAR, dr, ds
    return Verdict.UNDETERMINED, dr, ds


def classify_points(field: ScalarField, points, radii: Sequence[float] | None = None,
                    thresholds: Thresholds | None = None, errors: str = "raise"):
    """Classify many free-boundary points at once.

    Radii must be decreasing; per point only radii whose ball fits in the box
    and that are at least 4h are used, and at least two must remain. With
    ``errors="skip"`` unclassifiable points yield ``None`` instead of raising.
    """
    th = thresholds or Thresholds()
    grid = field.grid
    pts = np.array(points, dtype=float).reshape(-1, grid.dim)
    radii = [float(r) for r in (radii if radii is not None else default_radii(grid.h))]
    if any(a <= b for a, b in zip(radii[:-1], radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    if th.hhat > MAX_HHAT + 1e-15:
        raise ValueError(f"sample spacing {th.hhat} exceeds {MAX_HHAT}")
    delta = th.zero_threshold(grid.h)
    P = len(pts)
    results: list = [None] * P
    if P == 0:
        return results
    u0 = interpolate_many(field, pts)
    bad = u0 > delta * (1 + 1e-9) + 1e-300
    if bad.any() and errors == "raise":
        i = int(np.flatnonzero(bad)[0])
        raise NotFreeBoundaryPoint(f"u({pts[i]}) = {u0[i]:.3g} exceeds threshold {delta:.3g}")
    centers = recenter(field, pts, delta) if th.recenter else pts.copy()
    usable = [r for r in radii if r >= MIN_RADIUS_FACTOR * grid.h * (1 - 1e-12)]
    admissible = np.array([[grid.ball_inside(c, r) for r in usable] for c in centers]).reshape(P, len(usable))
    resolved = ~bad & (admissible.sum(axis=1) >= 2)
    if not resolved.all() and errors == "raise":
        i = int(np.flatnonzero(~resolved)[0])
        raise ResolutionError(f"fewer than two admissible radii at {pts[i]}")
    X, w = unit_ball_lattice(grid.dim, th.hhat)
    fits: list[list[RadiusFit]] = [[] for _ in range(P)]
    for j, r in enumerate(usable):
        sel = np.flatnonzero(resolved & admissible[:, j])
        if sel.size == 0:
            continue
        q = (centers[sel][:, None, :] + r * X[None, :, :]).reshape(-1, grid.dim)
        S = interpolate_many(field, q).reshape(len(sel), -1) / r**2
        E, rres = _fit_regular_batch(S, X, w)
        A, sres, ok, _, _ = _fit_singular_batch(S, X, w)
        for k, p in enumerate(sel):
            fits[p].append(RadiusFit(r, float(rres[k]), E[k], float(sres[k]), A[k], bool(ok[k])))
    for p in np.flatnonzero(resolved):
        verdict, dr, ds = _decide(fits[p], th)
        stratum = None
        if verdict is Verdict.SINGULAR:
            stratum = SingularProfile(fits[p][-1].A).kernel_dim(th.eps_ker)
        results[p] = ClassificationReport(pts[p], centers[p], verdict, stratum, fits[p], dr, ds, th)
    return results


def classify_point(field: ScalarField, x0, radii: Sequence[float] | None = None,
                   thresholds: Thresholds | None = None) -> ClassificationReport:
    """Regular / Singular / Undetermined verdict at one free-boundary point."""
    return classify_points(field, np.asarray(x0, dtype=float)[None, :], radii, thresholds)[0]

import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import RHO
from obstaclelab.blowup import (
    NotFreeBoundaryPoint,
    RegularProfile,
    ResolutionError,
    SingularProfile,
    Thresholds,
    Verdict,
    classify_point,
    classify_points,
    default_radii,
    fit_regular,
    fit_singular,
    project_psd_trace1,
    project_simplex,
    rescale,
    unit_ball_lattice,
)
from obstaclelab.freeboundary import contact_set
from obstaclelab.grid import DomainError, Grid, ScalarField, ball_volume


def profile_field(fn, h=1 / 64, dim=2):
    g = Grid.from_box([-1.0] * dim, [1.0] * dim, h)
    return ScalarField.from_function(g, lambda *x: fn(np.stack(x, axis=-1)))


def half_space(e):
    e = np.asarray(e, float)
    return lambda X: 0.5 * np.maximum(X @ e, 0.0) ** 2


def quadratic(A):
    A = np.asarray(A, float)
    return lambda X: 0.5 * np.einsum("...i,ij,...j->...", X, A, X)


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


# exact sampling: at h = 1/64, x0 = 0, r in {0.5, 0.25} and hhat = 1/16 every
# lattice point is a grid node
NODE_RADII = [0.5, 0.25]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_unit_ball_lattice(n):
    X, w = unit_ball_lattice(n, 1 / 8)
    assert np.all(np.linalg.norm(X, axis=1) <= 1 + 1e-12)
    assert np.all(w > 0)
    assert w.sum() == pytest.approx(ball_volume(n))


def test_rescale_homogeneous_profiles():
    for fn in (quadratic(np.diag([1.0, 0.0])), half_space([1.0, 0.0])):
        f = profile_field(fn)
        s = rescale(f, (0.0, 0.0), 0.5)
        assert np.allclose(s.values, fn(s.points), atol=1e-14)
        s = rescale(f, (0.0, 0.0), 0.3)
        h = f.grid.h
        assert np.allclose(s.values, fn(s.points), atol=0.25 * (h / 0.3) ** 2)
        assert np.all(np.linalg.norm(s.points, axis=1) <= 1 + 1e-12)


def test_rescale_radial_near_half_space(radial128):
    _, u, _ = radial128
    s = rescale(u, (RHO, 0.0), 0.1)
    d = s.distance(RegularProfile(np.array([1.0, 0.0])))
    # Taylor expansion at the contact circle: u(rho + s) = s^2/2 (1 - s/(3 rho) + ...)
    assert d <= 1.0 * 0.1


def test_rescale_errors():
    f = profile_field(quadratic(np.eye(2) / 2), h=1 / 16)
    with pytest.raises(ResolutionError):
        rescale(f, (0.0, 0.0), 3 / 16)
    with pytest.raises(ValueError):
        rescale(f, (0.0, 0.0), 0.5, hhat=0.2)
    with pytest.raises(DomainError):
        rescale(f, (0.7, 0.0), 0.5)


def test_project_examples():
    assert np.allclose(project_psd_trace1(np.eye(3) / 3), np.eye(3) / 3)
    assert np.allclose(project_psd_trace1(np.diag([0.7, 0.3])), np.diag([0.7, 0.3]))
    P = project_psd_trace1(np.diag([2.0, -1.0]))
    a = np.linspace(0, 1, 100001)
    best = a[np.argmin((a - 2) ** 2 + (1 - a + 1) ** 2)]
    assert np.allclose(P, np.diag([best, 1 - best]), atol=1e-5)
    assert np.allclose(P, np.diag([1.0, 0.0]))


def test_project_nonsymmetric_flagged():
    M = np.array([[1.0, 0.4], [0.0, 0.0]])
    with pytest.warns(RuntimeWarning):
        P = project_psd_trace1(M)
    assert np.allclose(P, project_psd_trace1(0.5 * (M + M.T)))


sym_matrices = st.integers(1, 3).flatmap(
    lambda n: st.lists(st.floats(-5, 5), min_size=n * n, max_size=n * n).map(
        lambda v: (lambda B: 0.5 * (B + B.T))(np.array(v).reshape(n, n))))


@settings(max_examples=60, deadline=None)
@given(sym_matrices)
def test_projection_lands_in_spectahedron(M):
    P = project_psd_trace1(M)
    assert np.array_equal(P, P.T)
    assert np.linalg.eigvalsh(P).min() >= -1e-12
    assert abs(np.trace(P) - 1) <= 1e-12
    # idempotent
    assert np.allclose(project_psd_trace1(P), P, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=1, max_size=6), st.integers(0, 2**31 - 1))
def test_simplex_projection_is_nearest(v, seed):
    v = np.array(v)
    p = project_simplex(v[None, :])[0]
    assert p.min() >= 0 and abs(p.sum() - 1) < 1e-12
    others = np.random.default_rng(seed).dirichlet(np.ones(len(v)), size=200)
    assert np.linalg.norm(p - v) <= np.min(np.linalg.norm(others - v, axis=1)) + 1e-12


def test_fit_regular_exact_profiles():
    f = profile_field(half_space([1.0, 0.0]))
    e, res = fit_regular(rescale(f, (0.0, 0.0), 0.5))
    assert np.allclose(e, [1, 0], atol=1e-6) and res <= 1e-3
    f = profile_field(half_space([0.0, -1.0]))
    e, res = fit_regular(rescale(f, (0.0, 0.0), 0.5))
    assert np.allclose(e, [0, -1], atol=1e-6) and res <= 1e-3
    assert abs(np.linalg.norm(e) - 1) < 1e-12


def test_fit_regular_on_singular_profile_matches_angle_grid():
    s = rescale(profile_field(quadratic(np.diag([1.0, 0.0]))), (0.0, 0.0), 0.5)
    _, res = fit_regular(s)
    angles = np.linspace(0, 2 * np.pi, 20001)
    E = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    d = s.values[None, :] - 0.5 * np.maximum(E @ s.points.T, 0) ** 2
    brute = np.sqrt(np.min(d**2 @ s.weights))
    assert res >= 0.1
    assert res == pytest.approx(brute, rel=1e-6)


def test_fit_regular_3d():
    e0 = np.array([1.0, 2.0, -2.0]) / 3
    f = profile_field(half_space(e0), h=1 / 16, dim=3)
    e, res = fit_regular(rescale(f, np.zeros(3), 0.5, hhat=1 / 8, m=256))
    assert np.allclose(e, e0, atol=1e-4) and res < 5e-3


def test_fit_singular_examples():
    s = rescale(profile_field(quadratic(np.diag([1.0, 0.0]))), (0.0, 0.0), 0.5)
    A, res = fit_singular(s)
    assert np.allclose(A, np.diag([1, 0]), atol=1e-6) and res <= 1e-3
    s = rescale(profile_field(lambda X: 0.25 * (X[..., 0] ** 2 + X[..., 1] ** 2)), (0, 0), 0.5)
    A, _ = fit_singular(s)
    assert np.allclose(A, np.eye(2) / 2, atol=1e-6)


def test_fit_singular_3d_line_contact():
    # p = (x1^2 + x2^2)/4 in 3D: contact set near a line, one-dimensional kernel
    f = profile_field(lambda X: 0.25 * (X[..., 0] ** 2 + X[..., 1] ** 2), h=1 / 16, dim=3)
    A, res = fit_singular(rescale(f, np.zeros(3), 0.5, hhat=1 / 8, m=256))
    assert np.allclose(A, np.diag([0.5, 0.5, 0.0]), atol=1e-6)
    assert SingularProfile(A).kernel_dim(0.1) == 1


def test_fit_singular_half_space_matches_brute_force():
    s = rescale(profile_field(half_space([1.0, 0.0])), (0.0, 0.0), 0.5)
    A, res = fit_singular(s)
    a = np.linspace(0, 1, 401)
    c = np.linspace(-0.5, 0.5, 401)
    aa, cc = np.meshgrid(a, c, indexing="ij")
    ok = aa * (1 - aa) >= cc**2
    aa, cc = aa[ok], cc[ok]
    X = s.points
    q = 0.5 * (aa[:, None] * X[:, 0] ** 2 + 2 * cc[:, None] * X[:, 0] * X[:, 1]
               + (1 - aa[:, None]) * X[:, 1] ** 2)
    brute = np.sqrt(np.min((s.values[None, :] - q) ** 2 @ s.weights))
    assert res > 0.05
    assert brute - 1e-4 <= res <= brute + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fit_singular_monotone_descent(seed):
    rng = np.random.default_rng(seed)
    s = rescale(profile_field(half_space(rng.normal(size=2))), (0.0, 0.0), 0.5)
    noisy = type(s)(**{**s.__dict__, "values": s.values + 0.05 * rng.normal(size=s.values.shape)})
    A, res, info = fit_singular(noisy, full_output=True)
    hist = info["history"]
    assert info["converged"]
    assert np.all(np.diff(hist) <= 1e-12)
    assert hist[-1] == pytest.approx(res, abs=1e-9)


def test_fit_singular_cap_warns():
    import obstaclelab.blowup as bl
    s = rescale(profile_field(half_space([1.0, 1.0])), (0.0, 0.0), 0.5)
    A, res, done, iters, _ = bl._fit_singular_batch(s.values[None], s.points, s.weights, maxit=2)
    assert not done[0] and iters[0] == 2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_singular(s)


@settings(max_examples=12, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0.05, 0.95))
def test_rotation_equivariance(theta, lam):
    R = rot(theta)
    e0 = np.array([1.0, 0.0])
    A0 = np.diag([lam, 1 - lam])
    s = rescale(profile_field(half_space(R @ e0)), (0.0, 0.0), 0.5)
    e, _ = fit_regular(s)
    assert np.allclose(e, R @ e0, atol=2e-3)
    s = rescale(profile_field(quadratic(R @ A0 @ R.T)), (0.0, 0.0), 0.5)
    A, _ = fit_singular(s)
    assert np.allclose(A, R @ A0 @ R.T, atol=2e-3)
    assert np.allclose(SingularProfile(A0).rotated(R).A, R @ A0 @ R.T)


def test_scale_consistency_on_homogeneous_fields():
    f = profile_field(quadratic(np.diag([0.3, 0.7])))
    fits = [fit_singular(rescale(f, (0.0, 0.0), r))[0] for r in NODE_RADII]
    assert np.allclose(fits[0], fits[1], atol=1e-8)
    f = profile_field(half_space(np.array([0.6, 0.8])))
    fits = [fit_regular(rescale(f, (0.0, 0.0), r))[0] for r in NODE_RADII]
    assert np.allclose(fits[0], fits[1], atol=1e-8)


def test_classify_exact_singular_solution(half_x1sq):
    _, u, _ = half_x1sq
    rep = classify_point(u, (0.0, 0.3))
    assert rep.verdict is Verdict.SINGULAR
    assert np.linalg.norm(rep.finest.A - np.diag([1.0, 0.0])) < 1e-3
    assert rep.stratum == 1
    assert rep.profile.kernel_dim(0.1) == 1
    assert all(f.reg_residual >= 0 and f.sing_residual >= 0 for f in rep.per_radius)


def test_classify_radial_regular(radial128):
    _, u, _ = radial128
    pts = contact_set(u).fb_points
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    pick = pts[np.argsort(ang)[:: len(pts) // 8][:8]]
    for rep in classify_points(u, pick):
        assert rep.verdict is Verdict.REGULAR
        radial = rep.point / np.linalg.norm(rep.point)
        assert math.degrees(math.acos(min(1.0, rep.finest.e @ radial))) < 5
        assert rep.stratum is None


def test_classify_guards(half_x1sq):
    _, u, _ = half_x1sq
    with pytest.raises(NotFreeBoundaryPoint):
        classify_point(u, (0.5, 0.0))
    with pytest.raises(ResolutionError):
        classify_point(u, (0.0, 0.9))
    with pytest.raises(ValueError):
        classify_point(u, (0.0, 0.0), radii=[0.125, 0.25])
    out = classify_points(u, [(0.0, 0.0), (0.0, 0.9), (0.5, 0.0)], errors="skip")
    assert out[0].verdict is Verdict.SINGULAR and out[1] is None and out[2] is None


def test_report_json(half_x1sq):
    _, u, _ = half_x1sq
    d = json.loads(classify_point(u, (0.0, -0.2)).to_json())
    assert {"point", "verdict", "stratum", "per_radius", "drift"} <= set(d)
    assert d["verdict"] == "Singular"
    assert {"r", "reg_residual", "sing_residual"} <= set(d["per_radius"][0])


def test_thresholds_from_dict():
    th = Thresholds.from_dict({"rho_reg": 0.02, "delta": 1e-4, "other": 1})
    assert th.rho_reg == 0.02 and th.zero_threshold(0.1) == 1e-4
    assert Thresholds().zero_threshold(0.1) == pytest.approx(0.01)


def test_default_radii():
    assert default_radii(1 / 64) == [0.5, 0.25, 0.125]


def test_profile_invariants():
    e = RegularProfile(np.array([3.0, 4.0]))
    assert abs(np.linalg.norm(e.e) - 1) < 1e-12
    with pytest.raises(ValueError):
        SingularProfile(np.diag([2.0, -1.0]))

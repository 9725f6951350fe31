import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from crackfreq.errors import InvalidProfile
from crackfreq.geometry import (
    CrackProfile,
    build_geometry,
    check_invariants,
    div_beta,
    eval_dA,
    eval_mu_beta,
    geometry_from_dict,
    geometry_to_dict,
)
from crackfreq.numerics import loglog_slope


def sym_A(g_expr, ys):
    """A = |det J| J^{-1} J^{-T} for the shear map, built independently in sympy."""
    n = len(ys)
    F = sp.Matrix(list(ys))
    F[n - 2] = ys[n - 2] + g_expr
    J = F.jacobian(sp.Matrix(ys))
    Jinv = J.inv()
    return sp.simplify(abs(J.det()) * Jinv * Jinv.T)


@pytest.fixture(scope="module")
def parabola():
    return build_geometry(CrackProfile.from_coefficients(3, [0.0, 0.0, 1.0]), 0.3)


def test_flat_2d_is_identity():
    geom = build_geometry(CrackProfile.flat(2), 1.0)
    y = np.array([[0.3, -0.2], [0.01, 0.5]])
    np.testing.assert_array_equal(geom.F(y), y)
    np.testing.assert_array_equal(geom.A(y), np.broadcast_to(np.eye(2), (2, 2, 2)))
    mu, beta = eval_mu_beta(geom, y)
    np.testing.assert_allclose(mu, 1.0)
    np.testing.assert_allclose(beta, y)
    np.testing.assert_array_equal(eval_dA(geom, y, np.ones((2, 2))), 0.0)


def test_parabola_example_against_sympy(parabola):
    y1, y2, y3 = sp.symbols("y1 y2 y3", real=True)
    A = sym_A(y1**2, (y1, y2, y3))
    pt = {y1: sp.Rational(1, 10), y2: sp.Rational(1, 10), y3: 0}
    A_pt = np.array(A.subs(pt), dtype=float)
    np.testing.assert_allclose(A_pt, [[1, -0.2, 0], [-0.2, 1.04, 0], [0, 0, 1]], atol=1e-15)
    y = np.array([0.1, 0.1, 0.0])
    np.testing.assert_allclose(parabola.A(y), A_pt, atol=1e-14)
    mu, beta = eval_mu_beta(parabola, y)
    assert mu == pytest.approx(0.82, abs=1e-14)
    np.testing.assert_allclose(beta, np.array([0.08, 0.084, 0.0]) / 0.82, atol=1e-14)


def test_F_maps_flat_crack_onto_curve(parabola):
    t = np.linspace(-0.29, 0.29, 31)
    y = np.stack([t, np.zeros_like(t), np.zeros_like(t)], axis=1)
    x = parabola.F(y)
    np.testing.assert_allclose(x[:, 1], t**2)
    np.testing.assert_allclose(parabola.F_inverse(x), y, atol=1e-15)
    np.testing.assert_allclose(parabola.det_jacobian(y), 1.0)


def test_A_identity_on_axis(parabola):
    for t in (-0.2, 0.05, 0.25):
        np.testing.assert_allclose(parabola.A(np.array([0.0, 0.0, t])), np.eye(3), atol=1e-15)


def test_dA_against_sympy_and_example(parabola):
    y1, y2, y3 = sp.symbols("y1 y2 y3", real=True)
    ys = (y1, y2, y3)
    A = sym_A(y1**2, ys)
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = rng.uniform(-0.15, 0.15, 3)
        z = rng.standard_normal(3)
        sub = dict(zip(ys, p))
        ref = [
            float(sum(sp.diff(A[k, h], ys[i]).subs(sub) * z[h] * z[k] for k in range(3) for h in range(3)))
            for i in range(3)
        ]
        np.testing.assert_allclose(eval_dA(parabola, p, z), ref, atol=1e-8)
    p = np.array([0.12, -0.05, 0.07])
    out = eval_dA(parabola, p, np.array([0.0, 1.0, 0.0]))
    assert out[0] == pytest.approx(8 * p[0], abs=1e-8)
    np.testing.assert_allclose(out[1:], 0.0, atol=1e-8)


def test_analytic_jacobian_matches_finite_differences():
    prof = CrackProfile.from_coefficients(4, [[1.0, [2, 0]], [-0.5, [1, 1]], [0.3, [0, 3]]])
    g_fd = build_geometry(prof, 0.3)
    g_an = build_geometry(prof, 0.3, analytic_jacobian=True)
    rng = np.random.default_rng(7)
    y = rng.uniform(-0.1, 0.1, (20, 4))
    np.testing.assert_allclose(g_an.A_jacobian(y), g_fd.A_jacobian(y), atol=1e-7)


def test_A_4d_against_sympy():
    prof = CrackProfile.from_coefficients(4, [[1.0, [2, 0]], [-0.5, [1, 1]]])
    geom = build_geometry(prof, 0.3)
    ys = sp.symbols("a b c d", real=True)
    A = sym_A(ys[0] ** 2 - ys[0] * ys[1] / 2, ys)
    p = np.array([0.05, -0.1, 0.02, 0.08])
    np.testing.assert_allclose(geom.A(p), np.array(A.subs(dict(zip(ys, p))), dtype=float), atol=1e-14)


def test_dA_quadratic_in_z(parabola):
    y = np.array([0.1, -0.05, 0.02])
    z = np.array([0.3, -1.2, 0.7])
    np.testing.assert_allclose(eval_dA(parabola, y, 2 * z), 4 * eval_dA(parabola, y, z), rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-0.17, 0.17), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda z: np.linalg.norm(z) > 1e-3),
)
def test_symmetry_and_ellipticity_property(y, z):
    geom = build_geometry(CrackProfile.from_coefficients(3, [0.0, 0.0, 1.0]), 0.3)
    y = np.array(y)
    z = np.array(z) / np.linalg.norm(z)
    A = geom.A(y)
    assert np.max(np.abs(A - A.T)) <= 1e-12
    assert 0.5 <= z @ A @ z <= 2.0
    np.testing.assert_allclose(A[:, 2], [0, 0, 1], atol=1e-15)


def test_invariants_report_parabola(parabola):
    rep = check_invariants(parabola, 10_000, seed=0)
    assert rep.ok and rep.violations == 0
    assert rep.largest_violating_radius is None
    assert rep.max_asymmetry <= 1e-12


def test_invariants_report_detects_large_radius():
    geom = build_geometry(CrackProfile.from_coefficients(3, [0.0, 0.0, 1.0]), 1.5)
    rep = check_invariants(geom, 2000, seed=0)
    assert rep.violations > 0
    assert 0.3 < rep.largest_violating_radius < 1.5


def test_beta_second_order_and_mu_first_order(parabola):
    d = np.array([0.6, 0.3, 0.5])
    d /= np.linalg.norm(d)
    t = 0.2 * 0.5 ** np.arange(8)
    y = t[:, None] * d
    mu, beta = eval_mu_beta(parabola, y)
    assert loglog_slope(t, np.linalg.norm(beta - y, axis=1)) >= 1.9
    assert loglog_slope(t, mu - 1) >= 0.9
    assert loglog_slope(t, div_beta(parabola, y) - 3) >= 0.9
    err = np.linalg.norm(parabola.A(y) - np.eye(3), axis=(1, 2))
    C = np.max(err / np.abs(y[:, 0]))
    assert np.isfinite(C)


def test_mu_rejects_origin_and_outside(parabola):
    with pytest.raises(ValueError):
        eval_mu_beta(parabola, np.zeros(3))
    with pytest.raises(ValueError):
        eval_mu_beta(parabola, np.array([0.3, 0.0, 0.0]))


def test_profile_validation():
    with pytest.raises(InvalidProfile):
        build_geometry(CrackProfile.from_coefficients(3, [0.1, 0.0, 1.0]), 0.3)
    with pytest.raises(InvalidProfile):
        build_geometry(CrackProfile.from_coefficients(3, [0.0, 0.5]), 0.3)
    with pytest.raises(InvalidProfile):
        build_geometry(CrackProfile.from_coefficients(3, [0.0, 0.0, 1.0]), 0.0)
    with pytest.raises(InvalidProfile):
        CrackProfile(2, terms=((1.0, ()),))
    with pytest.raises(InvalidProfile):
        build_geometry(CrackProfile(3, func=lambda t: np.sin(t[..., 0])), 0.3)


def test_callable_profile_uses_finite_differences():
    prof = CrackProfile(3, func=lambda t: t[..., 0] ** 2)
    a = build_geometry(prof, 0.3)
    b = build_geometry(CrackProfile.from_coefficients(3, [0.0, 0.0, 1.0]), 0.3)
    y = np.array([0.1, 0.05, -0.02])
    np.testing.assert_allclose(a.A(y), b.A(y), atol=1e-8)
    with pytest.raises(InvalidProfile):
        build_geometry(prof, 0.3, analytic_jacobian=True)


def test_serialisation_round_trip():
    d = {"dimension": 3, "g": [0.0, 0.0, 1.0, -0.5], "r1": 0.3}
    geom = geometry_from_dict(d)
    assert geometry_to_dict(geom) == d
    d4 = {"dimension": 4, "g": [[1.0, [2, 0]], [0.25, [0, 2]]], "r1": 0.2}
    assert geometry_to_dict(geometry_from_dict(d4)) == d4
    with pytest.raises(InvalidProfile):
        geometry_from_dict({"dimension": 3, "g": [0, 0, 1], "r1": 0.3, "radius": 1})

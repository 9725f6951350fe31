import numpy as np
import pytest
from scipy import integrate

from crackfreq.errors import IndefiniteSystem
from crackfreq.exact import BesselMode, CrackHarmonic
from crackfreq.fem import (
    Field,
    Potential,
    ZERO,
    assemble,
    boundary_data,
    interpolate,
    l2_error,
    l2_norm,
    read_field,
    solve_dirichlet,
    solve_problem,
)
from crackfreq.frequency import energy
from crackfreq.slitmesh import SlitMesh, make_slit_disk


def _single_triangle():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return SlitMesh(
        kind="disk", vertices=v, triangles=np.array([[0, 1, 2]]),
        crack_pairs=np.zeros((0, 2), dtype=np.int64), tip_vertex_ids=(0,),
        outer_boundary_ids=np.array([1, 2]), angles=np.array([np.nan, 0.0, np.pi / 2]),
        ring_radii=np.array([1.0]), radius=1.0, grading_ratio=0.5, levels=0,
    )


def test_reference_triangle_stiffness():
    K, _ = assemble(_single_triangle())
    np.testing.assert_allclose(K.toarray(), [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)


def test_assembly_properties(ref_mesh):
    K, M = assemble(ref_mesh, None, Potential("constant", 1.0))
    assert abs(K - K.T).max() <= 1e-12
    assert abs(M - M.T).max() <= 1e-12
    np.testing.assert_allclose(K @ np.ones(K.shape[0]), 0.0, atol=1e-11)
    assert M.sum() == pytest.approx(ref_mesh.triangle_areas().sum(), abs=1e-10)


def test_radial_power_needs_tip_rule(coarse_mesh):
    f = Potential("radial_power", 1.0, epsilon=0.2)
    with pytest.raises(ValueError):
        assemble(coarse_mesh, None, f)
    _, M = assemble(coarse_mesh, None, f, tip_quadrature=True)
    # int_{disk} |x|^{-1.6} = 2 pi / 0.4 for the exact disk
    assert M.sum() == pytest.approx(2 * np.pi / 0.4, rel=0.05)


def test_linear_exactness(ref_mesh):
    u = CrackHarmonic(2)
    F = solve_problem(ref_mesh, ZERO, u.value)
    np.testing.assert_allclose(F.values, ref_mesh.vertices[:, 0], atol=1e-10)
    assert F.stats.residual <= 1e-10 * max(F.stats.rhs_norm, 1.0)


def test_harmonic_l2_error(harmonic_fem):
    ref = CrackHarmonic(1).value
    rel = l2_error(harmonic_fem, ref) / l2_norm(interpolate(harmonic_fem.mesh, ref))
    assert rel <= 0.01


def test_bessel_l2_error(bessel_fem):
    ref = BesselMode(1, 1.0).value
    rel = l2_error(bessel_fem, ref) / l2_norm(interpolate(bessel_fem.mesh, ref))
    assert rel <= 0.015


def test_l2_error_trivial_cases(ref_mesh):
    lin = lambda x, y, t: 2 * x - y
    assert l2_error(interpolate(ref_mesh, lin), lin) < 1e-14
    m = make_slit_disk(1 / np.sqrt(np.pi), 2, 0.5, 64)
    one = Field(m, np.ones(m.n_vertices))
    assert l2_norm(one) == pytest.approx(np.sqrt(m.triangle_areas().sum()), rel=1e-14)
    assert l2_norm(one) == pytest.approx(1.0, rel=5e-3)


def test_interpolation_rate_on_graded_meshes():
    ref = CrackHarmonic(1).value
    hs, errs = [], []
    for base in (32, 64, 128):
        m = make_slit_disk(1.0, 8, 0.5, base)
        hs.append(m.diameters().max())
        errs.append(l2_error(interpolate(m, ref), ref))
    rate = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert rate >= 0.9


def test_crack_traces_are_discontinuous(harmonic_fem):
    up, lo = harmonic_fem.crack_traces()
    assert np.all(up > 0) and np.all(lo < 0)
    assert np.max(np.abs(up - lo)) > 10 * 1e-12


def test_indefinite_potential_detected(coarse_mesh):
    f = Potential("constant", 60.0)
    K, M = assemble(coarse_mesh, None, f)
    bd = boundary_data(coarse_mesh, CrackHarmonic(1).value)
    for method in ("direct", "cg"):
        with pytest.raises(IndefiniteSystem):
            solve_dirichlet(K, M, bd, coarse_mesh, method=method)


def test_cg_matches_direct(coarse_mesh):
    K, M = assemble(coarse_mesh, None, Potential("constant", 1.0))
    bd = boundary_data(coarse_mesh, BesselMode(1).value)
    a = solve_dirichlet(K, M, bd, coarse_mesh, method="direct")
    b = solve_dirichlet(K, M, bd, coarse_mesh, method="cg")
    np.testing.assert_allclose(a.values, b.values, atol=1e-9)
    c = solve_dirichlet(K, M, bd, coarse_mesh, method="direct")
    np.testing.assert_array_equal(a.values, c.values)


def test_missing_boundary_values(coarse_mesh):
    K, M = assemble(coarse_mesh)
    bd = boundary_data(coarse_mesh, CrackHarmonic(1).value)
    bd.pop(int(coarse_mesh.outer_boundary_ids[0]))
    with pytest.raises(ValueError):
        solve_dirichlet(K, M, bd, coarse_mesh)


def test_field_round_trip(tmp_path, bessel_fem):
    p = tmp_path / "u.csv"
    bessel_fem.write(p)
    back = read_field(bessel_fem.mesh, p)
    np.testing.assert_array_equal(back.values, bessel_fem.values)


def test_field_rejects_bad_values(coarse_mesh):
    with pytest.raises(ValueError):
        Field(coarse_mesh, np.zeros(3))
    v = np.zeros(coarse_mesh.n_vertices)
    v[0] = np.nan
    with pytest.raises(ValueError):
        Field(coarse_mesh, v)


def _flux(sol, R=1.0):
    val, _ = integrate.quad(lambda t: R * sol.value_polar(R, t) * sol.derivatives_polar(R, t)[0], 0, 2 * np.pi)
    return val


def test_energy_identity(bessel_fem, harmonic_fem):
    f = Potential("constant", 1.0)
    for field, pot, sol, tol in ((bessel_fem, f, BesselMode(1, 1.0), 0.05), (harmonic_fem, ZERO, CrackHarmonic(1), 0.01)):
        mesh = field.mesh
        K, M = assemble(mesh, None, pot)
        U = field.values
        discrete = U @ ((K - M) @ U)
        assert energy(field, mesh.radius, None, pot) == pytest.approx(discrete, rel=1e-8)
        assert discrete == pytest.approx(_flux(sol), rel=tol)


def test_galerkin_residual(bessel_fem):
    mesh = bessel_fem.mesh
    K, M = assemble(mesh, None, Potential("constant", 1.0))
    res = (K - M) @ bessel_fem.values
    free = np.setdiff1d(np.arange(mesh.n_vertices), mesh.outer_boundary_ids)
    assert np.max(np.abs(res[free])) <= 1e-10

import math

import numpy as np
import pytest
import sympy as sp
from scipy import integrate

from crackfreq.blowup import (
    alpha_coefficients,
    blowup_errors,
    boundary_normalization,
    fourier_phi,
    parseval_ratio,
    rescale,
    upsilon,
    upsilon_profile,
    verify_blowup,
)
from crackfreq.errors import NonDecreasingError, RadiusTooSmall, SingularQuadrature
from crackfreq.exact import BesselMode, CrackHarmonic, Superposition
from crackfreq.fem import ZERO, Potential, solve_problem
from crackfreq.slitmesh import make_slit_disk
from crackfreq.spectrum import CircleMode, basis_circle

ONE = Potential("constant", 1.0)
BASIS = basis_circle(8)
R_LIST = (0.1, 0.2, 0.4)


@pytest.fixture(scope="module")
def unit_mesh():
    return make_slit_disk(1.0, 4, 0.5, 64)


def test_two_alpha_forms_agree_symbolically():
    s, r, N, k0 = sp.symbols("s r N k0", positive=True)
    combined = ((2 - N - k0 / 2) * s ** (-(N + k0 / 2 - 1)) - k0 * s ** (k0 / 2 - 1) / (2 * r ** (N - 2 + k0))) / (2 - N - k0)
    c1 = (2 * N + k0 - 4) / (2 * (N + k0 - 2))
    c2 = k0 / (2 * (N + k0 - 2)) * r ** (-N + 2 - k0)
    split = c1 * s ** (-N + 1 - k0 / 2) + c2 * s ** (k0 / 2 - 1)
    assert sp.simplify(combined - split) == 0


def test_rescale_harmonic(unit_mesh):
    ref = CircleMode(1)
    for a, lam in [(1.0, 0.5), (3.0, 0.1)]:
        W = rescale(CrackHarmonic(1, a), lam, unit_mesh)
        r = np.linalg.norm(unit_mesh.vertices, axis=1)
        th = np.nan_to_num(unit_mesh.angles, nan=0.0)
        np.testing.assert_allclose(W.values, np.sqrt(r) * ref(th), atol=1e-14)
        assert boundary_normalization(W, lam) == pytest.approx(1.0, abs=1e-3)


def test_rescale_constant(unit_mesh):
    W = rescale(CrackHarmonic(0, 4.0), 0.3, unit_mesh)
    np.testing.assert_allclose(W.values, 1 / np.sqrt(2 * np.pi), rtol=1e-14)


def test_rescale_field_radius_check(unit_mesh, coarse_mesh):
    from crackfreq.fem import interpolate

    fld = interpolate(coarse_mesh, CrackHarmonic(1).value)
    with pytest.raises(RadiusTooSmall):
        rescale(fld, 0.01, unit_mesh)
    with pytest.raises(ValueError):
        rescale(CrackHarmonic(1), 0.5, make_slit_disk(0.5, 2, 0.5, 32))


def test_fourier_phi_examples():
    for a, lam in [(1.0, 0.25), (2.5, 0.7)]:
        assert fourier_phi(CrackHarmonic(1, a), lam, BASIS, 1)[0] == pytest.approx(a * math.sqrt(math.pi * lam), rel=1e-13)
    for k in range(1, 5):
        assert abs(fourier_phi(CrackHarmonic(0, 2.0), 0.5, BASIS, k)[0]) < 1e-13
    oracle, _ = integrate.quad(lambda t: np.cos(t) * np.cos(t / 2) / np.sqrt(np.pi), 0, 2 * np.pi)
    assert abs(oracle) < 1e-13
    assert abs(fourier_phi(CrackHarmonic(2), 0.5, BASIS, 1)[0]) < 1e-13


def test_upsilon_vanishes_without_potential():
    assert upsilon(CrackHarmonic(1), None, ZERO, BASIS, 1, 0, 0.5) == 0.0


def test_upsilon_example():
    val = upsilon(CrackHarmonic(1), None, ONE, BASIS, 1, 0, 0.5)
    oracle, _ = integrate.dblquad(
        lambda t, s: s * math.sqrt(s) * math.cos(t / 2) ** 2 / math.sqrt(math.pi), 0, 0.5, 0, 2 * math.pi
    )
    closed = math.sqrt(math.pi) * 0.4 * 0.5**2.5
    assert oracle == pytest.approx(closed, rel=1e-10)
    assert val == pytest.approx(closed, rel=1e-8)
    assert closed == pytest.approx(0.12533, abs=1e-5)


def test_upsilon_linear(bessel_fem):
    u1 = upsilon(bessel_fem, None, ONE, BASIS, 1, 0, 0.3)
    u2 = upsilon(bessel_fem.scaled(2.0), None, ONE, BASIS, 1, 0, 0.3)
    assert u2 == pytest.approx(2 * u1, rel=1e-12)


def test_upsilon_profile_matches_pointwise():
    Y = CircleMode(1)
    prof = upsilon_profile(BesselMode(1), None, ONE, Y, 0.4)
    j = len(prof.nodes) // 3
    direct = upsilon(BesselMode(1), None, ONE, BASIS, 1, 0, prof.nodes[j])
    assert prof.values[j] == pytest.approx(direct, rel=1e-6)


def test_singular_quadrature_guard(coarse_mesh):
    from crackfreq.fem import interpolate

    fld = interpolate(coarse_mesh, CrackHarmonic(1).value)
    with pytest.raises(SingularQuadrature):
        upsilon(fld, None, ONE, BASIS, 1, 0, 0.005)


def test_alpha_exact_harmonic():
    alpha, spread, table = alpha_coefficients(CrackHarmonic(1, 3.0), None, ZERO, BASIS, 1, R_LIST)
    assert alpha[0] == pytest.approx(3 * math.sqrt(math.pi), rel=1e-12)
    assert spread[0] <= 1e-8 * abs(alpha[0])
    assert table.shape == (1, 3)


def test_alpha_constant():
    alpha, spread, _ = alpha_coefficients(CrackHarmonic(0, 1.5), None, ZERO, BASIS, 0, R_LIST)
    assert alpha[0] == pytest.approx(1.5 * math.sqrt(2 * math.pi), rel=1e-12)


@pytest.mark.parametrize("k,amp", [(1, 1.0), (1, 2.0), (0, 1.0), (2, 0.5), (3, 1.0)])
def test_alpha_bessel_series_coefficient(k, amp):
    # J_{k/2}(r) = r^{k/2} / (2^{k/2} Gamma(k/2 + 1)) + O(r^{k/2 + 2})
    alpha, spread, _ = alpha_coefficients(BesselMode(k, 1.0, amp), None, ONE, BASIS, k, R_LIST)
    norm = math.sqrt(2 * math.pi) if k == 0 else math.sqrt(math.pi)
    expected = amp * norm / (2 ** (k / 2) * math.gamma(k / 2 + 1))
    assert alpha[0] == pytest.approx(expected, rel=1e-6)
    assert spread[0] <= 1e-6 * abs(alpha[0])
    if k == 1:
        assert alpha[0] == pytest.approx(amp * math.sqrt(2), rel=1e-6)


def test_alpha_scaling_covariance():
    a1, _, _ = alpha_coefficients(BesselMode(1), None, ONE, BASIS, 1, R_LIST)
    a3, _, _ = alpha_coefficients(BesselMode(1, 1.0, -3.0), None, ONE, BASIS, 1, R_LIST)
    assert a3[0] == pytest.approx(-3 * a1[0], rel=1e-12)


def test_alpha_fem_bessel(bessel_fem):
    alpha, spread, _ = alpha_coefficients(bessel_fem, None, ONE, BASIS, 1, R_LIST)
    assert alpha[0] == pytest.approx(math.sqrt(2), rel=0.02)
    assert spread[0] <= 0.05 * abs(alpha[0])


def test_verify_exact_homogeneous():
    rep = verify_blowup(CrackHarmonic(1, 2.0), 1, [2 * math.sqrt(math.pi)])
    assert np.all(rep.W_lambda_errors < 1e-12)
    assert rep.diagnosis == "ok"


def test_verify_bessel_slope(tmp_path):
    rep = verify_blowup(BesselMode(1), 1, [math.sqrt(2)], f=ONE)
    assert len(rep.lambdas) == 6
    assert np.all(np.diff(rep.W_lambda_errors) < 0)
    assert np.all(np.diff(rep.gradient_errors) < 0)
    assert rep.decay_slope >= 1.8
    files = rep.write(tmp_path)
    assert (tmp_path / "blowup_errors.csv").read_text().startswith("lambda,W_error,gradient_error\n")
    assert len(files) == 3


def test_verify_rejects_zero_alpha():
    with pytest.raises(ValueError):
        verify_blowup(CrackHarmonic(1), 1, [0.0])


def test_verify_retry_hook():
    bad = Superposition((CrackHarmonic(1), CrackHarmonic(0, 0.1)))
    alpha = [math.sqrt(math.pi)]
    with pytest.raises(NonDecreasingError):
        verify_blowup(bad, 1, alpha)
    with pytest.raises(NonDecreasingError):
        verify_blowup(bad, 1, alpha, retry=lambda: bad)
    rep = verify_blowup(bad, 1, alpha, retry=lambda: CrackHarmonic(1))
    assert rep.diagnosis.startswith("under-resolved")


def test_fem_floor_decreases_with_levels():
    # the rescaled FEM error settles on a plateau set by the tip elements
    floors = []
    for levels in (4, 8):
        m = make_slit_disk(1.0, levels, 0.5, 64)
        u = solve_problem(m, ONE, BesselMode(1).value)
        alpha, _, _ = alpha_coefficients(u, None, ONE, BASIS, 1, R_LIST)
        floors.append(blowup_errors(u, 1, alpha, BASIS, 1 / 64)[0])
    assert floors[1] < 0.6 * floors[0]


@pytest.mark.parametrize(
    "sol",
    [CrackHarmonic(1), Superposition((CrackHarmonic(1), CrackHarmonic(2, 0.5), CrackHarmonic(3, -0.2))), BesselMode(1)],
)
def test_parseval(sol):
    for lam in (0.1, 0.5):
        assert parseval_ratio(sol, lam, 8) == pytest.approx(1.0, abs=0.01)

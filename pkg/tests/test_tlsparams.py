import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phonontls.tlsparams import (
    BVD_C0,
    BVD_CM,
    BVD_LM,
    HBAR,
    MODE_FREQUENCY_HZ,
    REFERENCE_MASS,
    REFERENCE_STRAIN_ZPF,
    MaterialConstants,
    ModeField,
    bvd_admittance,
    coupling_bounds,
    effective_mass,
    elastic_dipole,
    estimate_tls_count,
    gaussian_slab_field,
    rms_strain,
    sample_tls_distributions,
    series_resonance,
    tls_coupling_rate,
    uniform_field,
    zero_point_displacement,
    zero_point_strain,
)

TWO_PI = 2 * np.pi
OMEGA_M = TWO_PI * MODE_FREQUENCY_HZ
factors = st.floats(0.1, 10.0)


# --- mode fields ----------------------------------------------------------


def test_uniform_field_effective_mass():
    assert effective_mass(uniform_field(3e-18, u=2.5), 4700.0) == pytest.approx(4700.0 * 3e-18, rel=1e-12)


def test_gaussian_slab_effective_mass():
    sigma, area = 1e-6, 2e-12
    m = effective_mass(gaussian_slab_field(sigma, area), 4700.0)
    assert m == pytest.approx(4700.0 * area * sigma * np.sqrt(np.pi), rel=5e-3)


def test_grid_refinement_converges():
    sigma, area = 1e-6, 2e-12
    coarse = gaussian_slab_field(sigma, area, n_points=101)
    fine = gaussian_slab_field(sigma, area, n_points=202)
    for f in (lambda m: effective_mass(m, 4700.0), rms_strain):
        assert abs(f(fine) / f(coarse) - 1) < 5e-3


def test_zero_point_strain_examples():
    assert zero_point_strain(uniform_field(1e-18), 1e-15) == 0
    c = 3e-4
    field = uniform_field(1e-18, strain=[c, 0, 0, 0, 0, 0])
    assert rms_strain(field) == pytest.approx(c / np.sqrt(6), rel=1e-12)
    assert zero_point_strain(field, 2e-15) == pytest.approx(2e-15 * c / np.sqrt(6), rel=1e-12)


def test_mode_field_validation():
    with pytest.raises(ValueError, match="no grid"):
        ModeField(np.array([]), np.array([]), np.zeros((0, 6)))
    with pytest.raises(ValueError, match="volumes"):
        ModeField(np.array([1.0, -1.0]), np.ones(2), np.zeros((2, 6)))
    with pytest.raises(ValueError, match="shapes"):
        ModeField(np.ones(2), np.ones(3), np.zeros((2, 6)))
    with pytest.raises(ValueError, match="zero displacement"):
        effective_mass(uniform_field(1e-18, u=0.0), 4700.0)


def test_mode_field_csv_roundtrip(tmp_path):
    field = gaussian_slab_field(1e-6, 1e-12, n_points=21)
    field.to_csv(tmp_path / "f.csv")
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "dV_m3,u_abs_m,exx,exy,exz,eyy,eyz,ezz"
    back = ModeField.from_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(back.volumes, field.volumes)
    np.testing.assert_array_equal(back.strain, field.strain)
    (tmp_path / "bad.csv").write_text("dV_m3,u_abs_m\n1,2\n")
    with pytest.raises(ValueError, match="missing"):
        ModeField.from_csv(tmp_path / "bad.csv")


# --- closed forms ---------------------------------------------------------


def test_zero_point_displacement_reference():
    assert zero_point_displacement(REFERENCE_MASS, OMEGA_M) == pytest.approx(2.9e-15, rel=0.02)


def test_elastic_dipole_reference():
    gamma = elastic_dipole(MaterialConstants())
    assert gamma == pytest.approx(3.7e-20, rel=0.01)
    assert gamma / 1.602176634e-19 == pytest.approx(0.23, rel=0.01)
    assert elastic_dipole(MaterialConstants(delta0=0.0)) == 0


def test_coupling_rate_reference():
    g = tls_coupling_rate(elastic_dipole(MaterialConstants()), REFERENCE_STRAIN_ZPF)
    assert g / TWO_PI == pytest.approx(90e3, rel=0.05)
    assert tls_coupling_rate(1e-20, 0.0) == 0


def test_tls_count_reference():
    n = estimate_tls_count(1e45, 2e-19, TWO_PI * 660e3)
    assert n == pytest.approx(0.9, rel=0.05)
    assert estimate_tls_count(1e45, 2e-19, 0.0) == 0


@given(factors)
def test_zero_point_displacement_scaling(c):
    base = zero_point_displacement(REFERENCE_MASS, OMEGA_M)
    assert zero_point_displacement(c**2 * REFERENCE_MASS, OMEGA_M) == pytest.approx(base / c, rel=1e-12)
    assert zero_point_displacement(REFERENCE_MASS, c**2 * OMEGA_M) == pytest.approx(base / c, rel=1e-12)


@given(factors)
def test_elastic_dipole_scaling(c):
    mat = MaterialConstants()
    base = elastic_dipole(mat)
    assert elastic_dipole(mat.replace(p0=c**2 * mat.p0)) == pytest.approx(base / c, rel=1e-12)
    assert elastic_dipole(mat.replace(delta0=c**2 * mat.delta0)) == pytest.approx(base * c, rel=1e-12)
    assert elastic_dipole(mat.replace(v=c * mat.v)) == pytest.approx(base * c, rel=1e-12)


@given(factors)
def test_coupling_and_count_linear(c):
    assert tls_coupling_rate(c * 3e-20, 1e-9) == pytest.approx(c * tls_coupling_rate(3e-20, 1e-9), rel=1e-12)
    base = estimate_tls_count(1e45, 2e-19, 1e6)
    assert estimate_tls_count(c * 1e45, 2e-19, 1e6) == pytest.approx(c * base, rel=1e-12)
    assert estimate_tls_count(1e45, c * 2e-19, 1e6) == pytest.approx(c * base, rel=1e-12)
    assert estimate_tls_count(1e45, 2e-19, c * 1e6) == pytest.approx(c * base, rel=1e-12)


@given(factors)
def test_effective_mass_scaling(c):
    field = gaussian_slab_field(1e-6, 1e-12, n_points=51)
    scaled = ModeField(field.volumes * c, field.displacement * c, field.strain)
    assert effective_mass(scaled, 4700.0) == pytest.approx(c * effective_mass(field, 4700.0), rel=1e-12)


def test_material_validation():
    with pytest.raises(ValueError):
        MaterialConstants(rho=0.0)
    with pytest.raises(ValueError):
        MaterialConstants(delta0=-1.0)


# --- sampling -------------------------------------------------------------


def test_degenerate_sampler_matches_closed_form():
    s = sample_tls_distributions(1, seed=3, p0_exponents=(45, 45), delta_exponents=(-4.25, -4.25))
    assert s.gamma[0] == pytest.approx(elastic_dipole(MaterialConstants()), rel=1e-12)


def test_samples_within_corner_bounds_and_median():
    s = sample_tls_distributions(10_000, seed=0)
    lo, hi = coupling_bounds()
    assert np.all(s.g_tls >= lo * (1 - 1e-12)) and np.all(s.g_tls <= hi * (1 + 1e-12))
    med = np.median(s.g_tls) / TWO_PI
    assert 10e3 <= med <= 1e6


def test_sampler_is_reproducible():
    a = sample_tls_distributions(500, seed=9)
    b = sample_tls_distributions(500, seed=9)
    np.testing.assert_array_equal(a.g_tls, b.g_tls)
    ca, ea = a.histogram()
    cb, eb = b.histogram()
    np.testing.assert_array_equal(ca, cb)
    np.testing.assert_array_equal(ea, eb)
    assert ca.sum() == 500
    assert not np.array_equal(sample_tls_distributions(500, seed=10).g_tls, a.g_tls)
    with pytest.raises(ValueError):
        sample_tls_distributions(0)


# --- mBVD -----------------------------------------------------------------


def test_series_resonance_reference():
    fs = series_resonance() / TWO_PI
    assert fs == pytest.approx(2.33e9, rel=0.01)
    assert fs == pytest.approx(MODE_FREQUENCY_HZ, rel=0.01)


def test_admittance_low_and_high_frequency_limits():
    assert np.abs(bvd_admittance(1.0).y[0]) < 1e-15
    w = 10 * series_resonance()
    y = bvd_admittance(w).y[0]
    assert abs(y / (1j * w * BVD_C0) - 1) < 0.01


def test_admittance_matches_direct_impedance_formula():
    w = np.linspace(0.5, 1.5, 101) * series_resonance() * 1.0001
    adm = bvd_admittance(w, r=5.0)
    ref = 1j * w * BVD_C0 + 1 / (5.0 + 1j * w * BVD_LM + 1 / (1j * w * BVD_CM))
    np.testing.assert_allclose(adm.y, ref, rtol=1e-12)


def test_admittance_pole_flagged(tmp_path):
    ws = series_resonance()
    adm = bvd_admittance([0.9 * ws, ws, 1.1 * ws])
    np.testing.assert_array_equal(adm.at_pole, [False, True, False])
    assert np.isinf(abs(adm.y[1]))
    with pytest.raises(ValueError):
        bvd_admittance([0.0])
    adm.to_csv(tmp_path / "y.csv")
    lines = (tmp_path / "y.csv").read_text().splitlines()
    assert lines[0] == "freq_hz,re_Y,im_Y" and len(lines) == 4


def test_hbar_is_codata():
    assert HBAR == pytest.approx(1.054571817e-34, rel=1e-12)

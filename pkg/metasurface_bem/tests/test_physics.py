"""
Physics Tests

Drude and tabulated materials, contrast parameters, incident fields and resonance distances.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from metasurface_bem.core.physics import (
    LAMBDA_MU_CLAMP,
    MaterialModel,
    contrast,
    contrast_parameter,
    crossing_frequency,
    drude_eps,
    drude_mu,
    effective_lambda_mu,
    incident_field,
    incident_identity_check,
    is_non_magnetic,
    load_material_table,
    make_incident_wave,
    resonance_distances,
    resonance_scan,
)
from metasurface_bem.utils.error_handling import (
    DegenerateContrast,
    InvalidIncidence,
    MaterialOutOfRange,
    ParseError,
)


def test_drude_values(drude):
    omega = 0.5
    assert drude_eps(omega, drude) == pytest.approx(1.0 - 1.0 / (omega * (omega + 0.01j)))
    assert drude_mu(omega, drude) == 1.0


def test_magnetic_drude():
    mat = MaterialModel(omega_p_m=0.5, gamma_m=0.1)
    assert drude_mu(1.0, mat) == pytest.approx(1.0 - 0.25 / (1.0 + 0.1j))


def test_frequency_must_be_positive(drude):
    with pytest.raises(MaterialOutOfRange):
        drude_eps(0.0, drude)


def test_invalid_material():
    with pytest.raises(MaterialOutOfRange):
        MaterialModel(eps_inf=0.5)
    with pytest.raises(MaterialOutOfRange):
        MaterialModel(gamma_e=-1.0)
    with pytest.raises(MaterialOutOfRange):
        MaterialModel(mode="tabulated")


def test_contrast_parameter():
    assert contrast_parameter(-2.0) == pytest.approx(-1.0 / 6.0)
    assert contrast_parameter(0.0) == pytest.approx(0.5)
    with pytest.raises(DegenerateContrast):
        contrast_parameter(1.0)


def test_contrast_pair_and_inversion():
    lambda_eps, lambda_mu = contrast(-2.0, 0.0)
    assert (lambda_eps, lambda_mu) == (pytest.approx(-1.0 / 6.0), pytest.approx(0.5))
    rng = np.random.default_rng(13)
    for _ in range(100):
        eps_c = complex(*rng.normal(size=2) * 3.0)
        forward, inverse = contrast(eps_c, 1.0 / eps_c)
        assert forward + inverse == pytest.approx(0.0, abs=1e-12 * max(1.0, abs(forward)))
    with pytest.raises(DegenerateContrast):
        contrast(-2.0, 1.0)


def test_non_magnetic_clamp():
    assert is_non_magnetic(1.0 + 1e-12)
    assert effective_lambda_mu(1.0) == LAMBDA_MU_CLAMP
    assert effective_lambda_mu(-2.0) == pytest.approx(-1.0 / 6.0)


def test_crossing_frequency(drude):
    omega = crossing_frequency(drude, -1.0 / 6.0)
    assert omega == pytest.approx(1.0 / math.sqrt(3.0), rel=1e-10)
    assert contrast_parameter(drude_eps(omega, drude.lossless())).real == pytest.approx(-1.0 / 6.0, abs=1e-12)


def test_crossing_outside_bracket(drude):
    with pytest.raises(MaterialOutOfRange):
        crossing_frequency(drude, 0.3)


@pytest.mark.parametrize("d,p", [
    ((0.6, 0.0, -0.7), (0.0, 1.0, 0.0)),
    ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0)),
    ((0.6, 0.0, -0.8), (1.0, 0.0, 0.0)),
])
def test_invalid_incidence(d, p):
    with pytest.raises(InvalidIncidence):
        make_incident_wave(d, p)


def test_incident_wave_rejects_zero_wavenumber():
    with pytest.raises(InvalidIncidence):
        make_incident_wave((0.0, 0.0, -1.0), (1.0, 0.0, 0.0), 0.0)


def test_tangential_field_vanishes_on_plane(oblique_wave):
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = np.array([*rng.uniform(-2, 2, 2), 0.0])
        e_field, _ = incident_field(oblique_wave, x)
        np.testing.assert_allclose(np.cross([0.0, 0.0, 1.0], e_field), 0.0, atol=1e-14)


def test_incident_identities(oblique_wave):
    assert incident_identity_check(oblique_wave) <= 1e-12
    assert incident_identity_check(oblique_wave, -2.0 + 0.1j, -3.0 + 0.2j) <= 1e-12
    wave = make_incident_wave((0.0, 0.6, -0.8), np.array([1.0, 0.8j, 0.6j]) / math.sqrt(2.0), 0.3)
    assert incident_identity_check(wave, -5.0 + 0.5j) <= 1e-12


def test_resonance_distances():
    spec_e = SimpleNamespace(eigenvalues=np.array([0.5, 1.0 / 6.0, 0.1]))
    spec_m = SimpleNamespace(eigenvalues=np.array([0.5, 0.2]))
    d_sigma, d_sigma_star = resonance_distances(-0.15, LAMBDA_MU_CLAMP, spec_e, spec_m)
    assert d_sigma == pytest.approx(0.35)
    assert d_sigma_star == pytest.approx(1.0 / 6.0 - 0.15)


def test_resonance_scan(drude):
    spec = SimpleNamespace(eigenvalues=np.array([0.5, 1.0 / 6.0]))
    pairs = resonance_scan([0.5, 1.0 / math.sqrt(3.0)], drude.lossless(), spec, spec)
    assert pairs[1].d_sigma_star < pairs[0].d_sigma_star
    assert pairs[1].d_sigma_star == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        resonance_scan([0.5], drude, SimpleNamespace(eigenvalues=np.array([])), spec)


def test_tabulated_material(tmp_path):
    path = tmp_path / "gold.csv"
    path.write_text("omega,eps_re,eps_im,mu_re,mu_im\n0.5,-3.0,0.2,1.0,0.0\n1.0,-1.0,0.1,1.0,0.0\n")
    table = load_material_table(path)
    mat = MaterialModel(mode="tabulated", table=table)
    assert drude_eps(0.75, mat) == pytest.approx(-2.0 + 0.15j)
    assert drude_mu(0.75, mat) == pytest.approx(1.0)
    with pytest.raises(MaterialOutOfRange):
        drude_eps(2.0, mat)


def test_tabulated_header_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("w,eps\n0.5,-3.0\n")
    with pytest.raises(ParseError):
        load_material_table(path)

"""
Boundary Operator Tests

Spectral facts of the discrete NP operators, the symmetrisation, operator identities and the
binary dump format.
"""

import numpy as np
import pytest
from scipy.linalg import eigvalsh

from metasurface_bem.core.mesh import make_sphere_mesh
from metasurface_bem.core.npops import (
    apply_incident_correction,
    assemble_double_layer,
    assemble_free_space,
    assemble_operator_set,
    clear_operator_cache,
    conjugate_double_layer,
    dump_operator,
    load_operator,
    match_spectra,
    resolve_np,
    resolve_np_series,
    single_layer_gradient,
    spectrum_distance,
    symmetrized_eigensystem,
    symmetrized_operator,
)
from metasurface_bem.utils.error_handling import NearResonance, ParseError, WrongKind

D_OBLIQUE = np.array([0.6, 0.0, -0.8])


def test_top_eigenvalue_is_half(sphere_spectra):
    for spec in sphere_spectra:
        assert spec.eigenvalues[0] == pytest.approx(0.5, abs=1e-2)
        assert spec.phi0_index == 0


def test_spectrum_inside_bounds(sphere_spectra):
    for spec in sphere_spectra:
        assert np.all(np.abs(spec.eigenvalues) < 0.52)
        assert np.all(np.diff(spec.eigenvalues) <= 1e-12)


@pytest.mark.slow
def test_refined_spectrum_top_and_bounds(sphere_fine_spectra):
    for spec in sphere_fine_spectra:
        assert spec.eigenvalues[0] == pytest.approx(0.5, abs=1e-2)
        assert np.all((spec.eigenvalues > -0.52) & (spec.eigenvalues < 0.52))


@pytest.mark.slow
def test_leading_eigenvalues_settle_under_refinement(lattice, options, sphere_fine_spectra):
    finest = make_sphere_mesh((0.0, 0.0, 0.5), 0.2, 4, lattice)
    try:
        ops = assemble_operator_set(finest, lattice, options)
        top = symmetrized_eigensystem(ops.S_e, ops.Kstar_e).eigenvalues[:5]
    finally:
        clear_operator_cache()
    np.testing.assert_allclose(top, sphere_fine_spectra[0].eigenvalues[:5], rtol=0.0, atol=1e-2)


def test_eigenvectors_orthonormal_in_metric(sphere_spectra):
    spec_e, _ = sphere_spectra
    np.testing.assert_allclose(spec_e.gram(), np.eye(len(spec_e.eigenvalues)), atol=1e-8)


def test_phi0_normalisation(sphere_ops, sphere_spectra, sphere):
    for kind, spec in zip(("e", "m"), sphere_spectra):
        phi0 = spec.phi0
        assert sphere.areas @ phi0 == pytest.approx(-1.0, abs=1e-6)
        residual = sphere_ops.np_star(kind).apply(phi0) - 0.5 * phi0
        assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(phi0)
        column = spec.eigenvectors[:, spec.phi0_index]
        cosine = abs(column @ spec.weight @ phi0) / np.sqrt(phi0 @ spec.weight @ phi0)
        assert cosine >= 0.999


def test_gauss_identity(sphere_ops, sphere):
    w = sphere.areas
    for kind in ("e", "m"):
        np.testing.assert_allclose(w @ sphere_ops.np_star(kind).entries, 0.5 * w, atol=1e-14)
        np.testing.assert_allclose(getattr(sphere_ops, f"K_{kind}").apply(np.ones(sphere.n_panels)), 0.5, atol=1e-12)


def _column_identity_error(ops, kind):
    kstar = ops.np_star(kind)
    w = kstar.weights
    return float(np.max(np.abs(w @ kstar.entries / w - 0.5)))


def test_flat_diagonal_differs_only_on_the_diagonal(sphere_ops, sphere_flat_ops):
    for kind in ("e", "m"):
        flat = sphere_flat_ops.np_star(kind).entries
        corrected = sphere_ops.np_star(kind).entries
        off = ~np.eye(flat.shape[0], dtype=bool)
        np.testing.assert_array_equal(flat[off], corrected[off])
        assert 1e-6 < _column_identity_error(sphere_flat_ops, kind) <= 0.1


def test_free_space_flat_panel_self_term_is_zero(sphere):
    _, kstar = assemble_free_space(sphere, gauss_diagonal=False)
    np.testing.assert_array_equal(np.diag(kstar.entries), 0.0)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["e", "m"])
def test_flat_diagonal_gauss_identity_converges(kind, sphere_flat_ops, sphere_fine_flat_ops):
    coarse = _column_identity_error(sphere_flat_ops, kind)
    fine = _column_identity_error(sphere_fine_flat_ops, kind)
    assert fine <= 5e-2
    assert fine < coarse


@pytest.mark.slow
def test_conjugate_double_layer_on_constants_converges(sphere_flat_ops, sphere_fine_flat_ops):
    def error(ops):
        conjugate = conjugate_double_layer(ops.K_m, D_OBLIQUE)
        return float(np.max(np.abs(conjugate.apply(np.ones(conjugate.n)) - 0.5)))

    coarse, fine = error(sphere_flat_ops), error(sphere_fine_flat_ops)
    assert fine <= 5e-2
    assert fine < coarse


def test_mean_value_identity(sphere_ops, sphere):
    rng = np.random.default_rng(17)
    w = sphere.areas
    corrected = apply_incident_correction(sphere_ops.Kstar_m, D_OBLIQUE)
    for op in (sphere_ops.Kstar_m, corrected):
        for lam in (0.3, -1.2, 4.0):
            phi = rng.normal(size=sphere.n_panels)
            lhs = w @ (lam * phi - op.apply(phi))
            rhs = (lam - 0.5) * (w @ phi)
            assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-12 * np.abs(w) @ np.abs(phi))


def test_weighted_single_layer_symmetric(sphere_ops):
    for kind in ("e", "m"):
        weighted = sphere_ops.single_layer(kind).weighted()
        np.testing.assert_allclose(weighted, weighted.T, atol=1e-12 * np.max(np.abs(weighted)))


def test_single_layer_kernel_reciprocal(sphere_ops, sphere):
    # S_ij = G_ij w_j: the sampled kernel is symmetric, the entries differ by the panel areas
    for kind in ("e", "m"):
        entries = sphere_ops.single_layer(kind).entries
        kernel = entries / sphere.areas[None, :]
        np.testing.assert_allclose(kernel, kernel.T, atol=1e-8 * np.max(np.abs(kernel)))
        if np.ptp(sphere.areas) > 1e-3 * np.max(sphere.areas):
            assert np.linalg.norm(entries - entries.T) > 1e-8 * np.linalg.norm(entries)


def test_reconstruction_equals_symmetrized_operator(sphere_ops, sphere_spectra):
    for kind, spec in zip(("e", "m"), sphere_spectra):
        kstar = sphere_ops.np_star(kind)
        gap = np.linalg.norm(spec.reconstruct() - symmetrized_operator(kstar, spec))
        assert gap <= 1e-6 * np.linalg.norm(kstar.entries)
        # the symmetrisation only moves K* by the discretisation asymmetry
        assert np.linalg.norm(spec.reconstruct() - kstar.entries) <= 0.05 * np.linalg.norm(kstar.entries)


def test_symmetrized_operator_needs_matching_kind(sphere_ops, sphere_spectra):
    with pytest.raises(WrongKind):
        symmetrized_operator(sphere_ops.Kstar_m, sphere_spectra[0])


def test_single_layer_m_kind_quadratic_form_on_mean_zero(sphere_ops, sphere):
    rng = np.random.default_rng(23)
    w = sphere.areas
    weighted = sphere_ops.S_m.weighted()
    scale = np.linalg.norm(weighted, 2)
    for _ in range(100):
        phi = rng.normal(size=sphere.n_panels)
        phi -= (w @ phi) / w.sum()
        assert -(phi @ weighted @ phi) >= -1e-6 * scale * (phi @ phi)


def test_dirichlet_single_layer_negative(sphere_ops):
    weighted = sphere_ops.S_e.weighted()
    eigs = eigvalsh(0.5 * (weighted + weighted.T))
    assert eigs[-1] <= 1e-6 * np.max(np.abs(eigs))


def test_incident_correction_keeps_spectrum(sphere_ops, sphere_spectra):
    corrected = apply_incident_correction(sphere_ops.Kstar_m, D_OBLIQUE)
    assert corrected.flavor == "np_star_corrected"
    spec = symmetrized_eigensystem(sphere_ops.S_m, corrected)
    assert match_spectra(sphere_spectra[1].eigenvalues, spec.eigenvalues) <= 1e-6


def test_incident_correction_needs_m_kind(sphere_ops):
    with pytest.raises(WrongKind):
        apply_incident_correction(sphere_ops.Kstar_e, D_OBLIQUE)


def test_mismatched_kinds_rejected(sphere_ops):
    with pytest.raises(WrongKind):
        symmetrized_eigensystem(sphere_ops.S_e, sphere_ops.Kstar_m)
    with pytest.raises(WrongKind):
        sphere_ops.np_star("x")


def test_conjugate_double_layer_maps_one_to_half(sphere_flat_ops, sphere, lattice, flat_options):
    conjugate = assemble_double_layer("m", True, sphere, lattice, D_OBLIQUE, flat_options)
    assert conjugate.flavor == "double_layer_conjugate"
    np.testing.assert_allclose(conjugate.entries, conjugate_double_layer(sphere_flat_ops.K_m, D_OBLIQUE).entries)
    np.testing.assert_allclose(conjugate.apply(np.ones(sphere.n_panels)), 0.5, atol=0.1)


def test_conjugate_flag_leaves_e_kind_unchanged(sphere, lattice, sphere_ops):
    plain = assemble_double_layer("e", False, sphere, lattice, D_OBLIQUE)
    conjugate = assemble_double_layer("e", True, sphere, lattice, D_OBLIQUE)
    np.testing.assert_allclose(conjugate.entries, plain.entries, rtol=0.0, atol=1e-10)
    np.testing.assert_allclose(plain.entries, sphere_ops.K_e.entries, rtol=0.0, atol=1e-10)


def test_conjugate_needs_double_layer(sphere_ops):
    with pytest.raises(WrongKind):
        conjugate_double_layer(sphere_ops.Kstar_m, D_OBLIQUE)


def test_incident_correction_at_normal_incidence(sphere_ops):
    corrected = apply_incident_correction(sphere_ops.Kstar_m, (0.0, 0.0, -1.0))
    np.testing.assert_array_equal(corrected.entries, sphere_ops.Kstar_m.entries)


def test_incident_correction_invisible_on_mean_zero(sphere_ops, sphere):
    rng = np.random.default_rng(29)
    w = sphere.areas
    corrected = apply_incident_correction(sphere_ops.Kstar_m, D_OBLIQUE)
    for _ in range(10):
        phi = rng.normal(size=sphere.n_panels)
        phi -= (w @ phi) / w.sum()
        plain = sphere_ops.Kstar_m.apply(phi)
        np.testing.assert_allclose(corrected.apply(phi), plain, rtol=0.0, atol=1e-12 * np.linalg.norm(plain))


def test_dilute_cluster_near_one_sixth(dilute_spectra):
    spec_e, spec_m = dilute_spectra
    for spec in (spec_e, spec_m):
        np.testing.assert_allclose(spec.eigenvalues[1:4], 1.0 / 6.0, atol=0.02)


def test_dilute_matches_free_space(dilute, dilute_spectra):
    free = symmetrized_eigensystem(*assemble_free_space(dilute))
    np.testing.assert_allclose(dilute_spectra[0].eigenvalues[1:4], free.eigenvalues[1:4], atol=0.02)
    assert free.eigenvalues[0] == pytest.approx(0.5, abs=1e-2)


def test_resolvent_scaling(sphere_ops, sphere_spectra, sphere):
    spec = sphere_spectra[0]
    f = sphere.normals[:, 2]
    coeffs = np.abs(spec.eigenvectors.T @ (spec.weight @ f))
    coeffs[spec.phi0_index] = 0.0
    j = int(np.argmax(coeffs))
    scaled = [np.linalg.norm(resolve_np(-spec.eigenvalues[j] + 1j * t, sphere_ops.Kstar_e, f)) * t
              for t in (1e-1, 1e-2, 1e-3)]
    assert max(scaled) / min(scaled) <= 2.0


def test_resolve_refuses_resonance(sphere_ops, sphere_spectra, sphere):
    spec = sphere_spectra[0]
    lam = -spec.eigenvalues[2]
    assert spectrum_distance(lam, spec, negate=True) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(NearResonance) as info:
        resolve_np(lam, sphere_ops.Kstar_e, sphere.normals[:, 2], spec)
    assert info.value.distance < 1e-8


def test_series_resolvent_close_to_direct_solve(sphere_ops, sphere_spectra, sphere):
    f = sphere.normals[:, 2]
    for kind, spec in zip(("e", "m"), sphere_spectra):
        direct = resolve_np(10.0, sphere_ops.np_star(kind), f)
        series = resolve_np_series(10.0, spec, f)
        assert np.linalg.norm(series - direct) <= 1e-3 * np.linalg.norm(direct)


def test_resolve_far_from_spectrum_is_neumann_series(sphere_ops, sphere):
    lam = 10.0
    for kind, f in (("e", sphere.normals[:, 2]), ("m", sphere.normals[:, 0])):
        kstar = sphere_ops.np_star(kind)
        phi = resolve_np(lam, kstar, f)
        bound = np.linalg.norm(kstar.entries, 2) / lam ** 2 * np.linalg.norm(f) * 1.1
        assert np.linalg.norm(phi - f / lam) <= bound
        residual = lam * phi + kstar.apply(phi) - f
        assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(f)


def test_resolvent_analytic_in_lambda(sphere_ops, sphere):
    f = sphere.normals[:, 2]
    kstar = sphere_ops.Kstar_e
    lam, h = 2.0 + 0.3j, 1e-4
    along_real = (resolve_np(lam + h, kstar, f) - resolve_np(lam - h, kstar, f)) / (2 * h)
    along_imag = (resolve_np(lam + 1j * h, kstar, f) - resolve_np(lam - 1j * h, kstar, f)) / (2j * h)
    assert np.linalg.norm(along_real - along_imag) <= 1e-6 * np.linalg.norm(along_real)
    # d/dlam (lam + K*)^-1 f = -(lam + K*)^-2 f
    exact = -resolve_np(lam, kstar, resolve_np(lam, kstar, f))
    assert np.linalg.norm(along_real - exact) <= 1e-6 * np.linalg.norm(exact)


@pytest.mark.slow
def test_calderon_residual_decreases(sphere_ops, sphere_fine_ops):
    def residual(ops):
        product = ops.S_e.weighted() @ ops.Kstar_e.entries
        return np.linalg.norm(product - product.T) / np.linalg.norm(product)

    assert residual(sphere_ops) / residual(sphere_fine_ops) >= 1.5


def _jump_residual(ops, lattice, options, stride):
    mesh = ops.mesh
    density = mesh.normals[:, 2]
    panels = np.arange(0, mesh.n_panels, stride)
    points = mesh.centroids[panels] + 1e-6 * mesh.mesh_size * mesh.normals[panels]
    grad = single_layer_gradient("e", mesh, lattice, density, points, options)
    normal = np.einsum("ij,ij->i", grad, mesh.normals[panels])
    expected = (0.5 * density + ops.Kstar_e.apply(density))[panels]
    return float(np.max(np.abs(normal - expected)) / np.max(np.abs(density)))


def test_jump_relation(sphere_ops, lattice, options):
    assert _jump_residual(sphere_ops, lattice, options, 16) <= 0.2


@pytest.mark.slow
def test_jump_relation_first_order(sphere_ops, sphere_fine_ops, lattice, options):
    coarse = _jump_residual(sphere_ops, lattice, options, 1)
    fine = _jump_residual(sphere_fine_ops, lattice, options, 4)
    assert coarse / fine >= 1.5


def test_single_layer_gradient_matrix_density(sphere, lattice, options):
    densities = sphere.normals
    points = np.array([[0.0, 0.0, 1.0], [0.1, 0.2, 0.9]])
    stacked = single_layer_gradient("m", sphere, lattice, densities, points, options)
    assert stacked.shape == (2, 3, 3)
    column = single_layer_gradient("m", sphere, lattice, densities[:, 1], points, options)
    np.testing.assert_allclose(stacked[:, :, 1], column, rtol=1e-12, atol=1e-12)


def test_match_spectra_pairs_optimally():
    assert match_spectra(np.array([0.1, 0.3, 0.2]), np.array([0.3, 0.2, 0.1])) == 0.0
    with pytest.raises(ValueError):
        match_spectra(np.zeros(2), np.zeros(3))


def test_dump_round_trip(tmp_path, sphere_ops, sphere):
    path = dump_operator(sphere_ops.Kstar_m, tmp_path / "kstar.npop")
    loaded = load_operator(path, sphere)
    assert (loaded.kind, loaded.flavor) == ("m", "np_star")
    np.testing.assert_allclose(loaded.entries, sphere_ops.Kstar_m.entries, rtol=1e-6, atol=1e-7)


def test_dump_bad_magic(tmp_path, sphere):
    path = tmp_path / "bad.npop"
    path.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(ParseError):
        load_operator(path, sphere)

"""
Green's Function Tests

Cross-checks between the spectral, Ewald, static and image-sum evaluations of the
quasi-periodic kernel, plus the error contracts of the evaluators.
"""

import numpy as np
import pytest

from metasurface_bem.core.greens import (
    EwaldParams,
    check_rayleigh,
    eval_g0_conjugate,
    eval_g0_leading,
    eval_g_halfspace,
    eval_g_quasi_ewald,
    eval_g_quasi_spectral,
    eval_g_static,
    eval_propagating_mode,
    eval_tensor_gr,
    extract_expansion_terms,
    image_sum_static_e,
    make_bloch_context,
    static_lattice_sum,
)
from metasurface_bem.core.lattice import make_lattice
from metasurface_bem.utils.error_handling import (
    InvalidIncidence,
    RayleighAnomaly,
    SlowConvergence,
    SourcePointSingularity,
)

D_OBLIQUE = (0.6, 0.0, -0.8)


@pytest.fixture(scope="module")
def ctx():
    return make_bloch_context(0.1, D_OBLIQUE)


def test_static_far_value(lattice):
    assert abs(eval_g_static(lattice, (0.0, 0.0, 5.0)) - 2.5) <= 1e-12


def test_static_symmetry(lattice):
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = np.concatenate([rng.uniform(-0.5, 0.5, 2), rng.uniform(0.02, 1.0, 1) * rng.choice([-1, 1])])
        assert abs(eval_g_static(lattice, x) - eval_g_static(lattice, -x)) <= 1e-12


def test_static_series_matches_ewald_sum(lattice):
    # above h_min the plane-wave series is used, below it the Ewald sum
    x = np.array([0.13, -0.21, 0.3])
    series = eval_g_static(lattice, x, h_min=0.05).real
    ewald = static_lattice_sum(lattice, x[None, :], EwaldParams())[0]
    assert series == pytest.approx(ewald, abs=1e-12)


def test_spectral_matches_ewald(lattice, ctx):
    x = (0.2, 0.1, 0.5)
    diff = abs(eval_g_quasi_spectral(lattice, ctx, x) - eval_g_quasi_ewald(lattice, ctx, None, x))
    assert diff <= 1e-8


def test_spectral_matches_ewald_random_points(lattice, ctx):
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = np.concatenate([rng.uniform(-0.5, 0.5, 2), rng.uniform(0.1, 3.0, 1) * rng.choice([-1, 1])])
        spectral = eval_g_quasi_spectral(lattice, ctx, x)
        ewald = eval_g_quasi_ewald(lattice, ctx, EwaldParams(), x)
        assert abs(spectral - ewald) <= 1e-8


def test_quasi_periodicity(lattice, ctx):
    x = np.array([0.2, 0.1, 0.4])
    shifted = x + np.array([1.0, 0.0, 0.0])
    phase = np.exp(1j * ctx.kpar[0])
    assert eval_g_quasi_ewald(lattice, ctx, None, shifted) == pytest.approx(
        phase * eval_g_quasi_ewald(lattice, ctx, None, x), abs=1e-10)


def test_spectral_refuses_source_plane(lattice, ctx):
    with pytest.raises(SlowConvergence):
        eval_g_quasi_spectral(lattice, ctx, (0.1, 0.1, 1e-3))


def test_dynamic_evaluators_need_nonzero_k(lattice):
    static_ctx = make_bloch_context(0.0, D_OBLIQUE)
    with pytest.raises(InvalidIncidence):
        eval_g_quasi_spectral(lattice, static_ctx, (0.0, 0.0, 1.0))
    with pytest.raises(InvalidIncidence):
        eval_g_quasi_ewald(lattice, static_ctx, None, (0.0, 0.0, 1.0))


def test_ewald_refuses_lattice_source(lattice, ctx):
    with pytest.raises(SourcePointSingularity):
        eval_g_quasi_ewald(lattice, ctx, None, (1.0, 0.0, 0.0))


def test_rayleigh_anomaly(lattice):
    check_rayleigh(lattice, make_bloch_context(1.0, (0.0, 0.0, -1.0)))
    with pytest.raises(RayleighAnomaly):
        check_rayleigh(lattice, make_bloch_context(7.0, (0.0, 0.0, -1.0)))


@pytest.mark.parametrize("d", [(0.0, 0.0, 1.0), (0.0, 0.0, -2.0), (1.0, 0.0, 0.0)])
def test_bloch_context_rejects_bad_direction(d):
    with pytest.raises(InvalidIncidence):
        make_bloch_context(1.0, d)


def test_dirichlet_kernel_vanishes_on_plane(lattice, ctx):
    x = (0.3, -0.1, 0.0)
    y = (0.0, 0.1, 0.5)
    assert abs(eval_g_halfspace("e", lattice, None, x, y)) <= 1e-12
    assert abs(eval_g_halfspace("e", lattice, ctx, x, y)) <= 1e-10


def test_halfspace_static_matches_image_sum(lattice):
    x = (0.1, 0.2, 0.6)
    y = (-0.05, 0.1, 0.4)
    kernel = eval_g_halfspace("e", lattice, None, x, y).real
    assert kernel == pytest.approx(image_sum_static_e(lattice, x, y), abs=1e-8)


def test_neumann_leading_term_shift(lattice):
    x = np.array([0.2, 0.0, 0.7])
    y = np.array([-0.1, 0.05, 0.5])
    static = eval_g_halfspace("m", lattice, None, x, y)
    leading = eval_g0_leading("m", lattice, D_OBLIQUE, x, y)
    shift = (0.6 * (x[0] - y[0])) / (-0.8 * lattice.tau)
    assert leading == pytest.approx(static - shift, abs=1e-12)


def test_expansion_singular_term(lattice):
    terms = extract_expansion_terms(lattice, D_OBLIQUE, (0.2, 0.1, 0.5), 2)
    assert len(terms) == 4
    assert terms[0] == pytest.approx(1j / (2 * -0.8 * lattice.tau))


def test_expansion_leading_term(lattice):
    # static kernel plus the linear phase of the propagating order
    x = (0.2, 0.1, 0.5)
    terms = extract_expansion_terms(lattice, D_OBLIQUE, x, 1)
    expected = eval_g_static(lattice, x) - (0.6 * 0.2) / (2 * -0.8 * lattice.tau)
    assert terms[1] == pytest.approx(expected, abs=1e-6)


def test_expansion_recurrence(lattice):
    x = np.array([0.2, 0.1, 0.5])
    h = 1e-2

    def laplacian(index):
        centre = extract_expansion_terms(lattice, D_OBLIQUE, x, 1)[index]
        total = -6.0 * centre
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            total += extract_expansion_terms(lattice, D_OBLIQUE, x + step, 1)[index]
            total += extract_expansion_terms(lattice, D_OBLIQUE, x - step, 1)[index]
        return total / h ** 2

    assert abs(laplacian(1)) <= 1e-4
    assert abs(laplacian(2) + 1j / (2 * -0.8 * lattice.tau)) <= 1e-4


def test_propagating_mode_matches_kernel_far_away(lattice):
    ctx = make_bloch_context(0.5, D_OBLIQUE)
    x = (0.1, 0.2, 6.0)
    y = (0.0, 0.0, 0.5)
    # evanescent orders decay like exp(-2 pi * 5.5)
    for kind in ("e", "m"):
        assert eval_g_halfspace(kind, lattice, ctx, x, y) == pytest.approx(
            eval_propagating_mode(kind, lattice, ctx, x, y), abs=1e-10)


def test_tensor_gr_is_transverse():
    ctx = make_bloch_context(0.5, D_OBLIQUE)
    tensor = eval_tensor_gr(ctx, (0.3, 0.1, 2.0))
    np.testing.assert_allclose(tensor @ ctx.dstar, 0.0, atol=1e-14)
    np.testing.assert_allclose(tensor, tensor.T, atol=1e-14)


def test_ewald_params_validation():
    with pytest.raises(ValueError):
        EwaldParams(eta=-1.0)
    with pytest.raises(ValueError):
        EwaldParams(n_spatial=0)
    with pytest.raises(ValueError):
        EwaldParams(tol=2.0)


def test_oblique_lattice_spectral_vs_ewald():
    lat = make_lattice((1.0, 0.0), (0.5, 0.9))
    ctx = make_bloch_context(0.2, (0.0, 0.6, -0.8))
    x = (0.1, -0.2, 0.4)
    assert eval_g_quasi_spectral(lat, ctx, x) == pytest.approx(eval_g_quasi_ewald(lat, ctx, None, x), abs=1e-8)


def test_static_symmetry_under_each_mirror(lattice):
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = np.concatenate([rng.uniform(-0.5, 0.5, 2), rng.uniform(0.02, 1.0, 1) * rng.choice([-1, 1])])
        value = eval_g_static(lattice, x)
        assert eval_g_static(lattice, x * [-1.0, -1.0, 1.0]) == pytest.approx(value, abs=1e-12)
        assert eval_g_static(lattice, x * [1.0, 1.0, -1.0]) == pytest.approx(value, abs=1e-12)


@pytest.mark.parametrize("x", [(0.2, 0.1, 0.5), (0.31, -0.12, 0.01)])
def test_ewald_independent_of_splitting(lattice, ctx, x):
    reference = eval_g_quasi_ewald(lattice, ctx, EwaldParams(), x)
    for eta in (1.0, 2.5, 4.0):
        assert eval_g_quasi_ewald(lattice, ctx, EwaldParams(eta=eta), x) == pytest.approx(reference, abs=1e-10)
    static = static_lattice_sum(lattice, np.array([x]), EwaldParams())[0]
    for eta in (1.0, 4.0):
        assert static_lattice_sum(lattice, np.array([x]), EwaldParams(eta=eta))[0] == pytest.approx(static, abs=1e-10)


def test_helmholtz_residual(lattice):
    ctx = make_bloch_context(0.5, D_OBLIQUE)
    x = np.array([0.2, 0.1, 0.5])
    h = 5e-3
    centre = eval_g_quasi_spectral(lattice, ctx, x)
    laplacian = -6.0 * centre
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        laplacian += eval_g_quasi_spectral(lattice, ctx, x + step) + eval_g_quasi_spectral(lattice, ctx, x - step)
    laplacian /= h ** 2
    assert abs(laplacian + ctx.k ** 2 * centre) <= 1e-3


@pytest.mark.parametrize("k", [None, 0.5])
def test_neumann_kernel_has_zero_normal_trace(lattice, k):
    bloch = None if k is None else make_bloch_context(k, D_OBLIQUE)
    y = (0.05, -0.1, 0.4)
    h = 1e-3

    def kernel(kind, x3):
        return eval_g_halfspace(kind, lattice, bloch, (0.2, 0.1, x3), y)

    def one_sided(kind):
        return (-3.0 * kernel(kind, 0.0) + 4.0 * kernel(kind, h) - kernel(kind, 2.0 * h)) / (2.0 * h)

    assert abs(one_sided("m")) <= 1e-4
    # the Dirichlet kernel has a genuine normal derivative there
    assert abs(one_sided("e")) > 1e-2


def test_kernel_analytic_in_wavenumber(lattice):
    x = (0.2, 0.1, 0.5)
    k, h = 0.5 + 0.05j, 1e-5

    def g(kk):
        return eval_g_quasi_spectral(lattice, make_bloch_context(kk, D_OBLIQUE), x)

    along_real = (g(k + h) - g(k - h)) / (2 * h)
    along_imag = (g(k + 1j * h) - g(k - 1j * h)) / (2j * h)
    assert abs(along_real - along_imag) <= 1e-6 * abs(along_real)


def test_conjugate_kernel_is_transposed_leading_term(lattice):
    rng = np.random.default_rng(19)
    for _ in range(5):
        x = np.concatenate([rng.uniform(-0.5, 0.5, 2), rng.uniform(0.2, 1.0, 1)])
        y = np.array([x[0] - 0.3, rng.uniform(-0.5, 0.5), rng.uniform(0.2, 1.0)])
        conjugate = eval_g0_conjugate(lattice, D_OBLIQUE, x, y)
        assert conjugate == pytest.approx(eval_g0_leading("m", lattice, D_OBLIQUE, y, x), abs=1e-12)
        assert conjugate != pytest.approx(eval_g0_leading("m", lattice, D_OBLIQUE, x, y), abs=1e-6)

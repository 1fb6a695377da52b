"""
Shared fixtures: the unit square lattice, two sphere refinements and a dilute sphere with their
assembled operator sets and spectra. Assembly is the expensive step, so everything is session scoped.

The sphere operators are assembled once with the flat-panel K* diagonal; the Gauss-corrected sets
used everywhere else are derived from them.
"""

from dataclasses import replace

import pytest

from metasurface_bem.core.lattice import make_lattice
from metasurface_bem.core.mesh import make_sphere_mesh
from metasurface_bem.core.npops import AssemblyOptions, assemble_operator_set, symmetrized_eigensystem
from metasurface_bem.core.physics import MaterialModel, make_incident_wave


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: convergence runs on the refinement-3 and refinement-4 spheres")


def spectra_of(ops):
    return (
        symmetrized_eigensystem(ops.S_e, ops.Kstar_e),
        symmetrized_eigensystem(ops.S_m, ops.Kstar_m),
    )


@pytest.fixture(scope="session")
def lattice():
    return make_lattice((1.0, 0.0), (0.0, 1.0))


@pytest.fixture(scope="session")
def options():
    return AssemblyOptions()


@pytest.fixture(scope="session")
def flat_options(options):
    return replace(options, gauss_diagonal=False)


@pytest.fixture(scope="session")
def sphere(lattice):
    return make_sphere_mesh((0.0, 0.0, 0.5), 0.2, 2, lattice)


@pytest.fixture(scope="session")
def sphere_fine(lattice):
    return make_sphere_mesh((0.0, 0.0, 0.5), 0.2, 3, lattice)


@pytest.fixture(scope="session")
def dilute(lattice):
    return make_sphere_mesh((0.0, 0.0, 0.5), 0.05, 2, lattice)


@pytest.fixture(scope="session")
def sphere_flat_ops(sphere, lattice, flat_options):
    return assemble_operator_set(sphere, lattice, flat_options)


@pytest.fixture(scope="session")
def sphere_fine_flat_ops(sphere_fine, lattice, flat_options):
    return assemble_operator_set(sphere_fine, lattice, flat_options)


@pytest.fixture(scope="session")
def sphere_ops(sphere_flat_ops):
    return sphere_flat_ops.with_gauss_diagonal()


@pytest.fixture(scope="session")
def sphere_fine_ops(sphere_fine_flat_ops):
    return sphere_fine_flat_ops.with_gauss_diagonal()


@pytest.fixture(scope="session")
def dilute_ops(dilute, lattice, options):
    return assemble_operator_set(dilute, lattice, options)


@pytest.fixture(scope="session")
def sphere_spectra(sphere_ops):
    return spectra_of(sphere_ops)


@pytest.fixture(scope="session")
def sphere_fine_spectra(sphere_fine_ops):
    return spectra_of(sphere_fine_ops)


@pytest.fixture(scope="session")
def dilute_spectra(dilute_ops):
    return spectra_of(dilute_ops)


@pytest.fixture
def oblique_wave():
    return make_incident_wave((0.6, 0.0, -0.8), (0.8, 0.0, 0.6), 0.5)


@pytest.fixture
def drude():
    return MaterialModel(eps_inf=1.0, omega_p_e=1.0, gamma_e=0.01)

"""
Validation Suite

Named numerical checks grouped into the greens, npops and scattering suites. Each check returns a
CheckResult comparing a measured residual against its threshold; randomised samples draw from a
generator seeded by the scenario seed.
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy.linalg import eigvalsh

from .greens import (
    eval_g0_conjugate,
    eval_g0_leading,
    eval_g_halfspace,
    eval_g_quasi_ewald,
    eval_g_quasi_spectral,
    eval_g_static,
    extract_expansion_terms,
    image_sum_static_e,
    make_bloch_context,
)
from .mesh import SurfaceMesh, mesh_from_config
from .npops import (
    OperatorSet,
    apply_incident_correction,
    assemble_free_space,
    assemble_operator_set,
    conjugate_double_layer,
    match_spectra,
    resolve_np,
    single_layer_gradient,
    symmetrized_eigensystem,
    symmetrized_operator,
)
from .physics import (
    crossing_frequency,
    incident_identity_check,
    make_incident_wave,
)
from .scattering import (
    CellFieldSolver,
    PolarizationTensors,
    ScatteringPipeline,
    compact_scattered_field,
    dipole_je,
    dipoles_from_tensors,
    impedance_beta_e,
    impedance_dm,
    polarization_tensor,
    reflection_matrix,
    scattered_field,
)
from .tracing import get_tracer

logger = logging.getLogger(__name__)

SUITES = ("greens", "npops", "scattering")
SPHERE_CLUSTER = 1.0 / 6.0
STENCIL_STEP = 1e-2
JUMP_SAMPLES = 20
INTERFACE_SAMPLES = 10
MIRROR_PARALLEL = np.array([-1.0, -1.0, 1.0])
MIRROR_NORMAL = np.array([1.0, 1.0, -1.0])


@dataclass(frozen=True)
class CheckResult:
    name: str
    suite: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "suite": self.suite,
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
        }


Check = Callable[["ValidationContext"], CheckResult]
_REGISTRY: Dict[str, List[Tuple[str, Check]]] = {suite: [] for suite in SUITES}


def check(suite: str, name: str):
    """Register a check under a suite."""
    def decorator(fn: Check) -> Check:
        _REGISTRY[suite].append((name, fn))
        fn.check_name = name
        fn.suite = suite
        return fn
    return decorator


def check_names(suite: str = "all") -> List[str]:
    suites = SUITES if suite == "all" else (suite,)
    return [name for s in suites for name, _ in _REGISTRY[s]]


def _at_most(fn: Check, value: float, threshold: float, detail: str = "") -> CheckResult:
    passed = bool(np.isfinite(value) and value <= threshold)
    return CheckResult(fn.check_name, fn.suite, passed, float(value), float(threshold), detail)


def _at_least(fn: Check, value: float, threshold: float, detail: str = "") -> CheckResult:
    passed = bool(np.isfinite(value) and value >= threshold)
    return CheckResult(fn.check_name, fn.suite, passed, float(value), float(threshold), detail)


class ValidationContext:
    """Engine access plus lazily built refinements and a seeded generator"""

    def __init__(self, engine, seed: int):
        self.engine = engine
        self.rng = np.random.default_rng(seed)

    @property
    def lattice(self):
        return self.engine.lattice

    @property
    def layer(self):
        return self.engine.main_layer

    @property
    def ops(self) -> OperatorSet:
        return self.layer.operators

    @property
    def mesh(self) -> SurfaceMesh:
        return self.layer.mesh

    @cached_property
    def refined(self) -> Tuple[SurfaceMesh, OperatorSet]:
        """The main geometry one refinement level finer."""
        geometry = self.engine.config.geometry
        finer = replace(geometry, refinement=geometry.refinement + 1)
        mesh = mesh_from_config(finer, self.lattice)
        return mesh, assemble_operator_set(mesh, self.lattice, self.engine.assembly_options)

    @cached_property
    def flat_diagonal_ops(self) -> OperatorSet:
        """Main-mesh operators whose K* diagonal is the flat-panel self term, not the Gauss fix."""
        options = replace(self.engine.assembly_options, gauss_diagonal=False)
        return assemble_operator_set(self.mesh, self.lattice, options)

    @cached_property
    def sample_wavenumber(self) -> float:
        """A wavenumber well inside the homogenisation regime of the lattice."""
        lat = self.lattice
        return 0.1 * min(np.linalg.norm(lat.b1), np.linalg.norm(lat.b2)) / (2.0 * math.pi)

    @property
    def omega(self) -> float:
        return self.engine.config.sweep.omega_min

    def cell_points(self, count: int, z_range: Tuple[float, float], both_signs: bool = False) -> np.ndarray:
        s = self.rng.uniform(-0.5, 0.5, size=(count, 2))
        xy = s[:, :1] * self.lattice.a1 + s[:, 1:] * self.lattice.a2
        z = self.rng.uniform(*z_range, size=count)
        if both_signs:
            z *= self.rng.choice([-1.0, 1.0], size=count)
        return np.column_stack([xy, z])

    def random_incidence(self):
        """Unit d with d3 <= -0.3 and a unit transverse complex polarisation."""
        theta = self.rng.uniform(0.0, math.acos(0.3))
        phi = self.rng.uniform(0.0, 2.0 * math.pi)
        d = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), -math.cos(theta)])
        basis = np.linalg.svd(d[None, :])[2][1:]
        coeffs = self.rng.normal(size=2) + 1j * self.rng.normal(size=2)
        p = coeffs @ basis
        return d, p / np.linalg.norm(p)


# Green's functions

@check("greens", "static_far_value")
def check_static_far_value(ctx: ValidationContext) -> CheckResult:
    tau = ctx.lattice.tau
    value = eval_g_static(ctx.lattice, (0.0, 0.0, 5.0), ctx.engine.config.numerics.h_min, ctx.engine.ewald)
    return _at_most(check_static_far_value, abs(value - 5.0 / (2.0 * tau)), 1e-12, "G0(0,0,5) - 5/(2 tau)")


@check("greens", "static_symmetry")
def check_static_symmetry(ctx: ValidationContext) -> CheckResult:
    h_min = ctx.engine.config.numerics.h_min
    worst = 0.0
    for x in ctx.cell_points(10, (0.02, 1.0), both_signs=True):
        a = eval_g_static(ctx.lattice, x, h_min, ctx.engine.ewald)
        for mirrored in (-x, x * MIRROR_PARALLEL, x * MIRROR_NORMAL):
            b = eval_g_static(ctx.lattice, mirrored, h_min, ctx.engine.ewald)
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return _at_most(check_static_symmetry, worst, 1e-12, "G0 under -x, (-x', x3) and (x', -x3)")


@check("greens", "conjugate_kernel")
def check_conjugate_kernel(ctx: ValidationContext) -> CheckResult:
    d = ctx.engine.incidence.d
    worst = 0.0
    for x, y in zip(ctx.cell_points(10, (0.2, 1.0)), ctx.cell_points(10, (0.2, 1.0))):
        conjugate = eval_g0_conjugate(ctx.lattice, d, x, y, ctx.engine.ewald)
        swapped = eval_g0_leading("m", ctx.lattice, d, y, x, ctx.engine.ewald)
        worst = max(worst, abs(conjugate - swapped) / max(1.0, abs(swapped)))
    return _at_most(check_conjugate_kernel, worst, 1e-12, "conjugate m-kernel at (x, y) vs leading term at (y, x)")


@check("greens", "spectral_vs_ewald")
def check_spectral_vs_ewald(ctx: ValidationContext) -> CheckResult:
    bloch = make_bloch_context(ctx.sample_wavenumber, ctx.engine.incidence.d)
    h_min = ctx.engine.config.numerics.h_min
    worst = 0.0
    for x in ctx.cell_points(100, (0.1, 3.0), both_signs=True):
        spectral = eval_g_quasi_spectral(ctx.lattice, bloch, x, h_min)
        ewald = eval_g_quasi_ewald(ctx.lattice, bloch, ctx.engine.ewald, x)
        worst = max(worst, abs(spectral - ewald))
    return _at_most(check_spectral_vs_ewald, worst, 1e-8, f"k = {ctx.sample_wavenumber:.6g}, 100 points")


@check("greens", "image_sum_oracle")
def check_image_sum_oracle(ctx: ValidationContext) -> CheckResult:
    worst = 0.0
    xs = ctx.cell_points(5, (0.2, 1.0))
    ys = ctx.cell_points(5, (0.2, 1.0))
    for x, y in zip(xs, ys):
        kernel = eval_g_halfspace("e", ctx.lattice, None, x, y, ctx.engine.ewald)
        worst = max(worst, abs(kernel.real - image_sum_static_e(ctx.lattice, x, y)))
    return _at_most(check_image_sum_oracle, worst, 1e-8, "static Dirichlet kernel vs direct image sum")


def _laplacian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    centre = fn(x)
    total = -6.0 * centre
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        total = total + fn(x + step) + fn(x - step)
    return total / h ** 2


@check("greens", "expansion_recurrence")
def check_expansion_recurrence(ctx: ValidationContext) -> CheckResult:
    d = ctx.engine.incidence.d
    x = np.array([0.2, 0.1, 0.5])

    def terms(point):
        return extract_expansion_terms(ctx.lattice, d, point, 1)

    lap = _laplacian(terms, x, STENCIL_STEP)
    singular = 1j / (2.0 * d[2] * ctx.lattice.tau)
    residual = max(abs(lap[1]), abs(lap[2] + singular))
    return _at_most(check_expansion_recurrence, residual, 1e-4, "Laplacian of G_0 and G_1 + G_-1")


# Boundary operators

@check("npops", "top_eigenvalue")
def check_top_eigenvalue(ctx: ValidationContext) -> CheckResult:
    top = [ctx.layer.spec_e.eigenvalues[0], ctx.layer.spec_m.eigenvalues[0]]
    value = max(abs(t - 0.5) for t in top)
    return _at_most(check_top_eigenvalue, value, 1e-2, f"top eigenvalues {json.dumps([float(t) for t in top])}")


@check("npops", "spectrum_bounds")
def check_spectrum_bounds(ctx: ValidationContext) -> CheckResult:
    value = max(np.max(np.abs(ctx.layer.spec_e.eigenvalues)), np.max(np.abs(ctx.layer.spec_m.eigenvalues)))
    return _at_most(check_spectrum_bounds, value, 0.52, "max |lambda| over both kinds")


@check("npops", "corrected_spectrum")
def check_corrected_spectrum(ctx: ValidationContext) -> CheckResult:
    corrected = apply_incident_correction(ctx.ops.Kstar_m, ctx.engine.incidence.d)
    spec = symmetrized_eigensystem(ctx.ops.S_m, corrected)
    value = match_spectra(ctx.layer.spec_m.eigenvalues, spec.eigenvalues)
    return _at_most(check_corrected_spectrum, value, 1e-6, "m-kind spectra with and without the correction")


@check("npops", "dilute_cluster")
def check_dilute_cluster(ctx: ValidationContext) -> CheckResult:
    free = symmetrized_eigensystem(*assemble_free_space(ctx.mesh, ctx.engine.assembly_options.near_factor))
    periodic = ctx.layer.spec_e.eigenvalues[1:4]
    value = float(np.max(np.abs(periodic - free.eigenvalues[1:4])))
    if ctx.engine.config.geometry.shape == "sphere":
        value = max(value, float(np.max(np.abs(periodic - SPHERE_CLUSTER))))
    return _at_most(check_dilute_cluster, value, 0.02, "dipole cluster against the free-space operator")


@check("npops", "conjugate_gauss")
def check_conjugate_gauss(ctx: ValidationContext) -> CheckResult:
    conjugate = conjugate_double_layer(ctx.flat_diagonal_ops.K_m, ctx.engine.incidence.d)
    value = float(np.max(np.abs(conjugate.apply(np.ones(conjugate.n)) - 0.5)))
    return _at_most(check_conjugate_gauss, value, 5e-2, "conjugate m-kind double layer (flat-panel diagonal) on 1")


@check("npops", "spectral_reconstruction")
def check_spectral_reconstruction(ctx: ValidationContext) -> CheckResult:
    worst = 0.0
    for kstar, spec in ((ctx.ops.Kstar_e, ctx.layer.spec_e), (ctx.ops.Kstar_m, ctx.layer.spec_m)):
        expected = symmetrized_operator(kstar, spec)
        worst = max(worst, np.linalg.norm(spec.reconstruct() - expected) / np.linalg.norm(kstar.entries))
    return _at_most(check_spectral_reconstruction, worst, 1e-6, "eigen-expansion against B^-1 sym(B K~*)")


@check("npops", "single_layer_sign")
def check_single_layer_sign(ctx: ValidationContext) -> CheckResult:
    weighted = ctx.ops.S_e.weighted()
    eigs = eigvalsh(0.5 * (weighted + weighted.T))
    scale = float(np.max(np.abs(eigs)))
    return _at_most(check_single_layer_sign, float(eigs[-1]) / scale, 1e-6, "-S_e positive semi-definite")


@check("npops", "resolvent_scaling")
def check_resolvent_scaling(ctx: ValidationContext) -> CheckResult:
    spec = ctx.layer.spec_e
    f = ctx.mesh.normals[:, 2]
    coeffs = np.abs(spec.eigenvectors.T @ (spec.weight @ f))
    coeffs[spec.phi0_index] = 0.0
    j = int(np.argmax(coeffs))
    scaled = []
    for t in (1e-1, 1e-2, 1e-3):
        phi = resolve_np(-spec.eigenvalues[j] + 1j * t, ctx.ops.Kstar_e, f)
        scaled.append(np.linalg.norm(phi) * t)
    ratio = max(scaled) / min(scaled)
    return _at_most(check_resolvent_scaling, ratio, 2.0, f"approach to -lambda_{j}")


def _calderon_residual(ops: OperatorSet) -> float:
    product = ops.S_e.weighted() @ ops.Kstar_e.entries
    return float(np.linalg.norm(product - product.T) / np.linalg.norm(product))


@check("npops", "calderon_order")
def check_calderon_order(ctx: ValidationContext) -> CheckResult:
    coarse = _calderon_residual(ctx.ops)
    fine = _calderon_residual(ctx.refined[1])
    return _at_least(check_calderon_order, coarse / fine, 1.5, f"residuals {coarse:.3e} -> {fine:.3e}")


def _jump_residual(ctx: ValidationContext, mesh: SurfaceMesh, ops: OperatorSet) -> float:
    panels = ctx.rng.choice(mesh.n_panels, size=min(JUMP_SAMPLES, mesh.n_panels), replace=False)
    density = mesh.normals[:, 2]
    points = mesh.centroids[panels] + 1e-6 * mesh.mesh_size * mesh.normals[panels]
    grad = single_layer_gradient("e", mesh, ctx.lattice, density, points, ctx.engine.assembly_options)
    normal = np.einsum("ij,ij->i", grad, mesh.normals[panels])
    expected = (0.5 * density + ops.Kstar_e.apply(density))[panels]
    return float(np.max(np.abs(normal - expected)) / np.max(np.abs(density)))


@check("npops", "jump_order")
def check_jump_order(ctx: ValidationContext) -> CheckResult:
    coarse = _jump_residual(ctx, ctx.mesh, ctx.ops)
    fine = _jump_residual(ctx, *ctx.refined)
    return _at_least(check_jump_order, coarse / fine, 1.5, f"residuals {coarse:.3e} -> {fine:.3e}")


# Scattering

def _tensors(ctx: ValidationContext) -> PolarizationTensors:
    return ctx.layer.pipeline.tensors(ctx.omega)


@check("scattering", "dipole_compact_equivalence")
def check_dipole_compact_equivalence(ctx: ValidationContext) -> CheckResult:
    tensors = _tensors(ctx)
    tau = ctx.lattice.tau
    delta = ctx.layer.delta
    worst = 0.0
    for _ in range(20):
        d, p = ctx.random_incidence()
        iw = make_incident_wave(d, p, ctx.omega)
        x = np.concatenate([ctx.rng.uniform(-2.0, 2.0, size=2), ctx.rng.uniform(1.0, 3.0, size=1)])
        dipole = scattered_field(x, delta, iw, dipoles_from_tensors(iw, tensors, tau))
        compact = compact_scattered_field(x, reflection_matrix(tensors, d), iw, delta, tau)
        worst = max(worst, np.linalg.norm(dipole - compact) / max(np.linalg.norm(compact), 1e-300))
    return _at_most(check_dipole_compact_equivalence, worst, 1e-8, "dipole form vs R p* form, 20 incidences")


@check("scattering", "reflection_orthogonality")
def check_reflection_orthogonality(ctx: ValidationContext) -> CheckResult:
    tensors = _tensors(ctx)
    iw = ctx.layer.pipeline.wave(ctx.omega)
    R = reflection_matrix(tensors, iw.d)
    value = abs(iw.dstar @ (R @ iw.pstar)) / max(np.linalg.norm(R) * np.linalg.norm(iw.pstar), 1e-300)
    return _at_most(check_reflection_orthogonality, value, 1e-12, "d* . R p*")


@check("scattering", "je_tangential_polarisation")
def check_je_tangential(ctx: ValidationContext) -> CheckResult:
    iw = make_incident_wave((0.0, 0.0, -1.0), (1.0, 0.0, 0.0), ctx.omega)
    lambda_eps = _tensors(ctx).lambda_eps
    j_e = dipole_je(iw, lambda_eps, ctx.ops, ctx.layer.spec_e, ctx.engine.guard)
    return _at_most(check_je_tangential, float(np.max(np.abs(j_e))), 0.0, "J_e with p3 = 0")


@check("scattering", "incident_identities")
def check_incident_identities(ctx: ValidationContext) -> CheckResult:
    eps_c, mu_c, _, _ = ctx.layer.pipeline.contrasts(ctx.omega)
    residual = incident_identity_check(ctx.layer.pipeline.wave(ctx.omega), eps_c, mu_c if mu_c != 1 else None)
    return _at_most(check_incident_identities, residual, 1e-12, "incident field and contrast identities")


@check("scattering", "impedance_relations")
def check_impedance_relations(ctx: ValidationContext) -> CheckResult:
    tensors = _tensors(ctx)
    tau = ctx.lattice.tau
    beta_e = impedance_beta_e(tensors.lambda_eps, ctx.ops, ctx.layer.spec_e, ctx.engine.guard)
    d_m = impedance_dm(tensors.lambda_mu, ctx.ops, ctx.layer.spec_m, ctx.engine.guard)
    beta_error = abs(beta_e + tensors.M_e[2, 2] / tau) / max(abs(beta_e), 1e-300)
    dm_error = np.max(np.abs(d_m - tensors.M_m[:2, :2] / tau)) / max(np.max(np.abs(d_m)), 1e-300)
    return _at_most(check_impedance_relations, max(beta_error, dm_error), 1e-12, "beta_e, D_m against M_e, M_m")


@check("scattering", "neumann_limits")
def check_neumann_limits(ctx: ValidationContext) -> CheckResult:
    lam = 1e6
    moment = ctx.mesh.moment_tensor()
    volume = float(np.trace(moment)) / 3.0
    expected = moment / lam
    worst = 0.0
    for kind in ("e", "m"):
        tensor = polarization_tensor(kind, lam, ctx.ops)
        worst = max(worst, np.max(np.abs(tensor - expected)) / (volume / lam))
    return _at_most(check_neumann_limits, worst, 1e-3, "M(1e6) against |B| I / 1e6")


@check("scattering", "resonance_enhancement")
def check_resonance_enhancement(ctx: ValidationContext) -> CheckResult:
    engine = ctx.engine
    lossless = engine.material.lossless()
    spec_e = ctx.layer.spec_e
    coeffs = np.abs(spec_e.eigenvectors.T @ (spec_e.weight @ ctx.mesh.normals[:, 2]))
    coeffs[spec_e.phi0_index] = 0.0
    target = spec_e.eigenvalues[int(np.argmax(coeffs))]
    pipeline = ScatteringPipeline(ctx.ops, spec_e, ctx.layer.spec_m, lossless, engine.incidence,
                                  ctx.layer.delta, engine.guard)

    distances, norms = [], []
    for t in np.logspace(-1, -3, 5):
        row = pipeline.evaluate(crossing_frequency(lossless, -target + t))
        distances.append(row.d_sigma_star)
        norms.append(row.R_norm)
    slope = float(np.polyfit(np.log(distances), np.log(norms), 1)[0])
    return _at_most(check_resonance_enhancement, abs(slope + 1.0), 0.1, f"log-log slope {slope:.4f}")


def _particle_radius(mesh: SurfaceMesh) -> float:
    centre = mesh.vertices.mean(axis=0)
    return float(np.max(np.linalg.norm(mesh.vertices - centre, axis=1)))


@check("scattering", "cell_field_interface")
def check_cell_field_interface(ctx: ValidationContext) -> CheckResult:
    solver: CellFieldSolver = ctx.layer.pipeline.cell_fields(ctx.omega, ctx.engine.assembly_options)
    mesh = ctx.mesh
    panels = ctx.rng.choice(mesh.n_panels, size=min(INTERFACE_SAMPLES, mesh.n_panels), replace=False)
    traces = solver.interface_traces(panels)
    nu = traces.normals
    k = solver.iw.k

    def residuals(inside, outside, contrast, datum, scale):
        jump = contrast * np.cross(nu, inside) - np.cross(nu, outside) - np.cross(nu, datum)
        normal = np.einsum("ij,ij->i", nu, inside - outside)
        return max(np.max(np.linalg.norm(jump, axis=1)), np.max(np.abs(normal))) / scale

    e_origin, h_origin = solver.e_origin, solver.h_origin
    residual = 0.0
    if np.linalg.norm(e_origin) > 0:
        residual = residuals(traces.ue_inside, traces.ue_outside, solver.mu_c, e_origin, np.linalg.norm(e_origin))
    if np.linalg.norm(h_origin) > 0:
        h_datum = 1j / k * h_origin
        residual = max(residual, residuals(traces.uh_inside, traces.uh_outside, solver.eps_c, h_datum,
                                           np.linalg.norm(h_datum)))
    threshold = mesh.mesh_size / _particle_radius(mesh)
    return _at_most(check_cell_field_interface, residual, threshold, "interface conditions of both cell problems")


@check("scattering", "cell_field_decay")
def check_cell_field_decay(ctx: ValidationContext) -> CheckResult:
    solver = ctx.layer.pipeline.cell_fields(ctx.omega, ctx.engine.assembly_options)
    mesh = ctx.mesh
    centre = mesh.vertices.mean(axis=0)
    low = max(1.0, float(np.max(mesh.vertices[:, 2])) + 0.5)
    near = solver.sample((centre[0], centre[1], low))
    far = solver.sample((centre[0], centre[1], low + 2.0))
    ratio = np.linalg.norm(far.grad_uh) / max(np.linalg.norm(near.grad_uh), 1e-300)
    return _at_most(check_cell_field_decay, float(ratio), 1e-4, f"|grad u^h| at x3 = {low + 2.0} over x3 = {low}")


def run_suite(engine, suite: str = "all", seed: int = 0) -> List[CheckResult]:
    """Run every check of a suite (or all suites) in registration order."""
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES + ('all',)}, got {suite!r}")
    ctx = ValidationContext(engine, seed)
    tracer = get_tracer()
    results = []
    for s in (SUITES if suite == "all" else (suite,)):
        for name, fn in _REGISTRY[s]:
            with tracer.span("validation_check", name=name, suite=s):
                result = fn(ctx)
            level = logging.INFO if result.passed else logging.WARNING
            logger.log(level, f"Check finished: {json.dumps(result.to_dict())}")
            results.append(result)
    return results

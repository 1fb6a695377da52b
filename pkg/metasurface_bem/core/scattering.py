"""
Scattering Pipeline

Polarisation tensors of the particle lattice, the dipoles J_e / J_m they induce, the leading-order
reflected wave, the reflection matrix R, the impedance coefficients beta_e and D_m, the zero-order
cell fields and the superposition of well-separated layers.

All boundary solves happen on the reference cell; the layer thickness delta only enters through
explicit prefactors.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve

from ..utils.error_handling import NearResonance, TooCloseToSurface, WrongKind
from .greens import check_rayleigh, eval_tensor_gr, make_bloch_context
from .npops import (
    AssemblyOptions,
    OperatorSet,
    SpectralData,
    resolve_np,
    single_layer_gradient,
    spectrum_distance,
)
from .physics import (
    IncidentWave,
    MaterialModel,
    contrast_parameter,
    drude_eps,
    drude_mu,
    effective_lambda_mu,
    incident_field,
    is_non_magnetic,
    resonance_distances,
)
from .tracing import get_tracer

logger = logging.getLogger(__name__)

GUARD_DEFAULT = 1e-8
PROBE_OFFSET = 1e-6
E3 = np.array([0.0, 0.0, 1.0])
TANGENTIAL = np.eye(3) - np.outer(E3, E3)

SWEEP_COLUMNS = (
    "omega", "eps_re", "eps_im", "mu_re", "mu_im",
    "lam_eps_re", "lam_eps_im", "lam_mu_re", "lam_mu_im",
    "d_sigma", "d_sigma_star", "beta_e_re", "beta_e_im",
    "Dm11_re", "Dm11_im", "Dm12_re", "Dm12_im", "Dm21_re", "Dm21_im", "Dm22_re", "Dm22_im",
    "R_norm", "flag",
)


@dataclass(frozen=True)
class PolarizationTensors:
    M_e: np.ndarray
    M_m: np.ndarray
    lambda_eps: complex
    lambda_mu: complex


@dataclass(frozen=True)
class DipolePair:
    J_e: np.ndarray
    J_m: np.ndarray


@dataclass(frozen=True)
class ReflectionData:
    """Reflection matrix, impedance coefficients and the amplitude of exp(i k*.x) in E^r"""
    R: np.ndarray
    beta_e: complex
    D_m: np.ndarray
    delta: float
    amplitude: np.ndarray


@dataclass(frozen=True)
class CellFieldSample:
    x: np.ndarray
    grad_ue: np.ndarray
    grad_uh: np.ndarray
    region: str  # inside | outside


@dataclass(frozen=True)
class InterfaceTraces:
    """One-sided limits of the cell-field gradients at panel centroids"""
    panels: np.ndarray
    normals: np.ndarray
    ue_inside: np.ndarray
    ue_outside: np.ndarray
    uh_inside: np.ndarray
    uh_outside: np.ndarray


def cross_matrix(v: np.ndarray) -> np.ndarray:
    """[v x] with [v x] u = v x u."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _first_moment(ops: OperatorSet, density: np.ndarray) -> np.ndarray:
    """sum_i w_i y_i (x) density_i; densities of zero mean make the origin irrelevant."""
    mesh = ops.mesh
    weighted = mesh.areas[:, None] * density.reshape(mesh.n_panels, -1)
    return mesh.centroids.T @ weighted


def _np_star(kind: str, ops: OperatorSet, spec: Optional[SpectralData]):
    kstar = ops.np_star(kind)
    if spec is not None and spec.kind != kind:
        raise WrongKind(f"Spectrum is {spec.kind}-kind but the tensor was requested for kind {kind}")
    return kstar


def polarization_tensor(kind: str, lam: complex, ops: OperatorSet, spec: Optional[SpectralData] = None,
                        guard: float = GUARD_DEFAULT) -> np.ndarray:
    """M(lam) with column j = int y (lam + K*)^{-1}[nu_j] dsigma."""
    kstar = _np_star(kind, ops, spec)
    phi = resolve_np(lam, kstar, ops.mesh.normals, spec, guard)
    return _first_moment(ops, phi)


def _dipole_density(kind: str, lam: complex, ops: OperatorSet, spec: Optional[SpectralData],
                    field_at_origin: np.ndarray, guard: float) -> np.ndarray:
    kstar = _np_star(kind, ops, spec)
    datum = ops.mesh.normals @ np.asarray(field_at_origin, dtype=complex)
    phi = resolve_np(lam, kstar, datum, spec, guard)
    return _first_moment(ops, phi)[:, 0]


def dipole_jm(iw: IncidentWave, lambda_mu: complex, ops: OperatorSet, spec_m: Optional[SpectralData] = None,
              guard: float = GUARD_DEFAULT, h_origin: Optional[np.ndarray] = None) -> np.ndarray:
    """J_m = -(1/(tau d3)) int y (lambda_mu + K*_m)^{-1}[nu . H^i(0)] dsigma.

    h_origin replaces H^i(0) as boundary datum when given.
    """
    if h_origin is None:
        _, h_origin = incident_field(iw, np.zeros(3))
    moment = _dipole_density("m", lambda_mu, ops, spec_m, h_origin, guard)
    return -moment / (ops.lattice.tau * iw.d[2])


def dipole_je(iw: IncidentWave, lambda_eps: complex, ops: OperatorSet, spec_e: Optional[SpectralData] = None,
              guard: float = GUARD_DEFAULT) -> np.ndarray:
    """J_e = (i/(tau k3)) int y (lambda_eps + K*_e)^{-1}[nu . E^i(0)] dsigma."""
    e_origin, _ = incident_field(iw, np.zeros(3))
    moment = _dipole_density("e", lambda_eps, ops, spec_e, e_origin, guard)
    return 1j * moment / (ops.lattice.tau * iw.k * iw.d[2])


def dipoles_from_tensors(iw: IncidentWave, tensors: PolarizationTensors, tau: float) -> DipolePair:
    """Same dipoles as dipole_je / dipole_jm, reusing assembled tensors."""
    e_origin, h_origin = incident_field(iw, np.zeros(3))
    j_e = 1j * (tensors.M_e @ e_origin) / (tau * iw.k * iw.d[2])
    j_m = -(tensors.M_m @ h_origin) / (tau * iw.d[2])
    return DipolePair(J_e=j_e, J_m=j_m)


def scattered_field(x: Sequence[float], delta: float, iw: IncidentWave, dipoles: DipolePair) -> np.ndarray:
    """Leading-order reflected wave delta k G_r(x) (i d* x J'_m + k (J_e)_3 e3).

    Valid above the layer; the evanescent remainder is not modelled.
    """
    ctx = make_bloch_context(iw.k, iw.d)
    j_m_par = TANGENTIAL @ dipoles.J_m
    source = 1j * np.cross(ctx.dstar, j_m_par) + iw.k * dipoles.J_e[2] * E3
    return delta * iw.k * (eval_tensor_gr(ctx, x) @ source)


def reflection_matrix(tensors: PolarizationTensors, d: Sequence[float]) -> np.ndarray:
    """R = (I - d* d*^T)([d* x] P M_m P [d* x] - e3 e3^T M_e e3 e3^T), P = I - e3 e3^T."""
    d = np.asarray(d, dtype=float).reshape(3)
    dstar = np.array([d[0], d[1], -d[2]])
    cross = cross_matrix(dstar)
    vertical = np.outer(E3, E3)
    magnetic = cross @ TANGENTIAL @ tensors.M_m @ TANGENTIAL @ cross
    electric = vertical @ tensors.M_e @ vertical
    return (np.eye(3) - np.outer(dstar, dstar)) @ (magnetic - electric)


def reflected_amplitude(R: np.ndarray, iw: IncidentWave, delta: float, tau: float) -> np.ndarray:
    """Coefficient (2 i delta k / (tau d3)) R p* of exp(i k*.x) in E^r."""
    return 2j * delta * iw.k / (tau * iw.d[2]) * (R @ iw.pstar)


def compact_scattered_field(x: Sequence[float], R: np.ndarray, iw: IncidentWave, delta: float,
                            tau: float) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(3)
    phase = np.exp(1j * iw.k * (iw.dstar @ x))
    return reflected_amplitude(R, iw, delta, tau) * phase


def impedance_beta_e(lambda_eps: complex, ops: OperatorSet, spec_e: Optional[SpectralData] = None,
                     guard: float = GUARD_DEFAULT) -> complex:
    """beta_e = -(1/tau) int y3 (lambda_eps + K*_e)^{-1}[nu_3] dsigma."""
    kstar = _np_star("e", ops, spec_e)
    mesh = ops.mesh
    phi = resolve_np(lambda_eps, kstar, mesh.normals[:, 2], spec_e, guard)
    return complex(-np.sum(mesh.areas * mesh.centroids[:, 2] * phi) / ops.lattice.tau)


def impedance_dm(lambda_mu: complex, ops: OperatorSet, spec_m: Optional[SpectralData] = None,
                 guard: float = GUARD_DEFAULT) -> np.ndarray:
    """D_m = (1/tau) int y' (lambda_mu + K*_m)^{-1}[nu'] dsigma, a 2x2 matrix."""
    kstar = _np_star("m", ops, spec_m)
    phi = resolve_np(lambda_mu, kstar, ops.mesh.normals[:, :2], spec_m, guard)
    return _first_moment(ops, phi)[:2, :] / ops.lattice.tau


# Zero-order cell fields

def _cell_density(ops: OperatorSet, kind: str, c: complex, datum: np.ndarray,
                  spec: Optional[SpectralData], guard: float) -> np.ndarray:
    """psi = (1/(1 - c)) (lambda_c - K*)^{-1} datum, solved as ((1 + c)/2 - (1 - c) K*) psi = datum.

    The scaled form stays finite for c = 1, where psi = datum.
    """
    c = complex(c)
    kstar = ops.np_star(kind)
    if spec is not None and not is_non_magnetic(c):
        lam = contrast_parameter(c)
        distance = spectrum_distance(lam, spec)
        if distance < guard:
            raise NearResonance(
                f"lambda = {lam} lies within {distance:.3e} of sigma(K*_{kind})",
                distance=distance, kind=kind, lam=lam,
            )
    matrix = 0.5 * (1.0 + c) * np.eye(kstar.n) - (1.0 - c) * kstar.entries
    return solve(matrix, np.asarray(datum, dtype=complex))


class CellFieldSolver:
    """Densities of the two zero-order harmonic cell problems, reused across evaluation points"""

    def __init__(self, ops: OperatorSet, iw: IncidentWave, eps_c: complex, mu_c: complex,
                 spec_e: Optional[SpectralData] = None, spec_m: Optional[SpectralData] = None,
                 guard: float = GUARD_DEFAULT, options: Optional[AssemblyOptions] = None):
        self.ops = ops
        self.iw = iw
        self.eps_c = complex(eps_c)
        self.mu_c = complex(mu_c)
        self.options = options
        self.e_origin, self.h_origin = incident_field(iw, np.zeros(3))
        normals = ops.mesh.normals
        self.psi_e = _cell_density(ops, "e", self.mu_c, normals @ self.e_origin, spec_e, guard)
        self.psi_m = _cell_density(ops, "m", self.eps_c, normals @ self.h_origin, spec_m, guard)

    def gradients(self, points: np.ndarray, inside: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(grad u^e, grad u^h) at points, shape (M, 3) each."""
        mesh, lat = self.ops.mesh, self.ops.lattice
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.asarray(inside, dtype=bool).reshape(-1, 1)
        grad_se = single_layer_gradient("e", mesh, lat, self.psi_e, points, self.options)
        grad_sm = single_layer_gradient("m", mesh, lat, self.psi_m, points, self.options)
        k = self.iw.k

        ue = np.where(inside, (self.e_origin[None, :] + grad_se) / self.mu_c, grad_se)
        uh = np.where(inside, 1j / (k * self.eps_c) * (self.h_origin[None, :] + grad_sm), 1j / k * grad_sm)
        return ue, uh

    def sample(self, x: Sequence[float], min_distance: Optional[float] = None) -> CellFieldSample:
        mesh = self.ops.mesh
        x = np.asarray(x, dtype=float).reshape(3)
        limit = mesh.mesh_size if min_distance is None else min_distance
        distance = float(mesh.centroid_distance(x)[0])
        if distance <= limit:
            raise TooCloseToSurface(
                f"Point {x.tolist()} is {distance:.3e} from the surface (limit {limit:.3e})",
                distance=distance, limit=limit,
            )
        inside = bool(mesh.winding_number(x)[0] > 0.5)
        ue, uh = self.gradients(x[None, :], np.array([inside]))
        return CellFieldSample(x=x, grad_ue=ue[0], grad_uh=uh[0], region="inside" if inside else "outside")

    def interface_traces(self, panels: Sequence[int]) -> InterfaceTraces:
        """One-sided limits at panel centroids, sampled at a normal offset of PROBE_OFFSET * h.

        Near panels are integrated analytically, so the offset can be far below the panel size.
        """
        mesh = self.ops.mesh
        panels = np.asarray(panels, dtype=int)
        c = mesh.centroids[panels]
        nu = mesh.normals[panels]
        t = PROBE_OFFSET * mesh.mesh_size
        traces = {}
        for side, sign in (("inside", -1.0), ("outside", 1.0)):
            flags = np.full(len(panels), side == "inside")
            ue, uh = self.gradients(c + sign * t * nu, flags)
            traces[f"ue_{side}"] = ue
            traces[f"uh_{side}"] = uh
        return InterfaceTraces(panels=panels, normals=nu, **traces)


def cell_field_gradients(x: Sequence[float], iw: IncidentWave, eps_c: complex, mu_c: complex,
                         ops: OperatorSet, spec_e: Optional[SpectralData] = None,
                         spec_m: Optional[SpectralData] = None, guard: float = GUARD_DEFAULT,
                         options: Optional[AssemblyOptions] = None,
                         min_distance: Optional[float] = None) -> CellFieldSample:
    """grad u^e and grad u^h of the zero-order cell problems at x.

    Points closer to the surface than min_distance (default: mesh size h) are refused.
    """
    solver = CellFieldSolver(ops, iw, eps_c, mu_c, spec_e, spec_m, guard, options)
    return solver.sample(x, min_distance)


def multilayer_superpose(fields: Iterable[np.ndarray]) -> np.ndarray:
    """Sum of the reflected waves of well-separated layers evaluated at one point."""
    total = np.zeros(3, dtype=complex)
    for contribution in fields:
        total = total + np.asarray(contribution, dtype=complex).reshape(3)
    return total


# Frequency pipeline

@dataclass(frozen=True)
class SweepRow:
    """Everything the pipeline reports at one frequency"""
    omega: float
    eps: complex
    mu: complex
    lambda_eps: complex
    lambda_mu: complex
    d_sigma: float
    d_sigma_star: float
    beta_e: complex
    D_m: np.ndarray
    R_norm: float
    flag: str = "ok"
    tensors: Optional[PolarizationTensors] = field(default=None, repr=False)
    dipoles: Optional[DipolePair] = field(default=None, repr=False)
    reflection: Optional[ReflectionData] = field(default=None, repr=False)

    @property
    def resonance_product(self) -> float:
        return self.d_sigma * self.d_sigma_star

    def to_record(self) -> Dict[str, object]:
        """Flat record keyed by SWEEP_COLUMNS; complex values split into _re/_im."""
        record: Dict[str, object] = {"omega": self.omega}
        for name, value in (("eps", self.eps), ("mu", self.mu),
                            ("lam_eps", self.lambda_eps), ("lam_mu", self.lambda_mu)):
            record[f"{name}_re"] = complex(value).real
            record[f"{name}_im"] = complex(value).imag
        record["d_sigma"] = self.d_sigma
        record["d_sigma_star"] = self.d_sigma_star
        record["beta_e_re"] = complex(self.beta_e).real
        record["beta_e_im"] = complex(self.beta_e).imag
        for i in range(2):
            for j in range(2):
                record[f"Dm{i + 1}{j + 1}_re"] = complex(self.D_m[i, j]).real
                record[f"Dm{i + 1}{j + 1}_im"] = complex(self.D_m[i, j]).imag
        record["R_norm"] = self.R_norm
        record["flag"] = self.flag
        return record


class ScatteringPipeline:
    """Frequency-by-frequency evaluation of tensors, dipoles, R and impedances for one layer"""

    def __init__(self, ops: OperatorSet, spec_e: SpectralData, spec_m: SpectralData,
                 material: MaterialModel, incidence: IncidentWave, delta: float,
                 guard: float = GUARD_DEFAULT):
        if not delta > 0:
            raise ValueError(f"delta must be positive, got {delta}")
        if spec_e.kind != "e" or spec_m.kind != "m":
            raise WrongKind("Pipeline needs the e-kind and m-kind spectra in that order")
        self.ops = ops
        self.spec_e = spec_e
        self.spec_m = spec_m
        self.material = material
        self.incidence = incidence
        self.delta = float(delta)
        self.guard = guard
        self.logger = logging.getLogger(__name__)

    @property
    def tau(self) -> float:
        return self.ops.lattice.tau

    def wave(self, omega: float) -> IncidentWave:
        return self.incidence.with_frequency(omega)

    def contrasts(self, omega: float) -> Tuple[complex, complex, complex, complex]:
        """(eps_c, mu_c, lambda_eps, lambda_mu) with lambda_mu clamped when non-magnetic."""
        eps_c = drude_eps(omega, self.material)
        mu_c = drude_mu(omega, self.material)
        return eps_c, mu_c, contrast_parameter(eps_c), effective_lambda_mu(mu_c)

    def tensors(self, omega: float) -> PolarizationTensors:
        _, _, lambda_eps, lambda_mu = self.contrasts(omega)
        return PolarizationTensors(
            M_e=polarization_tensor("e", lambda_eps, self.ops, self.spec_e, self.guard),
            M_m=polarization_tensor("m", lambda_mu, self.ops, self.spec_m, self.guard),
            lambda_eps=lambda_eps,
            lambda_mu=lambda_mu,
        )

    def _check_regime(self, omega: float):
        ctx = make_bloch_context(omega, self.incidence.d)
        check_rayleigh(self.ops.lattice, ctx.scaled(self.delta))

    def evaluate(self, omega: float) -> SweepRow:
        """One sweep row; a NearResonance is recorded as a flagged row of NaN outputs."""
        self._check_regime(omega)
        eps_c, mu_c, lambda_eps, lambda_mu = self.contrasts(omega)
        d_sigma, d_sigma_star = resonance_distances(lambda_eps, lambda_mu, self.spec_e, self.spec_m)

        with get_tracer().span("sweep_row", omega=omega):
            try:
                tensors = self.tensors(omega)
            except NearResonance as e:
                self.logger.warning(f"Near resonance row: {json.dumps({'omega': omega, 'distance': e.distance})}")
                nan = complex(math.nan, math.nan)
                return SweepRow(
                    omega=omega, eps=eps_c, mu=mu_c, lambda_eps=lambda_eps, lambda_mu=lambda_mu,
                    d_sigma=d_sigma, d_sigma_star=d_sigma_star, beta_e=nan,
                    D_m=np.full((2, 2), nan), R_norm=math.nan, flag="near_resonance",
                )

            iw = self.wave(omega)
            dipoles = dipoles_from_tensors(iw, tensors, self.tau)
            R = reflection_matrix(tensors, iw.d)
            beta_e = complex(-tensors.M_e[2, 2] / self.tau)
            D_m = tensors.M_m[:2, :2] / self.tau
            reflection = ReflectionData(
                R=R, beta_e=beta_e, D_m=D_m, delta=self.delta,
                amplitude=reflected_amplitude(R, iw, self.delta, self.tau),
            )

        row = SweepRow(
            omega=omega, eps=eps_c, mu=mu_c, lambda_eps=lambda_eps, lambda_mu=lambda_mu,
            d_sigma=d_sigma, d_sigma_star=d_sigma_star, beta_e=beta_e, D_m=D_m,
            R_norm=float(np.linalg.norm(R, 2)), flag="ok",
            tensors=tensors, dipoles=dipoles, reflection=reflection,
        )
        self.logger.debug(f"Sweep row: {json.dumps({'omega': omega, 'R_norm': row.R_norm, 'd_sigma_star': d_sigma_star})}")
        return row

    def field(self, x: Sequence[float], omega: float) -> np.ndarray:
        """Leading-order reflected wave of this layer at x."""
        self._check_regime(omega)
        tensors = self.tensors(omega)
        iw = self.wave(omega)
        return scattered_field(x, self.delta, iw, dipoles_from_tensors(iw, tensors, self.tau))

    def cell_fields(self, omega: float, options: Optional[AssemblyOptions] = None) -> CellFieldSolver:
        eps_c, mu_c, _, _ = self.contrasts(omega)
        return CellFieldSolver(self.ops, self.wave(omega), eps_c, mu_c, self.spec_e, self.spec_m,
                               self.guard, options)


def sweep_frequencies(omega_min: float, omega_max: float, count: int) -> List[float]:
    """count evenly spaced frequencies; a single frequency sits at omega_min."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return [float(omega_min)]
    return [float(w) for w in np.linspace(omega_min, omega_max, count)]

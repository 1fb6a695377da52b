"""
Metasurface Engine

Orchestrates one scenario: builds the lattice, the particle meshes of every layer, the boundary
operators and their spectra, and runs Green's function evaluations, spectra, tensors, sweeps, reflected
fields and the validation suite on top of them.
"""

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..utils.config import ConfigManager, GeometryConfig, ScenarioConfig
from ..utils.error_handling import WrongKind, get_error_handler
from .greens import (
    EwaldParams,
    eval_g_quasi_ewald,
    eval_g_quasi_spectral,
    eval_g_static,
    make_bloch_context,
)
from .lattice import Lattice2D, make_lattice
from .mesh import SurfaceMesh, export_mesh, mesh_from_config
from .npops import (
    AssemblyOptions,
    OperatorSet,
    SpectralData,
    apply_incident_correction,
    assemble_operator_set,
    dump_operator,
    symmetrized_eigensystem,
)
from .physics import IncidentWave, MaterialModel, make_incident_wave
from .scattering import (
    ScatteringPipeline,
    SweepRow,
    multilayer_superpose,
    sweep_frequencies,
)
from .tracing import get_tracer

GREEN_MODES = ("spectral", "ewald", "static", "compare")
SPECTRUM_COLUMNS = ("index", "eigenvalue")


@dataclass
class Layer:
    """One particle layer of the stack with its assembled operators"""
    index: int
    geometry: GeometryConfig
    delta: float
    mesh: SurfaceMesh = field(repr=False)
    operators: OperatorSet = field(repr=False)
    spec_e: SpectralData = field(repr=False)
    spec_m: SpectralData = field(repr=False)
    pipeline: ScatteringPipeline = field(repr=False)


def _complex_record(value: complex) -> List[float]:
    value = complex(value)
    return [value.real, value.imag]


class MetasurfaceEngine:
    """Scenario orchestration shared by the command line and the validation suite"""

    def __init__(self, config_file: Optional[str] = None, config: Optional[ScenarioConfig] = None,
                 configure_logging: bool = True):
        if config is None:
            self.config_manager: Optional[ConfigManager] = ConfigManager(config_file, configure_logging)
            self.config = self.config_manager.require_valid()
        else:
            self.config_manager = None
            self.config = config

        self.tracer = get_tracer()
        self.tracer.enabled = self.config.logging.enable_tracing
        self.error_handler = get_error_handler()
        self.logger = logging.getLogger(__name__)
        self._lock = threading.Lock()
        self._layers: Optional[List[Layer]] = None

    @cached_property
    def lattice(self) -> Lattice2D:
        return make_lattice(self.config.lattice.a1, self.config.lattice.a2)

    @cached_property
    def ewald(self) -> EwaldParams:
        numerics = self.config.numerics
        return EwaldParams(eta=numerics.ewald_eta, n_spectral=numerics.n_spectral,
                           n_spatial=numerics.n_spatial, tol=numerics.ewald_tol)

    @cached_property
    def assembly_options(self) -> AssemblyOptions:
        return AssemblyOptions.from_numerics(self.config.numerics)

    @cached_property
    def material(self) -> MaterialModel:
        return MaterialModel.from_config(self.config.material)

    @cached_property
    def incidence(self) -> IncidentWave:
        return make_incident_wave(self.config.incidence.d, self.config.incidence.p)

    @property
    def guard(self) -> float:
        return self.config.numerics.guard

    def geometries(self) -> List[GeometryConfig]:
        """The main geometry followed by the configured extra layers."""
        return [self.config.geometry] + list(self.config.layers)

    def mesh(self, index: int = 0) -> SurfaceMesh:
        if self._layers is not None:
            return self._layers[index].mesh
        return mesh_from_config(self.geometries()[index], self.lattice)

    def build_layer(self, index: int, geometry: GeometryConfig, delta: float) -> Layer:
        with self.tracer.span("build_layer", layer=index):
            mesh = mesh_from_config(geometry, self.lattice)
            ops = assemble_operator_set(mesh, self.lattice, self.assembly_options)
            spec_e = symmetrized_eigensystem(ops.S_e, ops.Kstar_e)
            spec_m = symmetrized_eigensystem(ops.S_m, ops.Kstar_m)
            pipeline = ScatteringPipeline(ops, spec_e, spec_m, self.material, self.incidence, delta, self.guard)
        self.logger.info(f"Layer ready: {json.dumps({'layer': index, 'delta': delta, **mesh.summary()})}")
        return Layer(index, geometry, delta, mesh, ops, spec_e, spec_m, pipeline)

    @property
    def layers(self) -> List[Layer]:
        with self._lock:
            if self._layers is None:
                layers = []
                for index, geometry in enumerate(self.geometries()):
                    delta = getattr(geometry, "delta", None) or self.config.delta
                    layers.append(self.build_layer(index, geometry, delta))
                self._layers = layers
            return self._layers

    @property
    def main_layer(self) -> Layer:
        return self.layers[0]

    # Commands

    def green(self, point: Sequence[float], k: float, mode: str = "spectral") -> Dict[str, Any]:
        """Quasi-periodic kernel at a point; 'compare' reports spectral, Ewald and their difference."""
        if mode not in GREEN_MODES:
            raise ValueError(f"mode must be one of {GREEN_MODES}, got {mode!r}")
        x = np.asarray(point, dtype=float).reshape(3)
        record: Dict[str, Any] = {"point": x.tolist(), "k": k, "mode": mode}
        h_min = self.config.numerics.h_min

        with self.tracer.span("green", mode=mode):
            if mode == "static":
                value = eval_g_static(self.lattice, x, h_min, self.ewald)
            else:
                ctx = make_bloch_context(k, self.config.incidence.d)
                if mode == "spectral":
                    value = eval_g_quasi_spectral(self.lattice, ctx, x, h_min)
                elif mode == "ewald":
                    value = eval_g_quasi_ewald(self.lattice, ctx, self.ewald, x)
                else:
                    spectral = eval_g_quasi_spectral(self.lattice, ctx, x, h_min)
                    ewald = eval_g_quasi_ewald(self.lattice, ctx, self.ewald, x)
                    record["spectral"] = _complex_record(spectral)
                    record["ewald"] = _complex_record(ewald)
                    record["abs_diff"] = abs(spectral - ewald)
                    value = ewald

        record["value_re"] = complex(value).real
        record["value_im"] = complex(value).imag
        self.logger.info(f"Green's function evaluated: {json.dumps(record)}")
        return record

    def spectrum(self, kind: str = "e", n_eigs: Optional[int] = None, incident_correction: bool = False,
                 dump: Optional[str] = None) -> List[Dict[str, Any]]:
        """Descending eigenvalues of K*_kind for the main layer, truncated to n_eigs."""
        if kind not in ("e", "m"):
            raise WrongKind(f"kind must be 'e' or 'm', got {kind!r}")
        if incident_correction and kind != "m":
            raise WrongKind("The incident correction applies to the m-kind operator only")

        mesh = self.mesh(0)
        ops = assemble_operator_set(mesh, self.lattice, self.assembly_options)
        kstar = ops.np_star(kind)
        if incident_correction:
            kstar = apply_incident_correction(kstar, self.incidence.d)
        if dump:
            dump_operator(kstar, dump)
            self.logger.info(f"Operator dumped: {json.dumps({'path': dump, 'flavor': kstar.flavor})}")

        spec = symmetrized_eigensystem(ops.single_layer(kind), kstar)
        values = spec.eigenvalues if n_eigs is None else spec.eigenvalues[:max(n_eigs, 0)]
        return [{"index": i, "eigenvalue": float(v)} for i, v in enumerate(values)]

    def tensors(self, omega: float) -> Dict[str, Any]:
        """Tensors, dipoles, R and impedances of the main layer at one frequency."""
        pipeline = self.main_layer.pipeline
        row = pipeline.evaluate(omega)
        if row.tensors is None:
            # re-raises the NearResonance the sweep would have flagged
            pipeline.tensors(omega)
        return {
            "omega": omega,
            "eps": row.eps,
            "mu": row.mu,
            "lambda_eps": row.lambda_eps,
            "lambda_mu": row.lambda_mu,
            "M_e": row.tensors.M_e,
            "M_m": row.tensors.M_m,
            "J_e": row.dipoles.J_e,
            "J_m": row.dipoles.J_m,
            "R": row.reflection.R,
            "R_norm": row.R_norm,
            "beta_e": row.beta_e,
            "D_m": row.D_m,
            "d_sigma": row.d_sigma,
            "d_sigma_star": row.d_sigma_star,
            "d_sigma_product": row.resonance_product,
        }

    def sweep_omegas(self) -> List[float]:
        sweep = self.config.sweep
        return sweep_frequencies(sweep.omega_min, sweep.omega_max, sweep.count)

    def sweep(self, omegas: Optional[Sequence[float]] = None, threads: Optional[int] = None) -> List[SweepRow]:
        """Rows in frequency order; rows are computed concurrently when threads > 1."""
        omegas = list(omegas) if omegas is not None else self.sweep_omegas()
        threads = threads or self.config.threads
        pipeline = self.main_layer.pipeline

        with self.tracer.span("sweep", count=len(omegas), threads=threads):
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as executor:
                    rows = list(executor.map(pipeline.evaluate, omegas))
            else:
                rows = [pipeline.evaluate(omega) for omega in omegas]

        flagged = sum(row.flag != "ok" for row in rows)
        self.logger.info(f"Sweep finished: {json.dumps({'rows': len(rows), 'near_resonance': flagged})}")
        return rows

    def field(self, x: Sequence[float], omega: float) -> Dict[str, Any]:
        """Reflected wave of every layer at x and their superposition."""
        contributions = [layer.pipeline.field(x, omega) for layer in self.layers]
        total = multilayer_superpose(contributions)
        return {
            "x": list(map(float, x)),
            "omega": omega,
            "layers": contributions,
            "E_r": total,
        }

    def validate(self, suite: str = "all", seed: Optional[int] = None):
        from .validation import run_suite
        return run_suite(self, suite, self.config.seed if seed is None else seed)

    def export_mesh(self, path: str, index: int = 0) -> Path:
        return export_mesh(self.mesh(index), path)

    def performance_report(self) -> Dict[str, Any]:
        return self.tracer.get_performance_report()

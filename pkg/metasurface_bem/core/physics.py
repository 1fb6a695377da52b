"""
Materials and Incident Field

Drude (or tabulated) particle permittivity and permeability, the contrast parameters
lambda = (1 + c) / (2 (1 - c)), the incident plane wave reflected by the conducting plane,
and the collective-resonance distances of a frequency sweep.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from ..utils.error_handling import (
    DegenerateContrast,
    InvalidIncidence,
    MaterialOutOfRange,
    ParseError,
)

logger = logging.getLogger(__name__)

NON_MAGNETIC_TOL = 1e-9
LAMBDA_MU_CLAMP = 1e9
TABLE_COLUMNS = ("omega", "eps_re", "eps_im", "mu_re", "mu_im")


@dataclass(frozen=True)
class MaterialTable:
    """Measured response, linearly interpolated in omega"""
    omega: np.ndarray
    eps: np.ndarray
    mu: np.ndarray

    def interpolate(self, omega: float) -> Tuple[complex, complex]:
        if not self.omega[0] <= omega <= self.omega[-1]:
            raise MaterialOutOfRange(
                f"omega = {omega} outside the tabulated range [{self.omega[0]}, {self.omega[-1]}]",
                omega=omega,
            )
        eps = np.interp(omega, self.omega, self.eps.real) + 1j * np.interp(omega, self.omega, self.eps.imag)
        mu = np.interp(omega, self.omega, self.mu.real) + 1j * np.interp(omega, self.omega, self.mu.imag)
        return complex(eps), complex(mu)


def load_material_table(path: Union[str, Path]) -> MaterialTable:
    """Read a CSV with header omega,eps_re,eps_im,mu_re,mu_im."""
    path = Path(path)
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or tuple(name.strip() for name in reader.fieldnames) != TABLE_COLUMNS:
                raise ParseError(f"{path}: header must be {','.join(TABLE_COLUMNS)}")
            rows = [[float(row[col]) for col in TABLE_COLUMNS] for row in reader]
    except OSError as e:
        raise ParseError(f"Cannot read material table {path}: {e}")
    except (ValueError, TypeError) as e:
        raise ParseError(f"{path}: non-numeric entry ({e})")

    if len(rows) < 2:
        raise ParseError(f"{path}: a material table needs at least two rows")
    data = np.array(rows)
    if np.any(np.diff(data[:, 0]) <= 0) or data[0, 0] <= 0:
        raise ParseError(f"{path}: omega must be positive and strictly increasing")
    if np.any(data[:, 2] < 0) or np.any(data[:, 4] < 0):
        raise MaterialOutOfRange(f"{path}: tabulated Im eps and Im mu must be non-negative")
    return MaterialTable(omega=data[:, 0], eps=data[:, 1] + 1j * data[:, 2], mu=data[:, 3] + 1j * data[:, 4])


@dataclass(frozen=True)
class MaterialModel:
    """Particle material: Drude electric and (optional) magnetic response"""
    eps_inf: float = 1.0
    omega_p_e: float = 1.0
    gamma_e: float = 0.0
    mu_inf: float = 1.0
    omega_p_m: float = 0.0
    gamma_m: float = 0.0
    mode: str = "drude"
    table: Optional[MaterialTable] = None

    def __post_init__(self):
        if self.mode not in ("drude", "tabulated"):
            raise MaterialOutOfRange(f"Unknown material mode {self.mode!r}")
        if self.mode == "tabulated" and self.table is None:
            raise MaterialOutOfRange("Tabulated material needs a table")
        if self.eps_inf < 1 or self.omega_p_e <= 0 or self.omega_p_m < 0:
            raise MaterialOutOfRange("Need eps_inf >= 1, omega_p_e > 0 and omega_p_m >= 0")
        if self.gamma_e < 0 or self.gamma_m < 0:
            raise MaterialOutOfRange("Damping rates must be non-negative")

    @classmethod
    def from_config(cls, cfg) -> "MaterialModel":
        table = load_material_table(cfg.table_path) if cfg.mode == "tabulated" else None
        return cls(
            eps_inf=cfg.eps_inf,
            omega_p_e=cfg.omega_p_e,
            gamma_e=cfg.gamma_e,
            mu_inf=cfg.mu_inf,
            omega_p_m=cfg.omega_p_m,
            gamma_m=cfg.gamma_m,
            mode=cfg.mode,
            table=table,
        )

    def lossless(self) -> "MaterialModel":
        return MaterialModel(self.eps_inf, self.omega_p_e, 0.0, self.mu_inf, self.omega_p_m, 0.0)


def _drude(omega: float, background: float, plasma: float, gamma: float) -> complex:
    return complex(background - plasma ** 2 / (omega * (omega + 1j * gamma)))


def _check_omega(omega: float):
    if not omega > 0:
        raise MaterialOutOfRange(f"Frequency must be positive, got {omega}", omega=omega)


def drude_eps(omega: float, mat: MaterialModel) -> complex:
    """eps_c = eps_inf - omega_p^2 / (omega (omega + i gamma))."""
    _check_omega(omega)
    if mat.mode == "tabulated":
        return mat.table.interpolate(omega)[0]
    return _drude(omega, mat.eps_inf, mat.omega_p_e, mat.gamma_e)


def drude_mu(omega: float, mat: MaterialModel) -> complex:
    """Magnetic twin of drude_eps; mu_inf when omega_p_m = 0."""
    _check_omega(omega)
    if mat.mode == "tabulated":
        return mat.table.interpolate(omega)[1]
    if mat.omega_p_m == 0:
        return complex(mat.mu_inf)
    return _drude(omega, mat.mu_inf, mat.omega_p_m, mat.gamma_m)


def is_non_magnetic(mu_c: complex) -> bool:
    return abs(1.0 - complex(mu_c)) < NON_MAGNETIC_TOL


def contrast_parameter(c: complex) -> complex:
    c = complex(c)
    if c == 1:
        raise DegenerateContrast("Contrast 1 means no particle: lambda is undefined", contrast=c)
    return (1.0 + c) / (2.0 * (1.0 - c))


def contrast(eps_c: complex, mu_c: complex) -> Tuple[complex, complex]:
    """(lambda_eps, lambda_mu)."""
    return contrast_parameter(eps_c), contrast_parameter(mu_c)


def effective_lambda_mu(mu_c: complex) -> complex:
    """lambda_mu, clamped at LAMBDA_MU_CLAMP for (numerically) non-magnetic particles."""
    if is_non_magnetic(mu_c):
        return complex(LAMBDA_MU_CLAMP)
    return contrast_parameter(mu_c)


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave p e^{ik d.x} together with its mirror image across x3 = 0"""
    d: np.ndarray
    p: np.ndarray
    k: float = 1.0

    @property
    def dstar(self) -> np.ndarray:
        return np.array([self.d[0], self.d[1], -self.d[2]])

    @property
    def pstar(self) -> np.ndarray:
        return np.array([self.p[0], self.p[1], -self.p[2]])

    def with_frequency(self, k: float) -> "IncidentWave":
        return make_incident_wave(self.d, self.p, k)


def make_incident_wave(d: Sequence[float], p: Sequence[float], k: float = 1.0) -> IncidentWave:
    d = np.asarray(d, dtype=float).reshape(3)
    p = np.asarray(p, dtype=complex).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise InvalidIncidence(f"d must be a unit vector, |d| = {np.linalg.norm(d)}", d=d)
    if not d[2] < 0:
        raise InvalidIncidence("d must point towards the plane (d3 < 0)", d=d)
    if abs(p @ d) > 1e-12 * max(np.linalg.norm(p), 1e-300):
        raise InvalidIncidence(f"Polarisation must be transverse, p.d = {complex(p @ d)}", p=p, d=d)
    if not k > 0:
        raise InvalidIncidence(f"Wavenumber must be positive, got {k}", k=k)
    return IncidentWave(d=d, p=p, k=float(k))


def incident_field(w: IncidentWave, x: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(E^i, H^i) at x; the mirror terms make e3 x E vanish on x3 = 0."""
    x = np.asarray(x, dtype=float).reshape(3)
    direct = np.exp(1j * w.k * (w.d @ x))
    mirror = np.exp(1j * w.k * (w.dstar @ x))
    e_field = w.p * direct - w.pstar * mirror
    h_field = np.cross(w.d, w.p) * direct - np.cross(w.dstar, w.pstar) * mirror
    return e_field, h_field


def incident_identity_check(w: IncidentWave, eps_c: Optional[complex] = None,
                            mu_c: Optional[complex] = None) -> float:
    """Max-norm residual of the algebraic identities tying E^i(0), H^i(0) and the contrasts.

    -H^i(0) + d' x E^i(0) = 2 d3 (p2, -p1, 0), E^i(0) = -2 e3 e3^T p*,
    H^i(0) = -2 (I - e3 e3^T)(d* x p*), and -lambda_mu - lambda_eps + 1/(1-eps) + 1/(1-mu) = 1.
    """
    e0, h0 = incident_field(w, np.zeros(3))
    d_par = np.array([w.d[0], w.d[1], 0.0])
    expected = 2.0 * w.d[2] * np.array([w.p[1], -w.p[0], 0.0])
    residuals = [np.max(np.abs(-h0 + np.cross(d_par, e0) - expected))]

    e3 = np.array([0.0, 0.0, 1.0])
    residuals.append(np.max(np.abs(e0 + 2.0 * e3 * w.pstar[2])))
    tangential = np.eye(3) - np.outer(e3, e3)
    residuals.append(np.max(np.abs(h0 + 2.0 * tangential @ np.cross(w.dstar, w.pstar))))

    halves = []
    for c in (eps_c, mu_c):
        if c is None or complex(c) == 1:
            continue
        halves.append(1.0 / (1.0 - complex(c)) - contrast_parameter(c))
    if len(halves) == 2:
        residuals.append(abs(sum(halves) - 1.0))
    else:
        residuals.extend(abs(h - 0.5) for h in halves)
    return float(max(residuals))


@dataclass(frozen=True)
class ContrastPair:
    lambda_eps: complex
    lambda_mu: complex
    d_sigma: float
    d_sigma_star: float


def _distance(lam: complex, eigenvalues: np.ndarray) -> float:
    if len(eigenvalues) == 0:
        return float("inf")
    return float(np.min(np.abs(lam - eigenvalues)))


def resonance_distances(lambda_eps: complex, lambda_mu: complex, spec_e, spec_m) -> Tuple[float, float]:
    """(d_sigma, d_sigma*) of the contrast pair against the e/m NP spectra."""
    sigma_e = spec_e.eigenvalues
    sigma_m = spec_m.eigenvalues
    d_sigma = min(_distance(lambda_mu, sigma_e), _distance(lambda_eps, sigma_m))
    d_sigma_star = min(_distance(lambda_mu, -sigma_m), _distance(lambda_eps, -sigma_e))
    return d_sigma, d_sigma_star


def resonance_scan(omegas: Sequence[float], mat: MaterialModel, spec_e, spec_m) -> List[ContrastPair]:
    """Contrast parameters and resonance distances along a frequency list."""
    if len(spec_e.eigenvalues) == 0 or len(spec_m.eigenvalues) == 0:
        raise ValueError("resonance_scan needs non-empty spectra")
    pairs = []
    for omega in omegas:
        lambda_eps = contrast_parameter(drude_eps(omega, mat))
        lambda_mu = effective_lambda_mu(drude_mu(omega, mat))
        d_sigma, d_sigma_star = resonance_distances(lambda_eps, lambda_mu, spec_e, spec_m)
        pairs.append(ContrastPair(lambda_eps, lambda_mu, d_sigma, d_sigma_star))
    return pairs


def crossing_frequency(mat: MaterialModel, target_lambda: float = -1.0 / 6.0,
                       bracket: Optional[Tuple[float, float]] = None) -> float:
    """Frequency where the lossless lambda_eps(omega) equals target_lambda."""
    if mat.mode != "drude":
        raise MaterialOutOfRange("Crossing frequencies are defined for the Drude model only")
    lossless = mat.lossless()
    if bracket is None:
        bracket = (1e-6 * mat.omega_p_e, mat.omega_p_e / math.sqrt(mat.eps_inf + 1.0) * (1.0 - 1e-12))

    def offset(omega: float) -> float:
        return contrast_parameter(drude_eps(omega, lossless)).real - target_lambda

    lo, hi = bracket
    if offset(lo) * offset(hi) > 0:
        raise MaterialOutOfRange(
            f"lambda_eps does not cross {target_lambda} in [{lo}, {hi}]",
            target=target_lambda, bracket=list(bracket),
        )
    omega = float(brentq(offset, lo, hi, xtol=1e-14, rtol=1e-14))
    logger.info(f"Crossing frequency: {json.dumps({'target': target_lambda, 'omega': omega})}")
    return omega

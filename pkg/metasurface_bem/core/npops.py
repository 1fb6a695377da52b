"""
Boundary Operators

Collocation discretisation of the static single-layer, Neumann-Poincare and double-layer
operators with the periodic half-space kernels G0_e / G0_m, their symmetrised spectra and
resolvents.

Every kernel is split into the free-space part -1/(4 pi |x - y|), integrated analytically over
flat panels near the collocation point, and a smooth remainder (periodic copies plus the mirror
image) evaluated at panel centroids. The smooth tables are computed once per mesh and shared by
both kinds and all operator flavours.
"""

import json
import logging
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.linalg import eigh, eigvalsh, lu_factor, lu_solve, solve
from scipy.optimize import linear_sum_assignment

from ..utils.error_handling import (
    AssemblyFailure,
    InvalidIncidence,
    MetricNotPSD,
    NearResonance,
    ParseError,
    WrongKind,
)
from .greens import KINDS, EwaldParams, static_lattice_sum
from .lattice import Lattice2D
from .mesh import SurfaceMesh
from .tracing import get_tracer

logger = logging.getLogger(__name__)

FLAVORS = ("single_layer", "double_layer", "np_star", "np_star_corrected", "double_layer_conjugate")
PAIR_CHUNK = 250_000
FREE_CHUNK = 2_000_000
PSD_TOL = 1e-6
ASYMMETRY_WARN = 0.1

DUMP_MAGIC = b"NPOP"
DUMP_VERSION = 1
_DUMP_HEADER = struct.Struct("<4sIIBB")


@dataclass(frozen=True)
class AssemblyOptions:
    """Lattice-sum truncation and near-field threshold used by the assembler.

    With ``gauss_diagonal`` the K* diagonal is replaced so that w^T K* = w^T / 2 holds exactly;
    without it the diagonal is the flat-panel self term (zero) plus the smooth part at the centroid.
    """
    ewald: EwaldParams = field(default_factory=lambda: EwaldParams(tol=1e-12))
    near_factor: float = 3.0
    gauss_diagonal: bool = True

    @classmethod
    def from_numerics(cls, numerics) -> "AssemblyOptions":
        return cls(
            ewald=EwaldParams(
                eta=numerics.ewald_eta,
                n_spectral=numerics.n_spectral,
                n_spatial=numerics.n_spatial,
                tol=numerics.assembly_tol,
            ),
            near_factor=numerics.near_factor,
            gauss_diagonal=numerics.gauss_diagonal,
        )


@dataclass(frozen=True)
class DiscreteOperator:
    """Dense collocation matrix of one boundary operator"""
    kind: str
    flavor: str
    entries: np.ndarray
    mesh: SurfaceMesh = field(repr=False)
    weights: np.ndarray = field(repr=False)
    tau: float = float("nan")
    kernel: str = "halfspace"

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def apply(self, density: np.ndarray) -> np.ndarray:
        return self.entries @ density

    def weighted(self) -> np.ndarray:
        """W A with W = diag(panel areas); symmetric for the single layer."""
        return self.weights[:, None] * self.entries


@dataclass(frozen=True)
class SpectralData:
    """Eigen-decomposition of K* in the inner product -<phi, S~ psi>.

    ``phi0`` is the 1/2-eigenfunction of K* that defines S~, normalised to <phi0, 1> = -1;
    the eigenvector column at ``phi0_index`` is the same direction, normalised in B.
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    weight: np.ndarray = field(repr=False)
    phi0_index: int
    kind: str
    phi0: np.ndarray = field(repr=False, default=None)
    asymmetry: float = 0.0

    def gram(self) -> np.ndarray:
        return self.eigenvectors.T @ self.weight @ self.eigenvectors

    def reconstruct(self) -> np.ndarray:
        """sum_j lambda_j v_j (B v_j)^T; equals symmetrized_operator, not the raw K*."""
        return (self.eigenvectors * self.eigenvalues) @ (self.weight @ self.eigenvectors).T


@dataclass(frozen=True)
class _FreeSpaceTables:
    single: np.ndarray
    normal_grad: np.ndarray
    near_pairs: int


@dataclass(frozen=True)
class _SmoothTables:
    direct: np.ndarray
    image: np.ndarray
    normal_grad_direct: np.ndarray
    normal_grad_image: np.ndarray


def _check_kind(kind: str):
    if kind not in KINDS:
        raise WrongKind(f"kind must be 'e' or 'm', got {kind!r}")


def _kind_sign(kind: str) -> float:
    """Sign of the mirror-image term: Dirichlet subtracts, Neumann adds."""
    return -1.0 if kind == "e" else 1.0


# Flat-panel integrals of 1/|x - y|

def panel_potential(points: np.ndarray, corners: np.ndarray, normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Integral of 1/R over flat triangles and its gradient in the observation point.

    points (P, 3), corners (P, 3, 3) ordered counter-clockwise about normals (P, 3).
    """
    h = np.einsum("ij,ij->i", points - corners[:, 0], normals)
    abs_h = np.abs(h)
    rho = points - h[:, None] * normals
    value = np.zeros(len(points))
    grad = np.zeros((len(points), 3))
    solid = np.zeros(len(points))

    for e in range(3):
        p_minus = corners[:, e]
        p_plus = corners[:, (e + 1) % 3]
        edge = p_plus - p_minus
        lhat = edge / np.linalg.norm(edge, axis=1)[:, None]
        u = np.cross(lhat, normals)
        l_plus = np.einsum("ij,ij->i", p_plus - rho, lhat)
        l_minus = np.einsum("ij,ij->i", p_minus - rho, lhat)
        t0 = np.einsum("ij,ij->i", p_minus - rho, u)
        r0_sq = t0 ** 2 + h ** 2
        r_plus = np.sqrt(r0_sq + l_plus ** 2)
        r_minus = np.sqrt(r0_sq + l_minus ** 2)

        # (R+ + l+)/(R- + l-) == (R- - l-)/(R+ - l+); pick the form without cancellation
        forward = (l_plus + l_minus) >= 0
        num = np.where(forward, r_plus + l_plus, r_minus - l_minus)
        den = np.where(forward, r_minus + l_minus, r_plus - l_plus)
        ok = (num > 0) & (den > 0)
        log_term = np.zeros(len(points))
        log_term[ok] = np.log(num[ok] / den[ok])

        angle = np.arctan2(t0 * l_plus, r0_sq + abs_h * r_plus) - np.arctan2(t0 * l_minus, r0_sq + abs_h * r_minus)
        value += t0 * log_term - abs_h * angle
        grad -= u * log_term[:, None]
        solid += angle

    grad -= normals * (np.sign(h) * solid)[:, None]
    return value, grad


def _near_mask(points: np.ndarray, mesh: SurfaceMesh, near_factor: float) -> np.ndarray:
    dist = np.linalg.norm(points[:, None, :] - mesh.centroids[None, :, :], axis=2)
    return dist < near_factor * mesh.panel_diameters[None, :]


def _free_space_tables(mesh: SurfaceMesh, near_factor: float) -> _FreeSpaceTables:
    """Free-space single-layer integrals A_ij and nu_i . grad_x integrals at the centroids."""
    n = mesh.n_panels
    c = mesh.centroids
    nodes, qweights = mesh.quadrature_rule()
    q = nodes.shape[1]
    single = np.empty((n, n))
    normal_grad = np.empty((n, n))

    rows = max(1, FREE_CHUNK // (n * q))
    with np.errstate(divide="ignore", invalid="ignore"):
        for start in range(0, n, rows):
            block = slice(start, min(n, start + rows))
            diff = c[block, None, None, :] - nodes[None, :, :, :]
            r = np.linalg.norm(diff, axis=3)
            single[block] = -np.sum(qweights[None] / r, axis=2) / (4.0 * np.pi)
            field_ = np.sum(qweights[None, :, :, None] * diff / r[..., None] ** 3, axis=2) / (4.0 * np.pi)
            normal_grad[block] = np.einsum("ik,ijk->ij", mesh.normals[block], field_)

    near = _near_mask(c, mesh, near_factor)
    i, j = np.nonzero(near)
    corners = mesh.panel_vertices
    value, grad = panel_potential(c[i], corners[j], mesh.normals[j])
    single[i, j] = -value / (4.0 * np.pi)
    normal_grad[i, j] = -np.einsum("ij,ij->i", mesh.normals[i], grad) / (4.0 * np.pi)
    np.fill_diagonal(normal_grad, 0.0)

    if not np.all(np.isfinite(single)):
        raise AssemblyFailure("Non-finite free-space single-layer entries", panels=n)
    return _FreeSpaceTables(single=single, normal_grad=normal_grad, near_pairs=len(i))


def _image_points(z: np.ndarray, x3: np.ndarray, y3: np.ndarray) -> np.ndarray:
    zi = z.copy()
    zi[:, 2] = x3 + y3
    return zi


def _smooth_tables(mesh: SurfaceMesh, lat: Lattice2D, ew: EwaldParams) -> _SmoothTables:
    """Smooth direct remainder and mirror-image lattice sums over all centroid pairs.

    Both are symmetric under i <-> j; the direct gradient is odd and the image gradient
    flips its in-plane part only, so the upper triangle determines everything.
    """
    n = mesh.n_panels
    c = mesh.centroids
    nu = mesh.normals
    direct = np.empty((n, n))
    image = np.empty((n, n))
    ng_direct = np.empty((n, n))
    ng_image = np.empty((n, n))
    flip = np.array([-1.0, -1.0, 1.0])

    iu, ju = np.triu_indices(n)
    for start in range(0, len(iu), PAIR_CHUNK):
        i = iu[start:start + PAIR_CHUNK]
        j = ju[start:start + PAIR_CHUNK]
        z = c[i] - c[j]
        v_direct, g_direct = static_lattice_sum(lat, z, ew, with_gradient=True, remove_singular=True)
        v_image, g_image = static_lattice_sum(lat, _image_points(z, c[i, 2], c[j, 2]), ew, with_gradient=True)

        direct[i, j] = v_direct
        direct[j, i] = v_direct
        image[i, j] = v_image
        image[j, i] = v_image
        ng_direct[i, j] = np.einsum("ij,ij->i", nu[i], g_direct)
        ng_direct[j, i] = -np.einsum("ij,ij->i", nu[j], g_direct)
        ng_image[i, j] = np.einsum("ij,ij->i", nu[i], g_image)
        ng_image[j, i] = np.einsum("ij,ij->i", nu[j], g_image * flip)

    return _SmoothTables(direct=direct, image=image, normal_grad_direct=ng_direct, normal_grad_image=ng_image)


def _gauss_diagonal(kstar: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Set the diagonal so that w^T K* = w^T / 2 (Gauss identity for constant densities)."""
    kstar = kstar.copy()
    np.fill_diagonal(kstar, 0.0)
    column = w @ kstar
    np.fill_diagonal(kstar, (0.5 * w - column) / w)
    return kstar


def _symmetrize_free(single: np.ndarray, w: np.ndarray) -> np.ndarray:
    weighted = w[:, None] * single
    return 0.5 * (weighted + weighted.T) / w[:, None]


@dataclass(frozen=True)
class OperatorSet:
    """All static operators of one mesh in one lattice"""
    mesh: SurfaceMesh = field(repr=False)
    lattice: Lattice2D = field(repr=False)
    S_e: DiscreteOperator = field(repr=False)
    S_m: DiscreteOperator = field(repr=False)
    Kstar_e: DiscreteOperator = field(repr=False)
    Kstar_m: DiscreteOperator = field(repr=False)

    def single_layer(self, kind: str) -> DiscreteOperator:
        _check_kind(kind)
        return self.S_e if kind == "e" else self.S_m

    def np_star(self, kind: str) -> DiscreteOperator:
        _check_kind(kind)
        return self.Kstar_e if kind == "e" else self.Kstar_m

    @cached_property
    def K_e(self) -> DiscreteOperator:
        return adjoint_double_layer(self.Kstar_e)

    @cached_property
    def K_m(self) -> DiscreteOperator:
        return adjoint_double_layer(self.Kstar_m)

    def with_gauss_diagonal(self) -> "OperatorSet":
        """Same operators with the K* diagonal fixed by the Gauss identity."""
        corrected = {
            f"Kstar_{kind}": replace(op, entries=_gauss_diagonal(op.entries, op.weights))
            for kind, op in (("e", self.Kstar_e), ("m", self.Kstar_m))
        }
        return replace(self, **corrected)


def assemble_operator_set(mesh: SurfaceMesh, lat: Lattice2D,
                          options: Optional[AssemblyOptions] = None) -> OperatorSet:
    """Assemble S and K* of both kinds from one pass of lattice-sum evaluation."""
    options = options or AssemblyOptions()
    cached = _cache_lookup(mesh, lat, options)
    if cached is not None:
        return cached

    tracer = get_tracer()
    w = mesh.areas
    with tracer.span("assemble_operator_set", panels=mesh.n_panels):
        with tracer.span("free_space_tables"):
            free = _free_space_tables(mesh, options.near_factor)
        with tracer.span("lattice_sum_tables"):
            smooth = _smooth_tables(mesh, lat, options.ewald)

        free_single = _symmetrize_free(free.single, w)
        operators = {}
        for kind in KINDS:
            sign = _kind_sign(kind)
            single = free_single + (smooth.direct + sign * smooth.image) * w[None, :]
            # the flat-panel self term of free.normal_grad is zero; the smooth part adds its centroid value
            kstar = free.normal_grad + (smooth.normal_grad_direct + sign * smooth.normal_grad_image) * w[None, :]
            if options.gauss_diagonal:
                kstar = _gauss_diagonal(kstar, w)
            if not (np.all(np.isfinite(single)) and np.all(np.isfinite(kstar))):
                raise AssemblyFailure(f"Non-finite {kind}-kind operator entries", panels=mesh.n_panels)
            operators[f"S_{kind}"] = DiscreteOperator(kind, "single_layer", single, mesh, w, lat.tau)
            operators[f"Kstar_{kind}"] = DiscreteOperator(kind, "np_star", kstar, mesh, w, lat.tau)

    logger.info(f"Operators assembled: {json.dumps({'panels': mesh.n_panels, 'near_pairs': free.near_pairs})}")
    result = OperatorSet(mesh=mesh, lattice=lat, **operators)
    _cache_store(mesh, lat, options, result)
    return result


_CACHE_SIZE = 4
_cache: "OrderedDict[int, Tuple[SurfaceMesh, Lattice2D, AssemblyOptions, OperatorSet]]" = OrderedDict()
_cache_lock = threading.Lock()


def _cache_lookup(mesh, lat, options) -> Optional[OperatorSet]:
    with _cache_lock:
        for key, (m, l, o, ops) in _cache.items():
            if m is mesh and l is lat and o == options:
                _cache.move_to_end(key)
                return ops
    return None


def _cache_store(mesh, lat, options, ops: OperatorSet):
    with _cache_lock:
        _cache[id(ops)] = (mesh, lat, options, ops)
        while len(_cache) > _CACHE_SIZE:
            _cache.popitem(last=False)


def clear_operator_cache():
    """Drop every cached operator set (large meshes hold several dense N x N matrices)."""
    with _cache_lock:
        _cache.clear()


def assemble_single_layer(kind: str, mesh: SurfaceMesh, lat: Lattice2D,
                          options: Optional[AssemblyOptions] = None) -> DiscreteOperator:
    _check_kind(kind)
    return assemble_operator_set(mesh, lat, options).single_layer(kind)


def assemble_np_star(kind: str, mesh: SurfaceMesh, lat: Lattice2D,
                     options: Optional[AssemblyOptions] = None) -> DiscreteOperator:
    _check_kind(kind)
    return assemble_operator_set(mesh, lat, options).np_star(kind)


def adjoint_double_layer(kstar: DiscreteOperator) -> DiscreteOperator:
    """Double layer as the area-weighted adjoint of K*: K_ij = K*_ji w_j / w_i.

    The off-diagonal entries are the collocated d/dnu_y kernel. With the Gauss diagonal the row
    identity K[1] = 1/2 is exact; with the flat-panel diagonal it holds to O(h).
    """
    w = kstar.weights
    entries = kstar.entries.T * w[None, :] / w[:, None]
    return DiscreteOperator(kstar.kind, "double_layer", entries, kstar.mesh, w, kstar.tau, kstar.kernel)


def assemble_double_layer(kind: str, conjugate: bool, mesh: SurfaceMesh, lat: Lattice2D,
                          d: Optional[np.ndarray] = None,
                          options: Optional[AssemblyOptions] = None) -> DiscreteOperator:
    """K_e / K_m, or the conjugate K^_m whose kernel adds d'.(x' - y')/(d3 tau)."""
    _check_kind(kind)
    ops = assemble_operator_set(mesh, lat, options)
    double = ops.K_e if kind == "e" else ops.K_m
    if not conjugate:
        return double
    return conjugate_double_layer(double, d)


def conjugate_double_layer(double: DiscreteOperator, d: Optional[np.ndarray] = None) -> DiscreteOperator:
    """Conjugate flavour of an assembled double layer; the e-kind is its own conjugate."""
    if double.flavor != "double_layer":
        raise WrongKind(f"Expected a double layer, got {double.flavor}")
    if double.kind == "e":
        return replace(double, flavor="double_layer_conjugate")
    if d is None:
        raise InvalidIncidence("The conjugate m-kind double layer needs the incident direction d")
    d = np.asarray(d, dtype=float).reshape(3)
    mesh = double.mesh
    shift = (mesh.normals[:, :2] @ d[:2]) / (d[2] * double.tau)
    entries = double.entries - (shift * mesh.areas)[None, :]
    return DiscreteOperator("m", "double_layer_conjugate", entries, mesh, double.weights, double.tau, double.kernel)


def apply_incident_correction(op: DiscreteOperator, d: np.ndarray) -> DiscreteOperator:
    """Rank-one oblique-incidence correction K*_m - (d'.nu'_i)/(d3 tau) w_j."""
    if op.kind != "m" or op.flavor != "np_star":
        raise WrongKind(f"Incident correction applies to the m-kind NP operator, got {op.kind}/{op.flavor}")
    d = np.asarray(d, dtype=float).reshape(3)
    shift = (op.mesh.normals[:, :2] @ d[:2]) / (d[2] * op.tau)
    entries = op.entries - np.outer(shift, op.weights)
    return DiscreteOperator("m", "np_star_corrected", entries, op.mesh, op.weights, op.tau, op.kernel)


# Free-space oracle

def assemble_free_space(mesh: SurfaceMesh, near_factor: float = 3.0,
                        gauss_diagonal: bool = True) -> Tuple[DiscreteOperator, DiscreteOperator]:
    """Single layer and NP operator of the kernel -1/(4 pi |x - y|) alone."""
    w = mesh.areas
    free = _free_space_tables(mesh, near_factor)
    single = _symmetrize_free(free.single, w)
    kstar = _gauss_diagonal(free.normal_grad, w) if gauss_diagonal else free.normal_grad
    return (
        DiscreteOperator("e", "single_layer", single, mesh, w, kernel="free_space"),
        DiscreteOperator("e", "np_star", kstar, mesh, w, kernel="free_space"),
    )


# Off-surface evaluation

def single_layer_gradient(kind: str, mesh: SurfaceMesh, lat: Lattice2D, density: np.ndarray,
                          points: np.ndarray, options: Optional[AssemblyOptions] = None) -> np.ndarray:
    """grad S0_kind[density](x) at off-surface points x, shape (M, 3)."""
    _check_kind(kind)
    options = options or AssemblyOptions()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    density = np.asarray(density)
    m = len(points)
    n = mesh.n_panels
    c = mesh.centroids
    w = mesh.areas
    sign = _kind_sign(kind)
    nodes, qweights = mesh.quadrature_rule()

    with np.errstate(divide="ignore", invalid="ignore"):
        diff = points[:, None, None, :] - nodes[None, :, :, :]
        r = np.linalg.norm(diff, axis=3)
        kernel_grad = np.sum(qweights[None, :, :, None] * diff / r[..., None] ** 3, axis=2) / (4.0 * np.pi)

    near = _near_mask(points, mesh, options.near_factor)
    i, j = np.nonzero(near)
    if len(i):
        _, grad = panel_potential(points[i], mesh.panel_vertices[j], mesh.normals[j])
        kernel_grad[i, j] = -grad / (4.0 * np.pi)

    pi, pj = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    pi, pj = pi.ravel(), pj.ravel()
    z = points[pi] - c[pj]
    _, g_direct = static_lattice_sum(lat, z, options.ewald, with_gradient=True, remove_singular=True)
    _, g_image = static_lattice_sum(lat, _image_points(z, points[pi, 2], c[pj, 2]), options.ewald, with_gradient=True)
    smooth = ((g_direct + sign * g_image) * w[pj, None]).reshape(m, n, 3)

    total = kernel_grad + smooth
    if not np.all(np.isfinite(total)):
        raise AssemblyFailure("Off-surface point lies on a panel; move it away from the surface")
    if density.ndim == 1:
        return np.einsum("mjk,j->mk", total, density)
    return np.einsum("mjk,jr->mkr", total, density)


# Spectra

def _right_half_eigenvector(kstar: np.ndarray, w: np.ndarray) -> np.ndarray:
    n = kstar.shape[0]
    shift = 0.5 * (1.0 + 1e-10)
    lu = lu_factor(kstar - shift * np.eye(n))
    v = np.ones(n)
    for _ in range(4):
        v = lu_solve(lu, v)
        v /= np.linalg.norm(v)
    mean = w @ v
    if abs(mean) < 1e-12 * np.linalg.norm(w):
        raise AssemblyFailure("Eigenvector of K* for 1/2 has zero mean; operator is defective")
    return -v / mean


def _projector(phi0: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.eye(len(w)) + np.outer(phi0, w)


def _effective_operator(kstar: np.ndarray, phi0: np.ndarray, w: np.ndarray) -> np.ndarray:
    return kstar @ _projector(phi0, w) - 0.5 * np.outer(phi0, w)


def symmetrized_eigensystem(S: DiscreteOperator, Kstar: DiscreteOperator) -> SpectralData:
    """Eigenpairs of K* self-adjoint under B = -<., S~ .>, sorted descending.

    S~ agrees with S on mean-zero densities and sends the 1/2-eigenfunction phi0
    (normalised <phi0, 1> = -1) to the constant 1.
    """
    if S.kind != Kstar.kind:
        raise WrongKind(f"Single layer is {S.kind}-kind but K* is {Kstar.kind}-kind")
    if S.flavor != "single_layer" or Kstar.flavor not in ("np_star", "np_star_corrected"):
        raise WrongKind(f"Expected a single layer and an NP operator, got {S.flavor} and {Kstar.flavor}")
    if S.n != Kstar.n:
        raise WrongKind("Operators belong to different meshes")

    w = Kstar.weights
    kstar = Kstar.entries
    n = kstar.shape[0]
    with get_tracer().span("symmetrized_eigensystem", kind=Kstar.kind, flavor=Kstar.flavor, panels=n):
        phi0 = _right_half_eigenvector(kstar, w)
        projector = _projector(phi0, w)
        single_sym = S.weighted()
        single_sym = 0.5 * (single_sym + single_sym.T)
        metric = -projector.T @ single_sym @ projector + np.outer(w, w)
        metric = 0.5 * (metric + metric.T)

        metric_eigs = eigvalsh(metric)
        scale = float(np.max(np.abs(metric_eigs)))
        if metric_eigs[0] < -PSD_TOL * scale:
            raise MetricNotPSD(
                f"Symmetrisation metric has eigenvalue {metric_eigs[0]:.3e} (norm {scale:.3e})",
                min_eigenvalue=float(metric_eigs[0]), norm=scale,
            )

        product = metric @ _effective_operator(kstar, phi0, w)
        asymmetry = float(np.linalg.norm(product - product.T) / np.linalg.norm(product))
        product = 0.5 * (product + product.T)

        values, vectors = eigh(product, metric)
        values = values[::-1].copy()
        vectors = vectors[:, ::-1].copy()

    means = w @ vectors
    phi0_index = int(np.argmax(np.abs(means)))
    if means[phi0_index] > 0:
        vectors[:, phi0_index] *= -1.0

    record = {
        "kind": Kstar.kind,
        "flavor": Kstar.flavor,
        "top": float(values[0]),
        "phi0_index": phi0_index,
        "asymmetry": asymmetry,
    }
    if asymmetry > ASYMMETRY_WARN:
        logger.warning(f"Symmetrised operator strongly asymmetric: {json.dumps(record)}")
    else:
        logger.info(f"Spectrum computed: {json.dumps(record)}")
    if phi0_index != 0:
        logger.warning(f"The 1/2-eigenfunction is not the top eigenvector: {json.dumps(record)}")

    return SpectralData(
        eigenvalues=values,
        eigenvectors=vectors,
        weight=metric,
        phi0_index=phi0_index,
        kind=Kstar.kind,
        phi0=phi0,
        asymmetry=asymmetry,
    )


def symmetrized_operator(Kstar: DiscreteOperator, spec: SpectralData) -> np.ndarray:
    """B^-1 sym(B K~*), the self-adjoint operator whose eigenpairs spec holds.

    K~* agrees with K* on mean-zero densities and keeps phi0 as its 1/2-eigenfunction.
    """
    if spec.kind != Kstar.kind:
        raise WrongKind(f"Spectrum is {spec.kind}-kind but K* is {Kstar.kind}-kind")
    product = spec.weight @ _effective_operator(Kstar.entries, spec.phi0, Kstar.weights)
    return solve(spec.weight, 0.5 * (product + product.T), assume_a="sym")


def spectrum_distance(lam: complex, spec: SpectralData, negate: bool = False) -> float:
    """min_j |lam - (+/-)lambda_j|."""
    targets = -spec.eigenvalues if negate else spec.eigenvalues
    if len(targets) == 0:
        return float("inf")
    return float(np.min(np.abs(complex(lam) - targets)))


def resolve_np(lam: complex, Kstar: DiscreteOperator, f: np.ndarray, spec: Optional[SpectralData] = None,
               guard: float = 1e-8, return_distance: bool = False):
    """Direct solve of (lam I + K*) phi = f, refusing lam within guard of -sigma(K*)."""
    distance = spectrum_distance(lam, spec, negate=True) if spec is not None else float("inf")
    if distance < guard:
        raise NearResonance(
            f"lambda = {complex(lam)} lies within {distance:.3e} of -sigma(K*_{Kstar.kind})",
            distance=distance, kind=Kstar.kind, lam=complex(lam),
        )
    matrix = Kstar.entries.astype(complex) + complex(lam) * np.eye(Kstar.n)
    phi = solve(matrix, np.asarray(f, dtype=complex))
    if return_distance:
        return phi, distance
    return phi


def resolve_np_series(lam: complex, spec: SpectralData, f: np.ndarray) -> np.ndarray:
    """Eigen-series resolvent sum_j v_j (v_j^T B f) / (lam + lambda_j)."""
    coeffs = spec.eigenvectors.T @ (spec.weight @ np.asarray(f, dtype=complex))
    denom = complex(lam) + spec.eigenvalues
    if np.ndim(coeffs) > 1:
        denom = denom[:, None]
    return spec.eigenvectors @ (coeffs / denom)


def match_spectra(a: np.ndarray, b: np.ndarray) -> float:
    """Largest deviation between two eigenvalue multisets under optimal pairing."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"Spectra differ in size: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(np.max(cost[rows, cols]))


# Binary dump

def dump_operator(op: DiscreteOperator, path: Union[str, Path]) -> Path:
    """Header (magic, version, N, kind, flavor) then row-major little-endian complex64."""
    path = Path(path)
    header = _DUMP_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, op.n, KINDS.index(op.kind), FLAVORS.index(op.flavor))
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(op.entries, dtype="<c8").tobytes())
    return path


def load_operator(path: Union[str, Path], mesh: SurfaceMesh, tau: float = float("nan")) -> DiscreteOperator:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _DUMP_HEADER.size:
        raise ParseError(f"{path} is too short for an operator dump")
    magic, version, n, kind_code, flavor_code = _DUMP_HEADER.unpack_from(data)
    if magic != DUMP_MAGIC or version != DUMP_VERSION:
        raise ParseError(f"{path} is not a version {DUMP_VERSION} operator dump")
    if kind_code >= len(KINDS) or flavor_code >= len(FLAVORS):
        raise ParseError(f"{path} has an unknown kind/flavor code")
    if n != mesh.n_panels:
        raise ParseError(f"Dump holds {n} panels, mesh has {mesh.n_panels}")
    body = data[_DUMP_HEADER.size:]
    if len(body) != n * n * 8:
        raise ParseError(f"{path} body has {len(body)} bytes, expected {n * n * 8}")
    entries = np.frombuffer(body, dtype="<c8").reshape(n, n).astype(complex)
    return DiscreteOperator(KINDS[kind_code], FLAVORS[flavor_code], entries, mesh, mesh.areas, tau)

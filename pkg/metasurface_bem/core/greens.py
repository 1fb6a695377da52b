"""
Quasi-Periodic Green's Functions

Scalar Helmholtz kernel of the particle lattice, G(x) = sum over lattice copies of
-exp(ik|x - R|) e^{ik'.R} / (4 pi |x - R|), evaluated either by its spectral (plane-wave)
series or by Ewald splitting, together with the static kernel, the half-space variants
obtained with the mirror image across the conducting plane x3 = 0, the low-frequency
expansion terms, the propagating mode and the propagative Green's tensor.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf, erfc, erfcx

from ..utils.error_handling import (
    FitIllConditioned,
    InvalidIncidence,
    RayleighAnomaly,
    SlowConvergence,
    SourcePointSingularity,
)
from .lattice import Lattice2D, direct_points, reciprocal_points, shell_points

logger = logging.getLogger(__name__)

H_MIN_DEFAULT = 0.05
SERIES_REL_TOL = 1e-15
SOURCE_TOL = 1e-12

KINDS = ("e", "m")


@dataclass(frozen=True)
class BlochContext:
    """Incident wavenumber and direction with the derived Bloch quantities"""
    k: complex
    d: np.ndarray
    kpar: np.ndarray
    k3: complex
    dstar: np.ndarray
    kstar: np.ndarray

    def scaled(self, factor: float) -> "BlochContext":
        """Same direction, wavenumber multiplied by factor (the delta-scaled problem)."""
        return make_bloch_context(self.k * factor, self.d)


def make_bloch_context(k: complex, d: Sequence[float]) -> BlochContext:
    d = np.asarray(d, dtype=float).reshape(3)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-12:
        raise InvalidIncidence(f"Incident direction must be a unit vector, |d| = {norm}", d=d)
    if not d[2] < 0:
        raise InvalidIncidence("Incident direction must point towards the plane (d3 < 0)", d=d)
    k = complex(k)
    if k.imag < 0:
        raise InvalidIncidence(f"Wavenumber must satisfy Im k >= 0, got {k}", k=k)
    dstar = np.array([d[0], d[1], -d[2]])
    return BlochContext(
        k=k,
        d=d,
        kpar=k * d[:2],
        k3=k * d[2],
        dstar=dstar,
        kstar=k * dstar,
    )


@dataclass(frozen=True)
class EwaldParams:
    """Ewald splitting parameter and truncation.

    Unset cutoffs are derived from ``tol``; explicit cutoffs are shell indices
    (all points with max(|m|, |n|) <= cutoff are summed).
    """
    eta: Optional[float] = None
    n_spectral: Optional[int] = None
    n_spatial: Optional[int] = None
    tol: float = 1e-14

    def __post_init__(self):
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        for name in ("n_spectral", "n_spatial"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")

    def split(self, lat: Lattice2D) -> float:
        return self.eta if self.eta is not None else math.sqrt(math.pi / lat.tau)

    def resolve(self, lat: Lattice2D, kmag: float = 0.0, kpar_mag: float = 0.0,
                extent: float = 0.0) -> Tuple[float, np.ndarray, np.ndarray]:
        """Concrete (eta, reciprocal points, lattice points) for points with |x'| <= extent."""
        eta = self.split(lat)
        log_tol = math.log(1.0 / self.tol)
        if self.n_spectral is not None:
            xi = shell_points(lat.b1, lat.b2, self.n_spectral)
        else:
            radius = 2.0 * eta * math.sqrt(log_tol) + kpar_mag + kmag
            xi = reciprocal_points(lat, radius)
        if self.n_spatial is not None:
            lattice = shell_points(lat.a1, lat.a2, self.n_spatial)
        else:
            radius = math.sqrt(log_tol + kmag ** 2 / (4.0 * eta ** 2)) / eta + extent
            lattice = direct_points(lat, max(radius, 1e-9))
        return eta, xi, lattice


def _require_dynamic(ctx: BlochContext):
    if ctx.k == 0:
        raise InvalidIncidence("k = 0 has no propagating mode; use the static kernel", k=ctx.k)


def check_rayleigh(lat: Lattice2D, ctx: BlochContext):
    """Raise RayleighAnomaly unless every order xi != 0 is evanescent."""
    radius = float(np.sum(np.abs(ctx.kpar))) + abs(ctx.k) + 1e-9
    xi = reciprocal_points(lat, radius)[1:]
    if len(xi) == 0:
        return
    kt = xi + ctx.kpar
    q = np.sum(kt * kt, axis=1) - ctx.k ** 2
    bad = q.real <= 0
    if np.any(bad):
        order = xi[np.argmax(bad)]
        raise RayleighAnomaly(
            f"Diffraction order {order.tolist()} propagates at k = {ctx.k}",
            k=ctx.k, order=order,
        )


def _point(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(3)


def _wrap(lat: Lattice2D, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Shift points into the centred cell; returns shifted points and the lattice shifts."""
    s = lat.fractional(pts[:, :2])
    n = np.rint(s)
    shift = n[:, :1] * lat.a1 + n[:, 1:] * lat.a2
    wrapped = pts.copy()
    wrapped[:, :2] -= shift
    return wrapped, shift


def _check_sources(lat: Lattice2D, pts: np.ndarray):
    wrapped, _ = _wrap(lat, pts)
    near = direct_points(lat, 2.0 * max(np.linalg.norm(lat.a1), np.linalg.norm(lat.a2)))
    diff = wrapped[:, None, :2] - near[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=2) + wrapped[:, None, 2] ** 2)
    if np.any(dist < SOURCE_TOL):
        bad = pts[np.argmin(np.min(dist, axis=1))]
        raise SourcePointSingularity(f"Evaluation point {bad.tolist()} coincides with a lattice source", x=bad)


# Screened Gaussian factors of the Ewald splitting

def _exp_erfc_pair(kappa, z, eta):
    """exp(kappa z) erfc(kappa/2eta + z eta) and exp(-kappa z) erfc(kappa/2eta - z eta).

    Uses erfcx where the argument has non-negative real part, where the exponent
    collapses to -kappa^2/(4 eta^2) - z^2 eta^2.
    """
    kappa, z = np.broadcast_arrays(kappa, z)
    complex_mode = np.iscomplexobj(kappa)
    dtype = complex if complex_mode else float
    up = kappa / (2.0 * eta) + z * eta
    um = kappa / (2.0 * eta) - z * eta
    gauss = np.exp(-kappa ** 2 / (4.0 * eta ** 2) - (z * eta) ** 2)

    plus = np.empty(kappa.shape, dtype=dtype)
    minus = np.empty(kappa.shape, dtype=dtype)
    pos = up.real >= 0
    plus[pos] = gauss[pos] * erfcx(up[pos])
    plus[~pos] = np.exp(kappa[~pos] * z[~pos]) * erfc(up[~pos])
    pos = um.real >= 0
    minus[pos] = gauss[pos] * erfcx(um[pos])
    minus[~pos] = np.exp(-kappa[~pos] * z[~pos]) * erfc(um[~pos])
    return plus, minus


def _spatial_bracket(r, k, eta):
    """exp(ikr) erfc(r eta + ik/2eta) + exp(-ikr) erfc(r eta - ik/2eta)."""
    u1 = r * eta + 1j * k / (2.0 * eta)
    u2 = r * eta - 1j * k / (2.0 * eta)
    gauss = np.exp(-(r * eta) ** 2 + k ** 2 / (4.0 * eta ** 2))
    out = np.zeros(np.shape(r), dtype=complex)
    for u, sign in ((u1, 1.0), (u2, -1.0)):
        pos = u.real >= 0
        out[pos] += gauss[pos] * erfcx(u[pos])
        out[~pos] += np.exp(sign * 1j * k * r[~pos]) * erfc(u[~pos])
    return out


def ewald_dynamic(lat: Lattice2D, ctx: BlochContext, ew: EwaldParams, pts: np.ndarray,
                  regular: bool = False) -> np.ndarray:
    """Quasi-periodic kernel at many points by Ewald splitting.

    With ``regular`` the propagating singular part i/(2 tau k3) is removed analytically.
    """
    _require_dynamic(ctx)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    wrapped, shift = _wrap(lat, pts)
    phase_shift = np.exp(1j * (shift @ ctx.kpar))
    xp = wrapped[:, :2]
    z = wrapped[:, 2]
    k = ctx.k

    extent = float(np.max(np.linalg.norm(xp, axis=1))) if len(xp) else 0.0
    eta, xi, lattice = ew.resolve(lat, abs(k), float(np.sum(np.abs(ctx.kpar))), extent)

    kt = xi + ctx.kpar
    kappa = -1j * np.sqrt(k ** 2 - np.sum(kt * kt, axis=1) + 0j)
    if np.any(np.abs(kappa) < 1e-14):
        raise RayleighAnomaly(f"Diffraction order grazing at k = {k}", k=k)

    prefactor = 1j / (2.0 * lat.tau * ctx.k3)
    zero_order = np.zeros(len(pts), dtype=complex)
    spectral = np.zeros(len(pts), dtype=complex)
    for t in range(len(kt)):
        plus, minus = _exp_erfc_pair(np.full(len(z), kappa[t]), z, eta)
        wave = np.exp(1j * (xp @ kt[t]))
        if regular and t == 0 and np.allclose(xi[0], 0.0):
            # kappa0 = i k3, so this order is prefactor * wave * (plus + minus) / 2
            zero_order = prefactor * (np.expm1(1j * (xp @ kt[t])) + wave * (plus + minus - 2.0) / 2.0)
            continue
        spectral += wave * (plus + minus) / kappa[t]
    spectral /= 4.0 * lat.tau

    spatial = np.zeros(len(pts), dtype=complex)
    for R in lattice:
        diff = wrapped - np.array([R[0], R[1], 0.0])
        r = np.linalg.norm(diff, axis=1)
        if np.any(r < SOURCE_TOL):
            raise SourcePointSingularity("Evaluation point coincides with a lattice source")
        spatial += np.exp(1j * (ctx.kpar @ R)) * _spatial_bracket(r, k, eta) / (8.0 * math.pi * r)

    values = zero_order - (spectral + spatial)
    if regular:
        # the removed constant is not quasi-periodic
        return phase_shift * values + prefactor * (phase_shift - 1.0)
    return phase_shift * values


def _half_plane(xi: np.ndarray) -> np.ndarray:
    """One representative of each +/- pair of non-zero reciprocal vectors."""
    keep = (xi[:, 0] > 1e-12) | ((np.abs(xi[:, 0]) <= 1e-12) & (xi[:, 1] > 1e-12))
    return xi[keep]


def _smooth_radial(r: np.ndarray, eta: float) -> Tuple[np.ndarray, np.ndarray]:
    """erf(r eta)/(4 pi r) and its radial derivative divided by r."""
    x = r * eta
    small = x < 1e-2
    value = np.empty_like(r)
    dvalue = np.empty_like(r)
    c = eta / (2.0 * math.pi ** 1.5)
    xs = x[small]
    value[small] = c * (1.0 - xs ** 2 / 3.0 + xs ** 4 / 10.0)
    dvalue[small] = c * eta ** 2 * (-2.0 / 3.0 + 0.4 * xs ** 2 - xs ** 4 / 7.0)
    rl = r[~small]
    xl = x[~small]
    value[~small] = erf(xl) / (4.0 * math.pi * rl)
    dvalue[~small] = (2.0 * eta / math.sqrt(math.pi) * np.exp(-xl ** 2) / rl - erf(xl) / rl ** 2) / (4.0 * math.pi * rl)
    return value, dvalue


def static_lattice_sum(lat: Lattice2D, z: np.ndarray, ew: Optional[EwaldParams] = None,
                       with_gradient: bool = False, remove_singular: bool = False,
                       tol: Optional[float] = None):
    """Static kernel G0 at many separation vectors z (shape (M, 3)), real arithmetic.

    With ``remove_singular`` the free-space part -1/(4 pi |z|) of the R = 0 copy is
    removed, leaving the smooth remainder G0 + 1/(4 pi |z|) (finite at z = 0).
    Returns values, or (values, gradients) when ``with_gradient``.
    """
    ew = ew or EwaldParams()
    if tol is not None:
        ew = EwaldParams(eta=ew.eta, n_spectral=ew.n_spectral, n_spatial=ew.n_spatial, tol=tol)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    m = len(z)
    zp = z[:, :2]
    z3 = z[:, 2]
    extent = float(np.max(np.linalg.norm(zp, axis=1))) if m else 0.0
    eta, xi, lattice = ew.resolve(lat, 0.0, 0.0, extent)
    tau = lat.tau

    values = np.zeros(m)
    grads = np.zeros((m, 3)) if with_gradient else None

    # zero order: (1/2tau)(z erf(z eta) + exp(-z^2 eta^2)/(sqrt(pi) eta))
    values += (z3 * erf(z3 * eta) + np.exp(-(z3 * eta) ** 2) / (math.sqrt(math.pi) * eta)) / (2.0 * tau)
    if with_gradient:
        grads[:, 2] += erf(z3 * eta) / (2.0 * tau)

    for q in _half_plane(xi):
        kappa = float(np.hypot(q[0], q[1]))
        plus, minus = _exp_erfc_pair(np.full(m, kappa), z3, eta)
        arg = zp @ q
        cos_arg = np.cos(arg)
        values -= cos_arg * (plus + minus) / (2.0 * tau * kappa)
        if with_gradient:
            sin_arg = np.sin(arg)
            grads[:, :2] += np.outer(sin_arg * (plus + minus) / (2.0 * tau * kappa), q)
            grads[:, 2] -= cos_arg * (plus - minus) / (2.0 * tau)

    for R in lattice:
        diff = z.copy()
        diff[:, :2] -= R
        r = np.linalg.norm(diff, axis=1)
        is_origin = abs(R[0]) < 1e-12 and abs(R[1]) < 1e-12
        if is_origin and remove_singular:
            smooth, dsmooth = _smooth_radial(r, eta)
            values += smooth
            if with_gradient:
                grads += diff * dsmooth[:, None]
            continue
        if np.any(r < SOURCE_TOL):
            raise SourcePointSingularity("Separation vector coincides with a lattice source")
        x = r * eta
        screened = erfc(x)
        values -= screened / (4.0 * math.pi * r)
        if with_gradient:
            radial = (screened + 2.0 * x / math.sqrt(math.pi) * np.exp(-x ** 2)) / (4.0 * math.pi * r ** 3)
            grads += diff * radial[:, None]

    if with_gradient:
        return values, grads
    return values


def _series_sum(head: complex, terms: np.ndarray) -> complex:
    """Sum terms (sorted by decreasing size) until they fall below SERIES_REL_TOL of the partial sum."""
    if len(terms) == 0:
        return head
    partial = head + np.cumsum(terms)
    large = np.abs(terms) >= SERIES_REL_TOL * np.abs(partial)
    if not np.any(large):
        return head
    last = int(np.nonzero(large)[0][-1]) + 1
    return head + np.sum(terms[:last])


def _evanescent_radius(ctx_kpar_mag: float, z: float) -> float:
    # exp(-40) ~ 4e-18 bounds every dropped term
    return ctx_kpar_mag + 40.0 / z + 1.0


def eval_g_quasi_spectral(lat: Lattice2D, ctx: BlochContext, x, h_min: float = H_MIN_DEFAULT) -> complex:
    """Spectral series: propagating order plus the evanescent orders."""
    return _spectral(lat, ctx, _point(x), h_min, regular=False)


def _spectral(lat: Lattice2D, ctx: BlochContext, x: np.ndarray, h_min: float, regular: bool) -> complex:
    _require_dynamic(ctx)
    z = abs(x[2])
    if z < h_min:
        raise SlowConvergence(
            f"Spectral series needs |x3| >= {h_min}, got {z:.3e}; use the Ewald evaluator",
            x3=x[2], h_min=h_min,
        )
    check_rayleigh(lat, ctx)

    xp = x[:2]
    prefactor = 1j / (2.0 * lat.tau * ctx.k3)
    exponent = 1j * (ctx.kpar @ xp) - 1j * ctx.k3 * z
    head = prefactor * (np.expm1(exponent) if regular else np.exp(exponent))

    radius = _evanescent_radius(float(np.sum(np.abs(ctx.kpar))), z)
    xi = reciprocal_points(lat, radius)[1:]
    kt = xi + ctx.kpar
    kappa = np.sqrt(np.sum(kt * kt, axis=1) - ctx.k ** 2 + 0j)
    terms = -np.exp(1j * (kt @ xp)) * np.exp(-kappa * z) / (2.0 * lat.tau * kappa)
    return complex(_series_sum(head, terms))


def eval_g_quasi_ewald(lat: Lattice2D, ctx: BlochContext, ew: Optional[EwaldParams], x) -> complex:
    """Ewald evaluation, valid for every x3 including the source plane."""
    x = _point(x)
    _require_dynamic(ctx)
    check_rayleigh(lat, ctx)
    _check_sources(lat, x[None, :])
    return complex(ewald_dynamic(lat, ctx, ew or EwaldParams(), x[None, :])[0])


def eval_g_static(lat: Lattice2D, x, h_min: float = H_MIN_DEFAULT, ew: Optional[EwaldParams] = None) -> complex:
    """Static kernel |x3|/(2 tau) - (1/2tau) sum_{xi != 0} e^{i xi.x'} e^{-|xi||x3|}/|xi|."""
    x = _point(x)
    z = abs(x[2])
    if z >= h_min:
        radius = _evanescent_radius(0.0, z)
        xi = _half_plane(reciprocal_points(lat, radius))
        norms = np.linalg.norm(xi, axis=1)
        order = np.argsort(norms, kind="stable")
        xi, norms = xi[order], norms[order]
        terms = -np.cos(xi @ x[:2]) * np.exp(-norms * z) / (lat.tau * norms)
        return complex(_series_sum(z / (2.0 * lat.tau), terms).real)

    _check_sources(lat, x[None, :])
    wrapped, _ = _wrap(lat, x[None, :])
    return complex(static_lattice_sum(lat, wrapped, ew)[0])


def _static_points(lat: Lattice2D, pts: np.ndarray, ew: Optional[EwaldParams]) -> np.ndarray:
    _check_sources(lat, pts)
    wrapped, _ = _wrap(lat, pts)
    return static_lattice_sum(lat, wrapped, ew)


def _image(y: np.ndarray) -> np.ndarray:
    return np.array([y[0], y[1], -y[2]])


def _check_kind(kind: str):
    if kind not in KINDS:
        raise ValueError(f"kind must be 'e' or 'm', got {kind!r}")


def eval_g_halfspace(kind: str, lat: Lattice2D, ctx: Optional[BlochContext], x, y,
                     ew: Optional[EwaldParams] = None) -> complex:
    """Dirichlet (e) or Neumann (m) half-space kernel G(x-y) -/+ G(x-y*).

    ``ctx`` of None or with k = 0 gives the static kernels.
    """
    _check_kind(kind)
    x, y = _point(x), _point(y)
    pts = np.stack([x - y, x - _image(y)])
    if ctx is None or ctx.k == 0:
        direct, image = _static_points(lat, pts, ew)
    else:
        check_rayleigh(lat, ctx)
        _check_sources(lat, pts)
        direct, image = ewald_dynamic(lat, ctx, ew or EwaldParams(), pts)
    sign = -1.0 if kind == "e" else 1.0
    return complex(direct + sign * image)


def eval_g0_leading(kind: str, lat: Lattice2D, d, x, y, ew: Optional[EwaldParams] = None) -> complex:
    """Leading low-frequency term of the half-space kernel.

    e: the static Dirichlet kernel; m: static Neumann kernel minus d'.(x'-y')/(d3 tau).
    """
    _check_kind(kind)
    value = eval_g_halfspace(kind, lat, None, x, y, ew)
    if kind == "e":
        return value
    d = np.asarray(d, dtype=float).reshape(3)
    x, y = _point(x), _point(y)
    return value - (d[:2] @ (x[:2] - y[:2])) / (d[2] * lat.tau)


def eval_g0_conjugate(lat: Lattice2D, d, x, y, ew: Optional[EwaldParams] = None) -> complex:
    """Conjugate Neumann kernel: static Neumann kernel plus d'.(x'-y')/(d3 tau)."""
    d = np.asarray(d, dtype=float).reshape(3)
    x, y = _point(x), _point(y)
    return eval_g_halfspace("m", lat, None, x, y, ew) + (d[:2] @ (x[:2] - y[:2])) / (d[2] * lat.tau)


def extract_expansion_terms(lat: Lattice2D, d, x, n_max: int,
                            deltas: Optional[Sequence[float]] = None,
                            h_min: float = H_MIN_DEFAULT,
                            ew: Optional[EwaldParams] = None) -> np.ndarray:
    """Coefficients [G_-1, G_0, ..., G_n_max] of the small-wavenumber expansion at x.

    G^{dk}(x) = G_-1/(dk) + sum_n (dk)^n G_n(x); the coefficients are fitted on a stencil of
    small wavenumbers after the singular term i/(2 dk3 tau) has been removed analytically.
    """
    if not 0 <= n_max <= 4:
        raise ValueError("n_max must lie in 0..4")
    x = _point(x)
    d = np.asarray(d, dtype=float).reshape(3)
    deltas = np.asarray(deltas if deltas is not None else np.linspace(1e-2, 1e-1, 8), dtype=float)
    degree = min(len(deltas) - 2, max(n_max, 5))
    if degree < n_max:
        raise FitIllConditioned(f"{len(deltas)} stencil points cannot resolve n_max = {n_max}")

    data = np.empty(len(deltas), dtype=complex)
    for i, delta in enumerate(deltas):
        ctx = make_bloch_context(delta, d)
        if abs(x[2]) >= h_min:
            data[i] = _spectral(lat, ctx, x, h_min, regular=True)
        else:
            _check_sources(lat, x[None, :])
            data[i] = ewald_dynamic(lat, ctx, ew or EwaldParams(), x[None, :], regular=True)[0]

    scale = float(np.max(deltas))
    t = deltas / scale
    vander = np.vander(t, degree + 1, increasing=True)
    coeffs, _, rank, singular = np.linalg.lstsq(vander, data, rcond=None)
    residual = float(np.max(np.abs(vander @ coeffs - data)) / max(np.max(np.abs(data)), 1e-300))
    if rank < degree + 1 or residual > 1e-6:
        raise FitIllConditioned(
            f"Expansion fit residual {residual:.3e} (rank {rank}/{degree + 1})",
            residual=residual, rank=int(rank),
        )
    terms = coeffs / scale ** np.arange(degree + 1)
    singular_term = 1j / (2.0 * d[2] * lat.tau)
    return np.concatenate([[singular_term], terms[: n_max + 1]])


def eval_propagating_mode(kind: str, lat: Lattice2D, ctx: BlochContext, x, y) -> complex:
    """Specular part of the half-space kernel; the e-kind image enters with a minus sign."""
    _check_kind(kind)
    _require_dynamic(ctx)
    x, y = _point(x), _point(y)
    prefactor = 1j / (2.0 * lat.tau * ctx.k3) * np.exp(1j * (ctx.kpar @ (x[:2] - y[:2])))
    direct = np.exp(-1j * ctx.k3 * abs(x[2] - y[2]))
    image = np.exp(-1j * ctx.k3 * abs(x[2] + y[2]))
    sign = -1.0 if kind == "e" else 1.0
    return complex(prefactor * (direct + sign * image))


def eval_tensor_gr(ctx: BlochContext, x) -> np.ndarray:
    """Propagative Green's tensor (I - d* d*^T) exp(i k*.x)."""
    x = _point(x)
    projector = np.eye(3) - np.outer(ctx.dstar, ctx.dstar)
    return projector * np.exp(1j * (ctx.kstar @ x))


def image_sum_static_e(lat: Lattice2D, x, y, shells: Sequence[int] = (8, 16, 32, 64)) -> float:
    """Direct image-sum oracle for the static Dirichlet kernel.

    sum_R (-1/(4 pi |x-y-R|) + 1/(4 pi |x-y*-R|)) converges absolutely. Partial sums over the
    parallelogram shells max(|m|, |n|) <= N have a tail expanding in powers of 1/(N + 1/2);
    the shells are extrapolated to N -> infinity by polynomial interpolation in that variable.
    """
    x, y = _point(x), _point(y)
    partial = []
    for n in shells:
        R = shell_points(lat.a1, lat.a2, int(n))
        R3 = np.column_stack([R, np.zeros(len(R))])
        r_direct = np.linalg.norm(x - y - R3, axis=1)
        r_image = np.linalg.norm(x - _image(y) - R3, axis=1)
        partial.append(float(np.sum(-1.0 / r_direct + 1.0 / r_image) / (4.0 * math.pi)))
    h = 1.0 / (np.asarray(shells, dtype=float) + 0.5)
    coeffs = np.polyfit(h, np.asarray(partial), deg=len(shells) - 1)
    return float(np.polyval(coeffs, 0.0))

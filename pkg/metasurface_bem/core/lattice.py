"""
Periodic Lattice

The in-plane lattice of the particle layer, its cell area and the reciprocal lattice with
enumeration utilities. Reciprocal vectors follow a_i . b_j = 2*pi*delta_ij.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..utils.error_handling import DegenerateLattice


@dataclass(frozen=True)
class Lattice2D:
    """Lattice basis, cell area tau and reciprocal basis"""
    a1: np.ndarray
    a2: np.ndarray
    tau: float
    b1: np.ndarray
    b2: np.ndarray

    def vector(self, n1: int, n2: int) -> np.ndarray:
        return n1 * self.a1 + n2 * self.a2

    def fractional(self, xy: np.ndarray) -> np.ndarray:
        """Coordinates (s1, s2) with x' = s1*a1 + s2*a2 (last axis of size 2)."""
        xy = np.asarray(xy, dtype=float)
        basis = np.stack([self.b1, self.b2])
        return xy @ basis.T / (2.0 * math.pi)

    def cell_margin(self, xy: np.ndarray) -> np.ndarray:
        """In-plane distance to the walls of the centred cell |s1|, |s2| < 1/2.

        Negative values mean the point lies outside the cell.
        """
        s = self.fractional(xy)
        heights = np.array([self.tau / np.linalg.norm(self.a2), self.tau / np.linalg.norm(self.a1)])
        return np.min((0.5 - np.abs(s)) * heights, axis=-1)

    def shells_for_radius(self, radius: float, reciprocal: bool = False) -> int:
        """Smallest n such that all points with max(|m|, |n|) > n lie beyond radius."""
        if reciprocal:
            spacing = min(2.0 * math.pi / np.linalg.norm(self.a1), 2.0 * math.pi / np.linalg.norm(self.a2))
        else:
            spacing = min(self.tau / np.linalg.norm(self.a1), self.tau / np.linalg.norm(self.a2))
        return max(1, int(math.ceil(radius / spacing)))


def make_lattice(a1: Sequence[float], a2: Sequence[float]) -> Lattice2D:
    """Build a lattice from two in-plane basis vectors."""
    a1 = np.asarray(a1, dtype=float).reshape(2)
    a2 = np.asarray(a2, dtype=float).reshape(2)
    cross = a1[0] * a2[1] - a1[1] * a2[0]
    if abs(cross) < 1e-12 * np.linalg.norm(a1) * np.linalg.norm(a2) or cross == 0.0:
        raise DegenerateLattice(
            f"Lattice vectors {a1.tolist()} and {a2.tolist()} are linearly dependent",
            a1=a1, a2=a2,
        )

    # b1 is perpendicular to a2 and b2 to a1
    b1 = 2.0 * math.pi * np.array([a2[1], -a2[0]]) / cross
    b2 = 2.0 * math.pi * np.array([-a1[1], a1[0]]) / cross
    return Lattice2D(a1=a1, a2=a2, tau=abs(cross), b1=b1, b2=b2)


def _enumerate(u: np.ndarray, v: np.ndarray, bound_u: float, bound_v: float, radius: float) -> np.ndarray:
    nu = int(math.floor(bound_u)) + 1
    nv = int(math.floor(bound_v)) + 1
    m, n = np.meshgrid(np.arange(-nu, nu + 1), np.arange(-nv, nv + 1), indexing="ij")
    m = m.ravel()
    n = n.ravel()
    points = m[:, None] * u + n[:, None] * v
    norms = np.linalg.norm(points, axis=1)
    keep = norms <= radius * (1.0 + 1e-14)
    points, norms, m, n = points[keep], norms[keep], m[keep], n[keep]
    # ties in |xi| broken lexicographically on (m, n)
    order = np.lexsort((n, m, np.round(norms, 12)))
    return points[order]


def reciprocal_points(lat: Lattice2D, radius: float) -> np.ndarray:
    """All xi = m*b1 + n*b2 with |xi| <= radius, sorted by |xi| (xi = 0 first)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    # xi . a_i = 2*pi*m bounds |m| by radius*|a_i|/(2*pi)
    bound_m = radius * np.linalg.norm(lat.a1) / (2.0 * math.pi)
    bound_n = radius * np.linalg.norm(lat.a2) / (2.0 * math.pi)
    return _enumerate(lat.b1, lat.b2, bound_m, bound_n, radius)


def direct_points(lat: Lattice2D, radius: float) -> np.ndarray:
    """All R = n1*a1 + n2*a2 with |R| <= radius, sorted like reciprocal_points."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    bound_1 = radius * np.linalg.norm(lat.b1) / (2.0 * math.pi)
    bound_2 = radius * np.linalg.norm(lat.b2) / (2.0 * math.pi)
    return _enumerate(lat.a1, lat.a2, bound_1, bound_2, radius)


def shell_points(u: np.ndarray, v: np.ndarray, n_shells: int) -> np.ndarray:
    """Points m*u + n*v with max(|m|, |n|) <= n_shells, sorted by norm."""
    m, n = np.meshgrid(np.arange(-n_shells, n_shells + 1), np.arange(-n_shells, n_shells + 1), indexing="ij")
    m = m.ravel()
    n = n.ravel()
    points = m[:, None] * u + n[:, None] * v
    order = np.lexsort((n, m, np.round(np.linalg.norm(points, axis=1), 12)))
    return points[order]

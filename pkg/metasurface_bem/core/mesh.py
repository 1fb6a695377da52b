"""
Surface Meshes

Closed triangulated particle boundaries placed inside the reference cell, with the centroid
collocation data (centroids, outward normals, panel areas) used by the boundary operators.
Icospheres are built by midpoint subdivision of the icosahedron; ellipsoids are affine images
of the icosphere; arbitrary surfaces are read from Wavefront OBJ files.
"""

import logging
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.error_handling import GeometryOutOfCell, OpenSurface, ParseError
from .lattice import Lattice2D, make_lattice

logger = logging.getLogger(__name__)

PLANE_MARGIN = 0.05
CELL_MARGIN = 0.05
FLUX_TOL = 1e-3
QUADRATURES = ("centroid", "three_point")


@dataclass(frozen=True)
class SurfaceMesh:
    """Closed, outward-oriented triangulation with collocation data"""
    vertices: np.ndarray
    panels: np.ndarray
    centroids: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    enclosed_volume: float
    quadrature: str = "centroid"
    source: str = field(default="generated", compare=False)

    @property
    def n_panels(self) -> int:
        return len(self.panels)

    @property
    def total_area(self) -> float:
        return float(np.sum(self.areas))

    @cached_property
    def panel_vertices(self) -> np.ndarray:
        """Corner coordinates, shape (N, 3, 3), in panel orientation order."""
        return self.vertices[self.panels]

    @cached_property
    def panel_diameters(self) -> np.ndarray:
        corners = self.panel_vertices
        edges = corners - np.roll(corners, -1, axis=1)
        return np.max(np.linalg.norm(edges, axis=2), axis=1)

    @property
    def mesh_size(self) -> float:
        """Largest panel diameter h."""
        return float(np.max(self.panel_diameters))

    def quadrature_rule(self) -> Tuple[np.ndarray, np.ndarray]:
        """Source nodes (N, q, 3) and weights (N, q) of the configured panel rule.

        ``three_point`` is the edge-midpoint rule, exact for quadratics on flat panels.
        """
        if self.quadrature == "three_point":
            corners = self.panel_vertices
            nodes = 0.5 * (corners + np.roll(corners, -1, axis=1))
            weights = np.repeat(self.areas[:, None] / 3.0, 3, axis=1)
            return nodes, weights
        return self.centroids[:, None, :], self.areas[:, None]

    def normal_flux_residual(self) -> float:
        """|sum_i w_i nu_i| relative to the total area (zero on a closed surface)."""
        return float(np.linalg.norm(self.areas @ self.normals) / self.total_area)

    def divergence_volume(self) -> float:
        """sum_i w_i (y_i . nu_i) / 3."""
        return float(np.sum(self.areas * np.einsum("ij,ij->i", self.centroids, self.normals)) / 3.0)

    def moment_tensor(self) -> np.ndarray:
        """sum_i w_i y_i (x) nu_i, equal to |B| I on a closed polyhedron."""
        return (self.centroids * self.areas[:, None]).T @ self.normals

    def winding_number(self, points: np.ndarray) -> np.ndarray:
        """Total solid angle of the surface seen from each point over 4 pi (1 inside, 0 outside)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        corners = self.panel_vertices
        a = corners[None, :, 0, :] - points[:, None, :]
        b = corners[None, :, 1, :] - points[:, None, :]
        c = corners[None, :, 2, :] - points[:, None, :]
        la, lb, lc = (np.linalg.norm(v, axis=2) for v in (a, b, c))
        triple = np.einsum("mjk,mjk->mj", a, np.cross(b, c))
        denom = (la * lb * lc + np.einsum("mjk,mjk->mj", a, b) * lc
                 + np.einsum("mjk,mjk->mj", a, c) * lb + np.einsum("mjk,mjk->mj", b, c) * la)
        return np.sum(2.0 * np.arctan2(triple, denom), axis=1) / (4.0 * np.pi)

    def centroid_distance(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.min(np.linalg.norm(points[:, None, :] - self.centroids[None, :, :], axis=2), axis=1)

    def summary(self) -> Dict[str, Union[int, float, str]]:
        return {
            "panels": self.n_panels,
            "vertices": len(self.vertices),
            "area": round(self.total_area, 12),
            "volume": round(self.enclosed_volume, 12),
            "mesh_size": round(self.mesh_size, 12),
            "quadrature": self.quadrature,
            "source": self.source,
        }


def icosahedron() -> Tuple[np.ndarray, np.ndarray]:
    """Unit icosahedron, faces oriented outward."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    return verts, faces


def subdivide(verts: np.ndarray, faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split every face into four, projecting the new edge midpoints onto the unit sphere."""
    vert_list: List[np.ndarray] = list(verts)
    midpoint_cache: Dict[Tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        if key in midpoint_cache:
            return midpoint_cache[key]
        v = 0.5 * (verts[i] + verts[j])
        vert_list.append(v / np.linalg.norm(v))
        midpoint_cache[key] = len(vert_list) - 1
        return midpoint_cache[key]

    new_faces = []
    for a, b, c in faces:
        ab = midpoint(a, b)
        bc = midpoint(b, c)
        ca = midpoint(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(vert_list, dtype=np.float64), np.array(new_faces, dtype=np.int64)


def unit_icosphere(refinement: int) -> Tuple[np.ndarray, np.ndarray]:
    if refinement < 0 or refinement > 7:
        raise ValueError(f"refinement must lie in 0..7, got {refinement}")
    verts, faces = icosahedron()
    for _ in range(int(refinement)):
        verts, faces = subdivide(verts, faces)
    return verts, faces


def _panel_geometry(vertices: np.ndarray, panels: np.ndarray):
    corners = vertices[panels]
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    double_area = np.linalg.norm(cross, axis=1)
    volume = float(np.sum(np.einsum("ij,ij->i", corners[:, 0], np.cross(corners[:, 1], corners[:, 2])))) / 6.0
    return corners, cross, double_area, volume


def build_mesh(vertices: np.ndarray, panels: np.ndarray, quadrature: str = "centroid",
               source: str = "generated") -> SurfaceMesh:
    """Collocation data for a triangulation; a negatively oriented surface is flipped."""
    if quadrature not in QUADRATURES:
        raise ValueError(f"quadrature must be one of {QUADRATURES}, got {quadrature!r}")
    vertices = np.asarray(vertices, dtype=np.float64)
    panels = np.asarray(panels, dtype=np.int64)
    if panels.ndim != 2 or panels.shape[1] != 3 or len(panels) == 0:
        raise ParseError("A surface mesh needs at least one triangular panel")
    if panels.min() < 0 or panels.max() >= len(vertices):
        raise ParseError("Panel references a vertex that does not exist")

    corners, cross, double_area, volume = _panel_geometry(vertices, panels)
    if np.any(double_area <= 1e-300):
        raise ParseError(f"Mesh from {source} contains zero-area panels", panels=int(np.sum(double_area <= 1e-300)))
    if volume < 0:
        logger.warning(f"Mesh orientation flipped: {json.dumps({'source': source, 'volume': volume})}")
        panels = panels[:, [0, 2, 1]]
        corners, cross, double_area, volume = _panel_geometry(vertices, panels)

    return SurfaceMesh(
        vertices=vertices,
        panels=panels,
        centroids=corners.mean(axis=1),
        normals=cross / double_area[:, None],
        areas=0.5 * double_area,
        enclosed_volume=volume,
        quadrature=quadrature,
        source=source,
    )


def check_closed(mesh: SurfaceMesh):
    """Every edge shared by exactly two consistently oriented panels, and zero normal flux."""
    directed = np.concatenate([mesh.panels[:, [0, 1]], mesh.panels[:, [1, 2]], mesh.panels[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    _, counts = np.unique(undirected, axis=0, return_counts=True)
    if np.any(counts != 2):
        raise OpenSurface(
            f"Surface from {mesh.source} is not closed: {int(np.sum(counts == 1))} boundary edges, "
            f"{int(np.sum(counts > 2))} non-manifold edges"
        )
    if len(np.unique(directed, axis=0)) != len(directed):
        raise OpenSurface(f"Surface from {mesh.source} is not consistently oriented")

    residual = mesh.normal_flux_residual()
    if residual > FLUX_TOL:
        raise OpenSurface(f"Normal flux residual {residual:.3e} exceeds {FLUX_TOL}", residual=residual)


def check_placement(mesh: SurfaceMesh, lat: Lattice2D):
    """Particle above the conducting plane and inside the centred reference cell."""
    lowest = float(np.min(mesh.vertices[:, 2]))
    if lowest < PLANE_MARGIN:
        raise GeometryOutOfCell(
            f"Particle reaches x3 = {lowest:.4g}; it must stay at least {PLANE_MARGIN} above the plane",
            lowest=lowest,
        )
    margin = float(np.min(lat.cell_margin(mesh.vertices[:, :2])))
    if margin < CELL_MARGIN:
        raise GeometryOutOfCell(
            f"Particle comes within {margin:.4g} of the cell walls (minimum {CELL_MARGIN})",
            margin=margin,
        )


def validate_mesh(mesh: SurfaceMesh, lat: Lattice2D) -> SurfaceMesh:
    check_closed(mesh)
    check_placement(mesh, lat)
    logger.info(f"Mesh validated: {json.dumps(mesh.summary())}")
    return mesh


def _default_lattice(lat: Optional[Lattice2D]) -> Lattice2D:
    return lat if lat is not None else make_lattice((1.0, 0.0), (0.0, 1.0))


def make_sphere_mesh(center: Sequence[float], radius: float, refinement: int,
                     lat: Optional[Lattice2D] = None, quadrature: str = "centroid") -> SurfaceMesh:
    """Icosphere with 20 * 4**refinement panels."""
    if not radius > 0:
        raise GeometryOutOfCell(f"Sphere radius must be positive, got {radius}")
    return make_ellipsoid_mesh(center, (radius, radius, radius), refinement, lat, quadrature)


def make_ellipsoid_mesh(center: Sequence[float], semiaxes: Sequence[float], refinement: int,
                        lat: Optional[Lattice2D] = None, quadrature: str = "centroid") -> SurfaceMesh:
    """Affine image of the icosphere; normals come from the mapped panels."""
    center = np.asarray(center, dtype=float).reshape(3)
    semiaxes = np.asarray(semiaxes, dtype=float).reshape(3)
    if np.any(semiaxes <= 0):
        raise GeometryOutOfCell(f"Semi-axes must be positive, got {semiaxes.tolist()}")
    verts, faces = unit_icosphere(refinement)
    mesh = build_mesh(verts * semiaxes + center, faces, quadrature,
                      source=f"ellipsoid{tuple(semiaxes.tolist())}@{tuple(center.tolist())}/r{refinement}")
    return validate_mesh(mesh, _default_lattice(lat))


def _parse_index(token: str, n_vertices: int, line_no: int) -> int:
    head = token.split("/")[0]
    try:
        index = int(head)
    except ValueError:
        raise ParseError(f"Line {line_no}: bad face index {token!r}")
    if index < 0:
        index = n_vertices + index + 1
    if index < 1:
        raise ParseError(f"Line {line_no}: face index {token!r} out of range")
    return index - 1


_IGNORED_OBJ = {"vn", "vt", "vp", "o", "g", "s", "usemtl", "mtllib", "l"}


def load_mesh(path: Union[str, Path], lat: Optional[Lattice2D] = None,
              quadrature: str = "centroid") -> SurfaceMesh:
    """Read a triangles-only Wavefront OBJ file."""
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as e:
        raise ParseError(f"Cannot read mesh file {path}: {e}")

    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        keyword, *fields_ = line.split()
        if keyword == "v":
            if len(fields_) < 3:
                raise ParseError(f"Line {line_no}: vertex needs three coordinates")
            try:
                vertices.append([float(v) for v in fields_[:3]])
            except ValueError:
                raise ParseError(f"Line {line_no}: bad vertex coordinates {fields_[:3]}")
        elif keyword == "f":
            if len(fields_) != 3:
                raise ParseError(f"Line {line_no}: only triangular faces are supported")
            faces.append([_parse_index(tok, len(vertices), line_no) for tok in fields_])
        elif keyword not in _IGNORED_OBJ:
            raise ParseError(f"Line {line_no}: unrecognised OBJ statement {keyword!r}")

    if not vertices or not faces:
        raise ParseError(f"{path} holds no triangulated surface")

    mesh = build_mesh(np.array(vertices), np.array(faces), quadrature, source=str(path))
    return validate_mesh(mesh, _default_lattice(lat))


def export_mesh(mesh: SurfaceMesh, path: Union[str, Path]) -> Path:
    """Write the mesh as OBJ (1-based indices, full double precision)."""
    path = Path(path)
    lines = [f"# {mesh.n_panels} panels, enclosed volume {mesh.enclosed_volume:.17g}"]
    lines += ["v %.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(p + 1) for p in mesh.panels]
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Mesh exported: {json.dumps({'path': str(path), 'panels': mesh.n_panels})}")
    return path


def mesh_from_config(geometry, lat: Lattice2D) -> SurfaceMesh:
    """Build the particle surface described by a GeometryConfig section."""
    quadrature = getattr(geometry, "quadrature", "centroid")
    if geometry.shape == "sphere":
        return make_sphere_mesh(geometry.center, geometry.radius, geometry.refinement, lat, quadrature)
    if geometry.shape == "ellipsoid":
        return make_ellipsoid_mesh(geometry.center, geometry.semiaxes, geometry.refinement, lat, quadrature)
    if geometry.shape == "obj":
        if not geometry.path:
            raise ParseError("geometry.path is required for shape 'obj'")
        return load_mesh(geometry.path, lat, quadrature)
    raise ParseError(f"Unknown geometry shape {geometry.shape!r}")

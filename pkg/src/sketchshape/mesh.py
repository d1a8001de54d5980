"""Triangle meshes: iso-surface extraction, surface sampling, OBJ round trip.

Meshes are extracted on a regular grid over [-1.2, 1.2]^3; shapes are
unit-cube normalized so the margin keeps surfaces away from the grid
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .gmm import ShapeGMM, occupancy

__all__ = [
    "TriMesh",
    "EmptyMeshError",
    "GRID_MIN",
    "GRID_MAX",
    "DEFAULT_RESOLUTION",
    "DEFAULT_ISO",
    "extract_mesh",
    "sample_surface",
    "mesh_volume",
    "euler_characteristic",
    "is_watertight",
    "mesh_to_obj",
    "mesh_from_obj",
]

GRID_MIN = -1.2
GRID_MAX = 1.2
DEFAULT_RESOLUTION = 48
DEFAULT_ISO = 0.5


class EmptyMeshError(ValueError):
    """Operation requires a non-empty mesh."""


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh with consistent outward orientation."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        verts.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if len(tris) and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("triangle indices out of range")
        if len(tris):
            areas = self.triangle_areas()
            if areas.min() <= 1e-12:
                raise ValueError(f"degenerate triangle with area {areas.min()}")

    @staticmethod
    def empty() -> "TriMesh":
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def extract_mesh(
    shape: ShapeGMM,
    resolution: int = DEFAULT_RESOLUTION,
    iso: float = DEFAULT_ISO,
) -> TriMesh:
    """Marching cubes over the occupancy field; empty fields give an empty mesh."""
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    if not (0.0 < iso < 1.0):
        raise ValueError(f"iso must be in (0, 1), got {iso}")
    lin = np.linspace(GRID_MIN, GRID_MAX, resolution)
    xs, ys, zs = np.meshgrid(lin, lin, lin, indexing="ij")
    pts = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    field = occupancy(shape, pts).reshape(resolution, resolution, resolution)
    if field.max() <= iso or field.min() >= iso:
        return TriMesh.empty()
    spacing = (GRID_MAX - GRID_MIN) / (resolution - 1)
    verts, faces, _, _ = measure.marching_cubes(field, iso, spacing=(spacing,) * 3)
    verts = verts + GRID_MIN
    mesh = TriMesh(verts, faces)
    # Orient outward: positive enclosed volume under the divergence theorem.
    if mesh_volume(mesh) < 0:
        mesh = TriMesh(verts, faces[:, [0, 2, 1]])
    return mesh


def sample_surface(mesh: TriMesh, n: int = 2048, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform surface samples, deterministic for a given seed."""
    if mesh.is_empty:
        raise EmptyMeshError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    cumulative = np.cumsum(areas)
    picks = np.searchsorted(cumulative, rng.random(n) * cumulative[-1], side="right")
    picks = np.minimum(picks, len(areas) - 1)
    tri = mesh.triangles[picks]
    a = mesh.vertices[tri[:, 0]]
    b = mesh.vertices[tri[:, 1]]
    c = mesh.vertices[tri[:, 2]]
    u = rng.random((n, 1))
    v = rng.random((n, 1))
    flip = (u + v) > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    return a + u * (b - a) + v * (c - a)


def mesh_volume(mesh: TriMesh) -> float:
    """Signed enclosed volume; positive for outward-oriented closed meshes."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def _edge_counts(mesh: TriMesh) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for tri in mesh.triangles:
        i, j, k = sorted(int(v) for v in tri)
        for e in ((i, j), (j, k), (i, k)):
            counts[e] = counts.get(e, 0) + 1
    return counts


def euler_characteristic(mesh: TriMesh) -> int:
    edges = _edge_counts(mesh)
    return len(mesh.vertices) - len(edges) + len(mesh.triangles)


def is_watertight(mesh: TriMesh) -> bool:
    """True when every edge is shared by exactly two triangles."""
    if mesh.is_empty:
        return False
    return all(c == 2 for c in _edge_counts(mesh).values())


def mesh_to_obj(mesh: TriMesh) -> str:
    lines = [f"v {v[0]} {v[1]} {v[2]}" for v in mesh.vertices]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    return "\n".join(lines) + "\n" if lines else ""


def mesh_from_obj(text: str) -> TriMesh:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:4]])
    if not verts:
        return TriMesh.empty()
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))

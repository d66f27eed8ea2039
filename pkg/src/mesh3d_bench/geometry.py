"""Mesh and point-cloud data model, OBJ I/O, normalization and surface sampling.

All coordinates are dimensionless model units. Metrics downstream are defined
in the normalized frame produced by :func:`normalize_to_unit_cube`: the
axis-aligned bounding box has longest side 1.0 and is centered at the origin.
"""

import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import trimesh
from scipy.spatial import cKDTree

from .errors import DegenerateExtent, DegenerateMesh, ParseError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Triangles below this area are kept but never sampled or used for normals.
DEGENERATE_AREA = 1e-14

_FACE_RECORD = re.compile(r"^[ \t]*f[ \t]+([^#\n]*)", re.MULTILINE)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``.

    Philox keeps draws for a given key independent of how many other
    streams are in flight, so results do not depend on scheduling.
    """
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)])
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True, eq=False)
class Aabb:
    """Axis-aligned bounding box."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    def contains(self, other: "Aabb") -> bool:
        return bool(np.all(self.min <= other.min) and np.all(other.max <= self.max))

    @classmethod
    def cube(cls, half_extent: float, center: Tuple[float, float, float] = (0, 0, 0)):
        c = np.asarray(center, dtype=np.float64)
        return cls(c - half_extent, c + half_extent)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle soup.

    ``vertices`` is (V, 3) float64 and ``faces`` is (F, 3) int64. An empty
    mesh (no faces) is representable; consumers check :attr:`is_empty`.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ValueError(
                f"face index out of range for {len(vertices)} vertices"
            )
        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    @cached_property
    def triangles(self) -> np.ndarray:
        """(F, 3, 3) vertex positions per face."""
        return self.vertices[self.faces]

    @cached_property
    def face_areas(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(0)
        return trimesh.triangles.area(self.triangles)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit face normals; zero rows for degenerate faces."""
        normals = np.zeros((len(self.faces), 3))
        valid = self.valid_faces
        if valid.any():
            unit, ok = trimesh.triangles.normals(self.triangles[valid])
            idx = np.flatnonzero(valid)[ok]
            normals[idx] = unit
        return normals

    @cached_property
    def valid_faces(self) -> np.ndarray:
        return self.face_areas >= DEGENERATE_AREA

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def bounds(self) -> Aabb:
        if len(self.vertices) == 0:
            raise DegenerateExtent("mesh has no vertices")
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def transformed(self, scale: float, translation: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(self.vertices * scale + translation, self.faces)

    def edge_incidence(self) -> np.ndarray:
        """Number of faces incident to each undirected edge."""
        if self.is_empty:
            return np.zeros(0, dtype=np.int64)
        edges = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return counts

    @property
    def is_closed(self) -> bool:
        counts = self.edge_incidence()
        return len(counts) > 0 and bool(np.all(counts == 2))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Surface samples with optional unit normals."""

    positions: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        if self.normals is not None:
            normals = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(positions):
                raise ValueError("normals and positions differ in length")
            lengths = np.linalg.norm(normals, axis=1)
            if len(lengths) and np.max(np.abs(lengths - 1.0)) > 1e-6:
                raise ValueError("point normals must have unit length")
            normals.setflags(write=False)
            object.__setattr__(self, "normals", normals)

    def __len__(self) -> int:
        return len(self.positions)

    @cached_property
    def tree(self) -> cKDTree:
        """Nearest-neighbor index over the positions, built once per cloud."""
        return cKDTree(self.positions)

    def scaled(self, factor: float) -> "PointCloud":
        return PointCloud(self.positions * factor, self.normals)


@dataclass(frozen=True, eq=False)
class Transform:
    """Uniform scale followed by translation: ``x' = scale * x + translation``."""

    scale: float
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) * self.scale + self.translation


def load_mesh(path: PathLike) -> TriangleMesh:
    """Read an OBJ file through trimesh without merging or reordering vertices.

    Polygons come back triangulated. Reader failures and faces that index
    missing vertices are reported as :class:`ParseError`; a file without face
    records is an empty mesh.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8", errors="replace")
    records = _FACE_RECORD.findall(text)
    if not records:
        logger.warning(f"EmptyMesh: {path} has no faces")
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    # an n-gon record fans into n - 2 triangles
    expected = sum(max(len(r.split()) - 2, 0) for r in records)

    try:
        loaded = trimesh.load(
            str(path), file_type="obj", force="mesh", process=False, maintain_order=True
        )
        vertices = np.asarray(loaded.vertices, dtype=np.float64)
        faces = np.asarray(loaded.faces, dtype=np.int64).reshape(-1, 3)
    except Exception as e:
        raise ParseError(f"{path}: unreadable OBJ: {e}", details={"path": str(path)}) from e
    if len(faces) != expected:
        raise ParseError(
            f"{path}: {expected} triangles in face records but {len(faces)} were read",
            details={"path": str(path), "expected": expected, "read": len(faces)},
        )

    try:
        mesh = TriangleMesh(vertices, faces)
    except ValueError as e:
        raise ParseError(
            f"{path}: {e}", details={"path": str(path), "vertices": len(vertices)}
        ) from e
    if mesh.is_empty:
        logger.warning(f"EmptyMesh: {path} has no faces")
    return mesh


def write_mesh(mesh: TriangleMesh, path: PathLike) -> Path:
    """Write ``v`` and ``f`` records with 9 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def normalize_to_unit_cube(mesh: TriangleMesh) -> Tuple[TriangleMesh, Transform]:
    """Center the bounding box at the origin and scale its longest side to 1."""
    if len(mesh.vertices) == 0:
        raise DegenerateExtent("cannot normalize a mesh without vertices")
    bounds = mesh.bounds
    longest = float(bounds.extent.max())
    if longest <= 0.0:
        raise DegenerateExtent(
            "all vertices coincide", details={"vertex": bounds.min.tolist()}
        )
    scale = 1.0 / longest
    translation = -bounds.center * scale
    transform = Transform(scale=scale, translation=translation)
    return mesh.transformed(scale, translation), transform


def sample_surface(
    mesh: TriangleMesh, n: int, seed: int, stream: int = 0
) -> PointCloud:
    """Area-weighted uniform samples with face normals.

    Faces are picked by inverse-CDF lookup on cumulative area, positions use
    the square-root barycentric mapping so they are uniform in each triangle.
    """
    if n < 1:
        raise ValueError("sample count must be at least 1")
    areas = np.where(mesh.valid_faces, mesh.face_areas, 0.0)
    total = float(areas.sum())
    if total <= 0.0:
        raise DegenerateMesh("mesh has zero surface area")

    rng = make_rng(seed, stream)
    cumulative = np.cumsum(areas)
    picks = rng.random(n) * cumulative[-1]
    face_index = np.searchsorted(cumulative, picks, side="right")
    face_index = np.minimum(face_index, len(areas) - 1)

    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.triangles[face_index]
    positions = (
        (1.0 - r1)[:, None] * tri[:, 0]
        + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return PointCloud(positions, mesh.face_normals[face_index])


def load_cloud(path: PathLike, samples: int, seed: int, normalize: bool = False) -> PointCloud:
    """Load a point cloud from ``.npy`` or sample one from an ``.obj`` mesh.

    ``normalize`` applies to meshes only; stored clouds are used as they are.
    """
    path = Path(path)
    if path.suffix.lower() == ".npy":
        array = np.load(path)
        if array.ndim != 2 or array.shape[1] not in (3, 6):
            raise ParseError(
                f"{path}: expected an (n,3) or (n,6) array, got {array.shape}",
                details={"path": str(path)},
            )
        normals = array[:, 3:6] if array.shape[1] == 6 else None
        return PointCloud(array[:, :3], normals)
    mesh = load_mesh(path)
    if normalize:
        mesh, _ = normalize_to_unit_cube(mesh)
    return sample_surface(mesh, samples, seed)

"""Mesh to voxel labels and truncated signed distance grids.

The flood-fill pipeline runs in four barrier-separated passes over the grid:

1. mark every voxel whose box overlaps a triangle as Surface
2. flood Outside from the grid corners through face-adjacent non-Surface voxels
3. relabel Surface voxels that have no Outside voxel in their 26-neighborhood
4. label everything still Unlabeled as Inside

Surface voxels then take their sign from the plane through the closest mesh
point whose normal is the sum of offsets to the Outside neighbors. The naive
baseline instead counts ray crossings along +x from each voxel center.

Arrays are indexed ``[x, y, z]``.
"""

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import (
    CornerIsSurface,
    DomainTooTight,
    GridFormatError,
    InvalidGridSpec,
    NoOutsideNeighbor,
)
from .geometry import Aabb, TriangleMesh
from .spatial import SpatialIndex, ray_parity

logger = logging.getLogger(__name__)

DEFAULT_HALF_EXTENT = 0.75
DEFAULT_CUTOFF = 0.2
MIN_RESOLUTION = 8

GRID_MAGIC = b"SDFG"
GRID_VERSION = 1
GRID_HEADER = struct.Struct("<4sII6dBd")

# pair budget per vectorized triangle-box batch
_OVERLAP_BATCH = 1 << 21
# keeps the sign of inside voxels whose center lies exactly on the surface
_INSIDE_EPS = 1e-30

_FACE_NEIGHBORS = ndimage.generate_binary_structure(3, 1)
_ALL_NEIGHBORS = np.ones((3, 3, 3), dtype=bool)


class VoxelLabel(IntEnum):
    UNLABELED = 0
    SURFACE = 1
    OUTSIDE = 2
    INSIDE = 3


class SignMethod(str, Enum):
    FLOOD_FILL = "flood_fill"
    RAYCAST_PARITY = "raycast_parity"


class GridKind(IntEnum):
    SDF = 0
    OCCUPANCY = 1


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Cubic voxel grid; voxel ``i`` has center ``domain.min + (i + 0.5) * voxel_size``."""

    resolution: int
    domain: Aabb = field(default_factory=lambda: Aabb.cube(DEFAULT_HALF_EXTENT))

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < MIN_RESOLUTION:
            raise InvalidGridSpec(
                f"resolution must be an integer >= {MIN_RESOLUTION}, got {self.resolution}",
                details={"resolution": self.resolution},
            )
        object.__setattr__(self, "resolution", int(self.resolution))
        extent = self.domain.extent
        if extent[0] <= 0.0 or not np.allclose(extent, extent[0], rtol=1e-12, atol=0.0):
            raise InvalidGridSpec(
                "grid domain must be a non-empty cube",
                details={"min": self.domain.min.tolist(), "max": self.domain.max.tolist()},
            )

    @classmethod
    def default(cls, resolution: int) -> "GridSpec":
        return cls(resolution, Aabb.cube(DEFAULT_HALF_EXTENT))

    @property
    def shape(self) -> Tuple[int, int, int]:
        n = self.resolution
        return (n, n, n)

    @property
    def voxel_size(self) -> float:
        return float(self.domain.extent[0]) / self.resolution

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.domain.min[axis] + (np.arange(self.resolution) + 0.5) * self.voxel_size

    def center(self, voxel: Tuple[int, int, int]) -> np.ndarray:
        return self.domain.min + (np.asarray(voxel, dtype=np.float64) + 0.5) * self.voxel_size

    def centers(self, voxels: Optional[np.ndarray] = None) -> np.ndarray:
        """Centers of the given ``(k, 3)`` voxel indices, or of every voxel in x-fastest order."""
        if voxels is None:
            n = self.resolution
            z, y, x = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
            voxels = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
        return self.domain.min + (np.asarray(voxels, dtype=np.float64) + 0.5) * self.voxel_size


@dataclass(frozen=True, eq=False)
class VoxelLabelGrid:
    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.uint8)
        if labels.shape != self.spec.shape:
            raise InvalidGridSpec(
                f"label array shape {labels.shape} does not match {self.spec.shape}"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def unlabeled(cls, spec: GridSpec) -> "VoxelLabelGrid":
        return cls(spec, np.zeros(spec.shape, dtype=np.uint8))

    def mask(self, label: VoxelLabel) -> np.ndarray:
        return self.labels == label

    def replace(self, labels: np.ndarray) -> "VoxelLabelGrid":
        return VoxelLabelGrid(self.spec, labels)

    def counts(self) -> dict:
        values = np.bincount(self.labels.ravel(), minlength=len(VoxelLabel))
        return {label.name.lower(): int(values[label]) for label in VoxelLabel}


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """Truncated SDF (``kind=SDF``, values in ``[-cutoff, cutoff]``) or 0/1 occupancy."""

    spec: GridSpec
    values: np.ndarray
    kind: GridKind = GridKind.SDF
    cutoff: float = DEFAULT_CUTOFF

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.spec.shape:
            raise InvalidGridSpec(
                f"value array shape {values.shape} does not match {self.spec.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", GridKind(self.kind))
        if self.kind == GridKind.OCCUPANCY:
            object.__setattr__(self, "cutoff", 0.0)


@dataclass(frozen=True, eq=False)
class SignField:
    """Per-voxel signs (+1 outside, -1 inside) with the labels that produced them."""

    signs: np.ndarray
    labels: Optional[VoxelLabelGrid] = None


# Step 1: surface voxels


def _triangle_box_overlap(
    tris: np.ndarray, centers: np.ndarray, half: float
) -> np.ndarray:
    """Separating-axis test between triangles and cubes; touching counts as overlap."""
    v = tris - centers[:, None, :]
    edges = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1)
    overlap = np.ones(len(tris), dtype=bool)

    for k in range(3):
        lo = v[:, :, k].min(axis=1)
        hi = v[:, :, k].max(axis=1)
        overlap &= (lo <= half) & (hi >= -half)

    for k in range(3):
        axis_k = np.eye(3)[k]
        for j in range(3):
            a = np.cross(axis_k, edges[:, j])
            p = np.einsum("ijk,ik->ij", v, a)
            r = half * np.abs(a).sum(axis=1)
            overlap &= (p.min(axis=1) <= r) & (p.max(axis=1) >= -r)

    normal = np.cross(edges[:, 0], edges[:, 1])
    d = np.einsum("ij,ij->i", normal, v[:, 0])
    r = half * np.abs(normal).sum(axis=1)
    overlap &= np.abs(d) <= r
    return overlap


def mark_surface_voxels(mesh: TriangleMesh, spec: GridSpec) -> VoxelLabelGrid:
    """Label every voxel whose box overlaps at least one triangle as Surface."""
    labels = np.zeros(spec.shape, dtype=np.uint8)
    if mesh.is_empty:
        return VoxelLabelGrid(spec, labels)

    n = spec.resolution
    h = spec.voxel_size
    dmin = spec.domain.min
    used = mesh.vertices[np.unique(mesh.faces)]
    bounds = Aabb(used.min(axis=0), used.max(axis=0))
    if not spec.domain.contains(bounds):
        raise DomainTooTight(
            "mesh extends outside the grid domain",
            details={"mesh_min": bounds.min.tolist(), "mesh_max": bounds.max.tolist()},
        )

    tris = mesh.triangles
    lo = np.clip(np.ceil((tris.min(axis=1) - dmin) / h) - 1, 0, n - 1).astype(np.int64)
    hi = np.clip(np.floor((tris.max(axis=1) - dmin) / h), 0, n - 1).astype(np.int64)
    sizes = hi - lo + 1
    counts = sizes.prod(axis=1)

    start = 0
    while start < len(tris):
        stop = start + 1
        budget = counts[start]
        while stop < len(tris) and budget + counts[stop] <= _OVERLAP_BATCH:
            budget += counts[stop]
            stop += 1
        _mark_batch(labels, spec, tris[start:stop], lo[start:stop], sizes[start:stop], counts[start:stop])
        start = stop

    surface = labels == VoxelLabel.SURFACE
    shell = (
        surface[0].any() or surface[-1].any()
        or surface[:, 0].any() or surface[:, -1].any()
        or surface[:, :, 0].any() or surface[:, :, -1].any()
    )
    if shell:
        raise DomainTooTight(
            "mesh touches the outermost voxel shell",
            details={"resolution": n, "domain_min": dmin.tolist()},
        )
    logger.debug(f"marked {int(surface.sum())} surface voxels at N={n}")
    return VoxelLabelGrid(spec, labels)


def _mark_batch(labels, spec, tris, lo, sizes, counts) -> None:
    total = int(counts.sum())
    tri_idx = np.repeat(np.arange(len(tris)), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    ny = sizes[tri_idx, 1]
    nz = sizes[tri_idx, 2]
    ix = lo[tri_idx, 0] + offsets // (ny * nz)
    rem = offsets % (ny * nz)
    iy = lo[tri_idx, 1] + rem // nz
    iz = lo[tri_idx, 2] + rem % nz
    voxels = np.stack([ix, iy, iz], axis=1)
    hit = _triangle_box_overlap(tris[tri_idx], spec.centers(voxels), 0.5 * spec.voxel_size)
    labels[ix[hit], iy[hit], iz[hit]] = VoxelLabel.SURFACE


# Step 2: flood fill


def _corners(n: int):
    last = n - 1
    return [(x, y, z) for x in (0, last) for y in (0, last) for z in (0, last)]


def flood_fill_outside(labels: VoxelLabelGrid) -> VoxelLabelGrid:
    """Mark every Unlabeled voxel 6-connected to a corner as Outside."""
    grid = labels.labels
    if grid[0, 0, 0] == VoxelLabel.SURFACE:
        raise CornerIsSurface("flood-fill seed corner (0, 0, 0) is a surface voxel")

    passable = (grid == VoxelLabel.UNLABELED) | (grid == VoxelLabel.OUTSIDE)
    components, _ = ndimage.label(passable, structure=_FACE_NEIGHBORS)
    seeds = {int(components[c]) for c in _corners(labels.spec.resolution)} - {0}
    reached = np.isin(components, list(seeds))

    out = grid.copy()
    out[reached & (grid == VoxelLabel.UNLABELED)] = VoxelLabel.OUTSIDE
    return labels.replace(out)


# Step 3: interior surface removal


def _outside_neighbor(outside: np.ndarray) -> np.ndarray:
    """True where the voxel or one of its 26 neighbors is Outside."""
    return ndimage.binary_dilation(outside, structure=_ALL_NEIGHBORS)


def remove_interior_surface_voxels(labels: VoxelLabelGrid) -> VoxelLabelGrid:
    """Relabel Surface voxels without an Outside 26-neighbor as Unlabeled."""
    grid = labels.labels
    surface = grid == VoxelLabel.SURFACE
    if not surface.any():
        return labels
    orphan = surface & ~_outside_neighbor(grid == VoxelLabel.OUTSIDE)
    if not orphan.any():
        return labels
    out = grid.copy()
    out[orphan] = VoxelLabel.UNLABELED
    logger.debug(f"removed {int(orphan.sum())} interior surface voxels")
    return labels.replace(out)


# Step 4: inside


def label_inside(labels: VoxelLabelGrid) -> VoxelLabelGrid:
    out = labels.labels.copy()
    out[out == VoxelLabel.UNLABELED] = VoxelLabel.INSIDE
    return labels.replace(out)


def label_voxels(mesh: TriangleMesh, spec: GridSpec) -> VoxelLabelGrid:
    """Run the four labeling passes in order."""
    labels = mark_surface_voxels(mesh, spec)
    labels = flood_fill_outside(labels)
    labels = remove_interior_surface_voxels(labels)
    return label_inside(labels)


# Step 5: surface voxel signs


def _outside_offset_sums(labels: VoxelLabelGrid) -> np.ndarray:
    """Per voxel, sum of offsets (in voxel units) to Outside 26-neighbors; shape (N, N, N, 3)."""
    outside = labels.mask(VoxelLabel.OUTSIDE).astype(np.float64)
    offsets = np.indices((3, 3, 3)) - 1
    sums = np.empty(labels.spec.shape + (3,))
    for axis in range(3):
        sums[..., axis] = ndimage.correlate(
            outside, offsets[axis].astype(np.float64), mode="constant", cval=0.0
        )
    return sums


def _plane_sign(center: np.ndarray, closest: np.ndarray, normal: np.ndarray) -> np.ndarray:
    side = np.einsum("ij,ij->i", center - closest, normal)
    return np.where(side > 0.0, 1, -1).astype(np.int8)


def sign_surface_voxel(
    labels: VoxelLabelGrid, index: SpatialIndex, voxel: Tuple[int, int, int]
) -> int:
    """Sign of one Surface voxel from the plane at its closest mesh point.

    The plane normal is the sum of offsets from the voxel center to its
    Outside neighbors. Positive side means outside; a zero dot product is
    inside.
    """
    voxel = tuple(int(i) for i in voxel)
    spec = labels.spec
    if labels.labels[voxel] != VoxelLabel.SURFACE:
        raise ValueError(f"voxel {voxel} is not a surface voxel")
    n = spec.resolution
    normal = np.zeros(3)
    found = False
    for offset in np.ndindex(3, 3, 3):
        d = np.asarray(offset) - 1
        nb = np.asarray(voxel) + d
        if not d.any() or np.any(nb < 0) or np.any(nb >= n):
            continue
        if labels.labels[tuple(nb)] == VoxelLabel.OUTSIDE:
            normal += d
            found = True
    if not found:
        raise NoOutsideNeighbor(
            f"surface voxel {voxel} has no outside neighbor", details={"voxel": list(voxel)}
        )
    normal *= spec.voxel_size
    center = spec.center(voxel)
    closest = index.closest_points(center[None, :]).points
    return int(_plane_sign(center[None, :], closest, normal[None, :])[0])


def _flood_fill_signs(
    mesh: TriangleMesh, spec: GridSpec, index: SpatialIndex, jobs: int
) -> Tuple[SignField, np.ndarray, np.ndarray]:
    labels = label_voxels(mesh, spec)
    signs = np.where(labels.labels == VoxelLabel.INSIDE, -1, 1).astype(np.int8)

    surface = np.argwhere(labels.labels == VoxelLabel.SURFACE)
    if len(surface) == 0:
        return SignField(signs, labels), surface, np.zeros(0)
    sums = _outside_offset_sums(labels)[tuple(surface.T)]
    lonely = ~sums.any(axis=1)
    if lonely.any():
        outside_nb = _outside_neighbor(labels.mask(VoxelLabel.OUTSIDE))
        bad = lonely & ~outside_nb[tuple(surface.T)]
        if bad.any():
            voxel = surface[np.flatnonzero(bad)[0]].tolist()
            raise NoOutsideNeighbor(
                f"surface voxel {voxel} has no outside neighbor", details={"voxel": voxel}
            )
    centers = spec.centers(surface)
    closest = index.closest_points(centers, jobs=jobs)
    signs[tuple(surface.T)] = _plane_sign(centers, closest.points, sums * spec.voxel_size)
    return SignField(signs, labels), surface, closest.distances


def _parity_signs(mesh: TriangleMesh, spec: GridSpec, index: SpatialIndex) -> SignField:
    """Odd crossing count along +x from the voxel center means inside."""
    n = spec.resolution
    h = spec.voxel_size
    xs = spec.axis_centers(0)
    ys = spec.axis_centers(1)
    zs = spec.axis_centers(2)
    start_x = spec.domain.min[0] - h
    direction = np.array([1.0, 0.0, 0.0])
    signs = np.ones(spec.shape, dtype=np.int8)
    for j in range(n):
        for k in range(n):
            t, origin = ray_parity(index, (start_x, ys[j], zs[k]), direction, 1e-7 * h)
            if len(t) == 0:
                continue
            hit_x = origin[0] + t
            after = len(hit_x) - np.searchsorted(hit_x, xs, side="left")
            signs[after % 2 == 1, j, k] = -1
    return SignField(signs)


def sign_field(
    mesh: TriangleMesh,
    spec: GridSpec,
    method: SignMethod = SignMethod.FLOOD_FILL,
    index: Optional[SpatialIndex] = None,
) -> SignField:
    """Per-voxel inside/outside signs without distances."""
    index = index or SpatialIndex(mesh)
    if SignMethod(method) == SignMethod.FLOOD_FILL:
        return _flood_fill_signs(mesh, spec, index, 1)[0]
    return _parity_signs(mesh, spec, index)


# Grids


def _empty_mesh(mesh: TriangleMesh) -> bool:
    return mesh.is_empty or not mesh.valid_faces.any()


def compute_sdf(
    mesh: TriangleMesh,
    spec: GridSpec,
    method: SignMethod = SignMethod.FLOOD_FILL,
    cutoff: float = DEFAULT_CUTOFF,
    jobs: int = 1,
) -> ScalarGrid:
    """Truncated signed distance at every voxel center.

    Distances are exact closest-point distances, clamped to ``[-cutoff, cutoff]``.
    """
    if cutoff <= 0.0:
        raise InvalidGridSpec("cutoff must be positive", details={"cutoff": cutoff})
    if _empty_mesh(mesh):
        logger.warning("EmptyMesh: SDF of a mesh without faces is +cutoff everywhere")
        return ScalarGrid(spec, np.full(spec.shape, cutoff), GridKind.SDF, cutoff)

    method = SignMethod(method)
    index = SpatialIndex(mesh)
    distances = np.full(spec.shape, cutoff)

    if method == SignMethod.FLOOD_FILL:
        field_, surface, surface_dist = _flood_fill_signs(mesh, spec, index, jobs)
        rest = np.ones(spec.shape, dtype=bool)
        if len(surface):
            rest[tuple(surface.T)] = False
            distances[tuple(surface.T)] = surface_dist
    else:
        field_ = _parity_signs(mesh, spec, index)
        rest = np.ones(spec.shape, dtype=bool)

    voxels = np.argwhere(rest)
    bounded = index.closest_points(spec.centers(voxels), max_distance=cutoff, jobs=jobs)
    distances[tuple(voxels.T)] = np.minimum(bounded.distances, cutoff)

    signs = field_.signs.astype(np.float64)
    values = np.clip(signs * distances, -cutoff, cutoff)
    values[(signs < 0) & (values == 0.0)] = -_INSIDE_EPS
    logger.debug(
        f"SDF at N={spec.resolution} ({method.value}): "
        f"{int((signs < 0).sum())} inside voxels"
    )
    return ScalarGrid(spec, values, GridKind.SDF, cutoff)


def occupancy_grid(
    mesh: TriangleMesh, spec: GridSpec, method: SignMethod = SignMethod.FLOOD_FILL
) -> ScalarGrid:
    """1 where the voxel center is inside, 0 elsewhere."""
    if _empty_mesh(mesh):
        logger.warning("EmptyMesh: occupancy of a mesh without faces is all zeros")
        return ScalarGrid(spec, np.zeros(spec.shape), GridKind.OCCUPANCY)
    signs = sign_field(mesh, spec, method).signs
    return ScalarGrid(spec, (signs < 0).astype(np.float64), GridKind.OCCUPANCY)


def write_grid(grid: ScalarGrid, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = grid.spec
    header = GRID_HEADER.pack(
        GRID_MAGIC,
        GRID_VERSION,
        spec.resolution,
        *spec.domain.min.tolist(),
        *spec.domain.max.tolist(),
        int(grid.kind),
        float(grid.cutoff),
    )
    body = grid.values.astype("<f4").ravel(order="F").tobytes()
    path.write_bytes(header + body)
    return path


def read_grid(path: Union[str, Path]) -> ScalarGrid:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < GRID_HEADER.size:
        raise GridFormatError(f"{path}: truncated header", details={"path": str(path)})
    magic, version, n, *rest = GRID_HEADER.unpack_from(data)
    bounds, kind, cutoff = rest[:6], rest[6], rest[7]
    if magic != GRID_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}", details={"path": str(path)})
    if version != GRID_VERSION:
        raise GridFormatError(
            f"{path}: unsupported version {version}", details={"path": str(path), "version": version}
        )
    if kind not in (GridKind.SDF, GridKind.OCCUPANCY):
        raise GridFormatError(f"{path}: unknown grid kind {kind}", details={"path": str(path)})
    expected = GRID_HEADER.size + 4 * n**3
    if len(data) != expected:
        raise GridFormatError(
            f"{path}: expected {expected} bytes, found {len(data)}",
            details={"path": str(path), "expected": expected, "found": len(data)},
        )
    try:
        spec = GridSpec(n, Aabb(bounds[:3], bounds[3:]))
    except (InvalidGridSpec, ValueError) as e:
        raise GridFormatError(f"{path}: invalid grid header: {e}", details={"path": str(path)})
    values = np.frombuffer(data, dtype="<f4", offset=GRID_HEADER.size)
    values = values.reshape(spec.shape, order="F").astype(np.float64)
    return ScalarGrid(spec, values, GridKind(kind), cutoff)

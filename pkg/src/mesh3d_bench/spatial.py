"""Spatial queries over one triangle mesh: closest point and ray casting.

The index answers closest-point queries exactly. It bounds the answer from
above with the nearest mesh vertex, gathers candidate triangles whose
centroid lies within that bound plus the largest triangle radius, prunes
them with per-triangle bounding boxes, and evaluates exact point-triangle
distances only on the survivors. Meshes with few faces skip the centroid
tree and prune all faces by bounding box.

Ray casting projects triangles onto the plane orthogonal to the ray and
evaluates 2D edge functions. Hits that land exactly on an edge or vertex are
resolved by a top-left rule on the counter-clockwise oriented edge, so a ray
through a shared edge of a closed surface is counted exactly once.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import trimesh
from scipy.spatial import cKDTree

from .errors import DegenerateMesh
from .geometry import TriangleMesh

logger = logging.getLogger(__name__)

QUERY_CHUNK = 8192
DENSE_FACE_LIMIT = 64


class ClosestPoint(NamedTuple):
    point: np.ndarray
    distance: float
    face: int
    normal: np.ndarray


class RayHit(NamedTuple):
    t: float
    face: int


@dataclass(frozen=True)
class ClosestPoints:
    """Batched closest-point answers; ``face == -1`` where nothing was within range."""

    points: np.ndarray
    distances: np.ndarray
    faces: np.ndarray


class SpatialIndex:
    """Exact closest-point and ray queries over the non-degenerate faces of a mesh.

    Not a bounding volume hierarchy: candidates come from a k-d tree over
    triangle centroids, searched within the nearest-vertex distance plus the
    largest triangle radius, and are pruned by per-triangle bounding boxes.
    Meshes with at most ``DENSE_FACE_LIMIT`` faces skip the tree.

    Safe to query from many threads at once.
    """

    def __init__(self, mesh: TriangleMesh):
        valid = np.flatnonzero(mesh.valid_faces)
        if len(valid) == 0:
            raise DegenerateMesh("spatial index needs at least one face with area")
        self.mesh = mesh
        self.face_ids = valid
        self.triangles = mesh.triangles[valid]
        self.normals = mesh.face_normals[valid]
        self.tri_min = self.triangles.min(axis=1)
        self.tri_max = self.triangles.max(axis=1)
        self.centroids = self.triangles.mean(axis=1)
        radii = np.linalg.norm(self.triangles - self.centroids[:, None, :], axis=2)
        self.max_radius = float(radii.max())
        used = np.unique(mesh.faces[valid])
        self._vertex_tree = cKDTree(mesh.vertices[used])
        self._centroid_tree = (
            cKDTree(self.centroids) if len(valid) > DENSE_FACE_LIMIT else None
        )
        logger.debug(
            f"SpatialIndex over {len(valid)} faces "
            f"(max radius {self.max_radius:.4g}, dense={self._centroid_tree is None})"
        )

    def __len__(self) -> int:
        return len(self.face_ids)

    def closest_points(
        self, queries: np.ndarray, max_distance: float = np.inf, jobs: int = 1
    ) -> ClosestPoints:
        """Exact closest surface point for every query within ``max_distance``.

        Queries farther than ``max_distance`` report an infinite distance,
        face ``-1`` and NaN points. Ties go to the lowest face index. Chunks
        are independent, so the answer does not depend on ``jobs``.
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        points = np.full_like(queries, np.nan)
        distances = np.full(len(queries), np.inf)
        faces = np.full(len(queries), -1, dtype=np.int64)
        starts = list(range(0, len(queries), QUERY_CHUNK))

        def run(start: int) -> None:
            stop = min(start + QUERY_CHUNK, len(queries))
            p, d, f = self._closest_chunk(queries[start:stop], max_distance)
            points[start:stop] = p
            distances[start:stop] = d
            faces[start:stop] = f

        if jobs > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(run, starts))
        else:
            for start in starts:
                run(start)
        return ClosestPoints(points, distances, faces)

    def _candidates(
        self, queries: np.ndarray, bound: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        if self._centroid_tree is None:
            q_idx = np.repeat(np.arange(len(queries)), len(self))
            f_idx = np.tile(np.arange(len(self)), len(queries))
        else:
            radius = np.where(np.isfinite(bound), bound + self.max_radius, 0.0)
            hits = self._centroid_tree.query_ball_point(
                queries, radius, return_sorted=False
            )
            counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
            f_idx = np.fromiter(
                itertools.chain.from_iterable(hits), dtype=np.int64, count=counts.sum()
            )
            q_idx = np.repeat(np.arange(len(queries)), counts)
        return q_idx, f_idx

    def _closest_chunk(
        self, queries: np.ndarray, max_distance: float
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        upper, _ = self._vertex_tree.query(queries)
        # slack keeps the triangle owning the nearest vertex despite rounding
        bound = np.minimum(upper, max_distance) * (1.0 + 1e-9) + 1e-12

        q_idx, f_idx = self._candidates(queries, bound)
        gap = np.maximum(
            0.0,
            np.maximum(self.tri_min[f_idx] - queries[q_idx], queries[q_idx] - self.tri_max[f_idx]),
        )
        keep = np.einsum("ij,ij->i", gap, gap) <= bound[q_idx] ** 2
        q_idx, f_idx = q_idx[keep], f_idx[keep]

        points = np.full_like(queries, np.nan)
        distances = np.full(len(queries), np.inf)
        faces = np.full(len(queries), -1, dtype=np.int64)
        if len(q_idx) == 0:
            return points, distances, faces

        closest = trimesh.triangles.closest_point(self.triangles[f_idx], queries[q_idx])
        dist = np.linalg.norm(queries[q_idx] - closest, axis=1)

        order = np.lexsort((f_idx, dist, q_idx))
        first = order[np.unique(q_idx[order], return_index=True)[1]]
        within = dist[first] <= max_distance
        first = first[within]
        rows = q_idx[first]
        points[rows] = closest[first]
        distances[rows] = dist[first]
        faces[rows] = self.face_ids[f_idx[first]]
        return points, distances, faces

    def local_face(self, face: int) -> int:
        """Position of a mesh face index inside the index arrays."""
        return int(np.searchsorted(self.face_ids, face))

    def ray_hits(
        self, origin: np.ndarray, direction: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, bool]:
        """All hits with ``t >= 0`` as sorted ``(t, face)`` arrays plus a grazing flag.

        The flag is set when the ray lies in the plane of a triangle it
        passes through; such hits are not counted.
        """
        origin = np.asarray(origin, dtype=np.float64).reshape(3)
        direction = np.asarray(direction, dtype=np.float64).reshape(3)
        u, w = _orthonormal_basis(direction)

        rel = self.mesh.vertices - origin
        pu = rel @ u
        pw = rel @ w
        faces = self.mesh.faces[self.face_ids]
        x = pu[faces]
        y = pw[faces]

        inside_box = (
            (x.min(axis=1) <= 0.0)
            & (x.max(axis=1) >= 0.0)
            & (y.min(axis=1) <= 0.0)
            & (y.max(axis=1) >= 0.0)
        )
        cand = np.flatnonzero(inside_box)
        if len(cand) == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64), False
        x, y = x[cand], y[cand]

        # edge function of edge a->b evaluated at the projected origin
        e0 = x[:, 1] * y[:, 2] - y[:, 1] * x[:, 2]
        e1 = x[:, 2] * y[:, 0] - y[:, 2] * x[:, 0]
        e2 = x[:, 0] * y[:, 1] - y[:, 0] * x[:, 1]
        det = e0 + e1 + e2

        grazing = bool(np.any(det == 0.0))
        ccw = det > 0.0
        sign = np.where(ccw, 1.0, -1.0)
        edges = np.stack([e0, e1, e2], axis=1) * sign[:, None]

        dx = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        dy = np.stack([y[:, 2] - y[:, 1], y[:, 0] - y[:, 2], y[:, 1] - y[:, 0]], axis=1)
        dx = dx * sign[:, None]
        dy = dy * sign[:, None]
        top_left = (dy > 0.0) | ((dy == 0.0) & (dx < 0.0))

        inside = np.all((edges > 0.0) | ((edges == 0.0) & top_left), axis=1)
        inside &= det != 0.0
        hit = cand[inside]
        if len(hit) == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64), grazing

        normal = np.cross(
            self.triangles[hit, 1] - self.triangles[hit, 0],
            self.triangles[hit, 2] - self.triangles[hit, 0],
        )
        t = np.einsum("ij,ij->i", normal, self.triangles[hit, 0] - origin) / (
            normal @ direction
        )
        front = t >= 0.0
        t, hit = t[front], hit[front]
        order = np.lexsort((hit, t))
        return t[order], self.face_ids[hit[order]], grazing


def _orthonormal_basis(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane orthogonal to ``direction``.

    Axis-aligned directions get axis-aligned bases so projections are exact.
    """
    axis = np.flatnonzero(direction)
    if len(axis) == 1:
        k = int(axis[0])
        return np.eye(3)[(k + 1) % 3], np.eye(3)[(k + 2) % 3]
    helper = np.eye(3)[int(np.argmin(np.abs(direction)))]
    u = np.cross(direction, helper)
    u /= np.linalg.norm(u)
    w = np.cross(direction, u)
    return u, w


def build_index(mesh: TriangleMesh) -> SpatialIndex:
    return SpatialIndex(mesh)


def closest_point(index: SpatialIndex, query: np.ndarray) -> ClosestPoint:
    """Closest surface point, its distance, face and unit face normal."""
    result = index.closest_points(np.asarray(query, dtype=np.float64).reshape(1, 3))
    face = int(result.faces[0])
    return ClosestPoint(
        point=result.points[0],
        distance=float(result.distances[0]),
        face=face,
        normal=index.mesh.face_normals[face],
    )


def ray_intersections(
    index: SpatialIndex, origin: np.ndarray, direction: np.ndarray
) -> List[RayHit]:
    """Every ray-triangle intersection with ``t >= 0``, ascending in ``t``."""
    t, faces, grazing = index.ray_hits(origin, direction)
    if grazing:
        logger.debug(f"ray from {origin} grazes a triangle in its plane")
    return [RayHit(float(tt), int(ff)) for tt, ff in zip(t, faces)]


def ray_parity(
    index: SpatialIndex,
    origin: np.ndarray,
    direction: np.ndarray,
    nudge: float,
    retries: int = 3,
) -> Tuple[np.ndarray, np.ndarray]:
    """Hits along a ray, nudging the origin off grazing configurations.

    The origin moves by ``nudge`` within the plane orthogonal to the ray,
    at most ``retries`` times. Returns the hit parameters and the origin used.
    """
    origin = np.asarray(origin, dtype=np.float64)
    u, w = _orthonormal_basis(np.asarray(direction, dtype=np.float64))
    current = origin
    t, _, grazing = index.ray_hits(current, direction)
    attempt = 0
    while grazing and attempt < retries:
        attempt += 1
        current = origin + attempt * nudge * (u + w)
        t, _, grazing = index.ray_hits(current, direction)
    return t, current


def brute_force_closest(mesh: TriangleMesh, query: np.ndarray) -> Optional[float]:
    """Distance from ``query`` to the mesh by scanning every valid face."""
    valid = mesh.valid_faces
    if not valid.any():
        return None
    tris = mesh.triangles[valid]
    q = np.broadcast_to(np.asarray(query, dtype=np.float64), (len(tris), 3))
    closest = trimesh.triangles.closest_point(tris, q)
    return float(np.linalg.norm(q - closest, axis=1).min())

"""Analytic test shapes used by the CLI smoke paths and the test suite."""

from typing import Sequence

import numpy as np
import trimesh

from .geometry import TriangleMesh
from .signing import GridSpec


def _from_trimesh(mesh: trimesh.Trimesh) -> TriangleMesh:
    return TriangleMesh(np.asarray(mesh.vertices), np.asarray(mesh.faces))


def icosphere(radius: float = 0.5, subdivisions: int = 4) -> TriangleMesh:
    """Closed sphere with outward faces; 5120 triangles at 4 subdivisions."""
    return _from_trimesh(
        trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    )


def box(extents: Sequence[float] = (0.5, 0.5, 0.5)) -> TriangleMesh:
    """Closed axis-aligned box centered at the origin."""
    return _from_trimesh(trimesh.creation.box(extents=extents))


def torus(
    major_radius: float = 0.3, minor_radius: float = 0.1, sections: int = 48
) -> TriangleMesh:
    return _from_trimesh(
        trimesh.creation.torus(
            major_radius=major_radius,
            minor_radius=minor_radius,
            major_sections=sections,
            minor_sections=sections,
        )
    )


def open_box(extents: Sequence[float] = (0.5, 0.5, 0.5)) -> TriangleMesh:
    """Box with its +x face removed, so the surface has a hole."""
    closed = trimesh.creation.box(extents=extents)
    keep = closed.face_normals[:, 0] < 0.5
    return TriangleMesh(np.asarray(closed.vertices), np.asarray(closed.faces)[keep])


def nested_boxes(outer: float = 0.6, inner: float = 0.3) -> TriangleMesh:
    """Hollow cube: an outer shell plus an inward-facing inner shell."""
    a = trimesh.creation.box(extents=(outer, outer, outer))
    b = trimesh.creation.box(extents=(inner, inner, inner))
    faces = np.vstack([a.faces, b.faces[:, ::-1] + len(a.vertices)])
    return TriangleMesh(np.vstack([a.vertices, b.vertices]), faces)


def sheet(size: float = 0.5, z: float = 0.0) -> TriangleMesh:
    """Flat square in the plane ``z``; an open surface with no interior."""
    h = size / 2.0
    vertices = [[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]]
    return TriangleMesh(vertices, [[0, 1, 2], [0, 2, 3]])


def triangle() -> TriangleMesh:
    return TriangleMesh([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [[0, 1, 2]])


def voxel_aligned_box(spec: GridSpec, margin: int) -> TriangleMesh:
    """Box whose faces lie on voxel boundaries ``margin`` voxels in from the domain walls.

    The faces stay on voxel boundaries for every grid that refines ``spec``
    by an integer factor, so edge errors of marching cubes scale with the
    voxel size alone.
    """
    if margin < 1 or 2 * margin >= spec.resolution:
        raise ValueError(f"margin {margin} leaves no box inside a {spec.resolution}^3 grid")
    lo = spec.domain.min + margin * spec.voxel_size
    hi = spec.domain.max - margin * spec.voxel_size
    return box(hi - lo).transformed(1.0, 0.5 * (lo + hi))

"""Iso-surface extraction from voxel grids."""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from skimage import measure

from .geometry import DEGENERATE_AREA, TriangleMesh
from .signing import GridKind, ScalarGrid

logger = logging.getLogger(__name__)


class IsoSurfaceConfig(BaseModel):
    """Marching cubes parameters."""

    iso_value: Optional[float] = Field(
        None,
        description="Level to extract; defaults to 0.0 for SDF grids and 0.5 for occupancy.",
    )

    def level_for(self, grid: ScalarGrid) -> float:
        if self.iso_value is not None:
            return float(self.iso_value)
        return 0.5 if grid.kind == GridKind.OCCUPANCY else 0.0


def _empty() -> TriangleMesh:
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def _orientation_score(
    grid: ScalarGrid, vertices: np.ndarray, faces: np.ndarray
) -> float:
    """Sum over faces of area-weighted normal dotted with the field gradient."""
    gradient = np.stack(np.gradient(grid.values), axis=-1)
    tris = vertices[faces]
    area_normals = 0.5 * np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    spec = grid.spec
    idx = np.floor((tris.mean(axis=1) - spec.domain.min) / spec.voxel_size)
    idx = np.clip(idx, 0, spec.resolution - 1).astype(np.int64)
    return float(np.einsum("ij,ij->", area_normals, gradient[idx[:, 0], idx[:, 1], idx[:, 2]]))


def marching_cubes(
    grid: ScalarGrid, config: Optional[IsoSurfaceConfig] = None
) -> TriangleMesh:
    """Triangulate the iso-surface of ``grid`` in domain coordinates.

    Faces are oriented outward: toward positive values for SDF grids and
    toward empty voxels for occupancy grids. A grid that never crosses the
    level yields an empty mesh.
    """
    config = config or IsoSurfaceConfig()
    level = config.level_for(grid)
    values = grid.values
    if not (values.min() < level < values.max()):
        logger.warning(
            f"constant-sign grid: level {level} outside ({values.min()}, {values.max()}), "
            "returning an empty mesh"
        )
        return _empty()

    outward_ascends = grid.kind == GridKind.SDF
    spec = grid.spec
    h = spec.voxel_size
    verts, faces, _, _ = measure.marching_cubes(
        values,
        level=level,
        spacing=(h, h, h),
        gradient_direction="ascent" if outward_ascends else "descent",
        method="lewiner",
    )
    verts = verts.astype(np.float64) + spec.domain.min + 0.5 * h
    faces = faces.astype(np.int64)

    verts, inverse = np.unique(verts, axis=0, return_inverse=True)
    faces = inverse.reshape(-1)[faces]
    distinct = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 2] != faces[:, 0])
    )
    faces = faces[distinct]
    tris = verts[faces]
    areas = 0.5 * np.linalg.norm(
        np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1
    )
    faces = faces[areas >= DEGENERATE_AREA]
    if len(faces) == 0:
        logger.warning("marching cubes produced only degenerate triangles")
        return _empty()

    used, remap = np.unique(faces, return_inverse=True)
    verts = verts[used]
    faces = remap.reshape(-1, 3)

    score = _orientation_score(grid, verts, faces)
    if (score < 0.0) == outward_ascends:
        faces = faces[:, ::-1]
    logger.debug(f"marching cubes at N={spec.resolution}: {len(verts)} vertices, {len(faces)} faces")
    return TriangleMesh(verts, faces)

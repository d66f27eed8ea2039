"""Reconstruction metrics: Chamfer distance, F-score, normal consistency, round trips.

All distances are in normalized model units. Chamfer distance is the sum of
both directional mean nearest-neighbor distances, each raised to ``power``.
Precision counts generated points strictly closer than ``tau`` to the
reference, recall the reverse; both are percentages.
"""

import logging
import time
from enum import Enum
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import EmptyCloud, EmptyReconstruction
from .geometry import PointCloud, TriangleMesh, sample_surface
from .reconstruct import IsoSurfaceConfig, marching_cubes
from .signing import DEFAULT_CUTOFF, GridSpec, SignMethod, compute_sdf
from .spatial import SpatialIndex

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.0125
DEFAULT_SAMPLES = 10000


class DistanceMode(str, Enum):
    SAMPLES = "samples"
    SURFACE = "surface"


class TauMode(str, Enum):
    ABSOLUTE = "absolute"
    VOXEL = "voxel"


class ChamferConfig(BaseModel):
    """Chamfer distance parameters."""

    power: Literal[1, 2] = Field(1, description="Exponent applied to each nearest-neighbor distance.")
    samples_per_mesh: int = Field(
        DEFAULT_SAMPLES, ge=1, description="Surface samples drawn from each mesh."
    )
    seed: int = Field(0, ge=0, lt=2**64, description="Sampling seed.")


class FscoreConfig(BaseModel):
    """F-score parameters."""

    tau: float = Field(DEFAULT_TAU, gt=0.0, description="Distance threshold in model units.")
    samples_per_mesh: int = Field(
        DEFAULT_SAMPLES, ge=1, description="Surface samples drawn from each mesh."
    )
    seed: int = Field(0, ge=0, lt=2**64, description="Sampling seed.")


class FscoreResult(BaseModel):
    precision: float = Field(..., ge=0.0, le=100.0)
    recall: float = Field(..., ge=0.0, le=100.0)
    fscore: float = Field(..., ge=0.0, le=100.0)


class ReconReport(BaseModel):
    """Metrics for one reconstructed object."""

    cd: float = Field(..., ge=0.0, description="Chamfer distance.")
    power: int = Field(..., description="Chamfer exponent used.")
    precision: float = Field(..., ge=0.0, le=100.0)
    recall: float = Field(..., ge=0.0, le=100.0)
    fscore: float = Field(..., ge=0.0, le=100.0)
    tau: float = Field(..., gt=0.0, description="F-score threshold actually applied.")
    nc: float = Field(..., ge=-1.0, le=1.0, description="Normal consistency.")
    samples: int = Field(..., description="Samples per mesh.")
    seed: int = Field(..., description="Sampling seed.")
    resolution: Optional[int] = Field(None, description="Grid resolution of the round trip.")
    method: Optional[str] = Field(None, description="Sign method of the round trip.")
    distance_mode: Optional[str] = Field(None, description="How distances were measured.")
    faces: Optional[int] = Field(None, description="Triangle count of the reconstruction.")

    @model_validator(mode="after")
    def _harmonic_mean(self):
        p, r = self.precision, self.recall
        expected = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
        if abs(self.fscore - expected) > 1e-9 * max(1.0, expected):
            raise ValueError(f"fscore {self.fscore} is not the harmonic mean of {p} and {r}")
        return self


def _require_points(*clouds: PointCloud) -> None:
    for cloud in clouds:
        if len(cloud) == 0:
            raise EmptyCloud("point cloud has no points")


def nearest_distances(source: PointCloud, target: PointCloud) -> np.ndarray:
    """Distance from every point of ``source`` to its nearest point in ``target``."""
    distances, _ = target.tree.query(source.positions)
    return distances


def _chamfer_from(d_xy: np.ndarray, d_yx: np.ndarray, power: int) -> float:
    return float(np.mean(d_xy**power)) + float(np.mean(d_yx**power))


def _fscore_from(d_g: np.ndarray, d_r: np.ndarray, tau: float) -> FscoreResult:
    precision = 100.0 * np.count_nonzero(d_g < tau) / len(d_g)
    recall = 100.0 * np.count_nonzero(d_r < tau) / len(d_r)
    if precision + recall > 0:
        fscore = 2.0 * precision * recall / (precision + recall)
    else:
        fscore = 0.0
    return FscoreResult(precision=precision, recall=recall, fscore=fscore)


def chamfer(x: PointCloud, y: PointCloud, config: Optional[ChamferConfig] = None) -> float:
    config = config or ChamferConfig()
    _require_points(x, y)
    return _chamfer_from(nearest_distances(x, y), nearest_distances(y, x), config.power)


def fscore(
    generated: PointCloud, reference: PointCloud, config: Optional[FscoreConfig] = None
) -> FscoreResult:
    config = config or FscoreConfig()
    _require_points(generated, reference)
    return _fscore_from(
        nearest_distances(generated, reference),
        nearest_distances(reference, generated),
        config.tau,
    )


def normal_consistency(generated: PointCloud, reference: SpatialIndex) -> float:
    """Mean dot product of each sample normal with the normal of its closest reference face."""
    _require_points(generated)
    if generated.normals is None:
        raise EmptyCloud("normal consistency needs a cloud with normals")
    closest = reference.closest_points(generated.positions)
    reference_normals = reference.mesh.face_normals[closest.faces]
    dots = np.einsum("ij,ij->i", generated.normals, reference_normals)
    return float(np.clip(dots.mean(), -1.0, 1.0))


def surface_distances(cloud: PointCloud, index: SpatialIndex, jobs: int = 1) -> np.ndarray:
    return index.closest_points(cloud.positions, jobs=jobs).distances


def compare_meshes(
    generated: TriangleMesh,
    reference: TriangleMesh,
    chamfer_config: Optional[ChamferConfig] = None,
    fscore_config: Optional[FscoreConfig] = None,
    distance_mode: DistanceMode = DistanceMode.SURFACE,
    tau: Optional[float] = None,
    jobs: int = 1,
) -> ReconReport:
    """CD, F-score and NC between two meshes from independent surface samples.

    In ``samples`` mode both directions use nearest samples. In ``surface``
    mode each sample is measured against the other mesh's exact surface,
    which removes the sampling noise floor from the distances.
    """
    chamfer_config = chamfer_config or ChamferConfig()
    fscore_config = fscore_config or FscoreConfig(
        samples_per_mesh=chamfer_config.samples_per_mesh, seed=chamfer_config.seed
    )
    tau = fscore_config.tau if tau is None else tau
    n = chamfer_config.samples_per_mesh
    seed = chamfer_config.seed

    g = sample_surface(generated, n, seed, stream=1)
    r = sample_surface(reference, n, seed, stream=0)
    reference_index = SpatialIndex(reference)

    if DistanceMode(distance_mode) == DistanceMode.SURFACE:
        d_g = surface_distances(g, reference_index, jobs)
        d_r = surface_distances(r, SpatialIndex(generated), jobs)
    else:
        d_g = nearest_distances(g, r)
        d_r = nearest_distances(r, g)

    scores = _fscore_from(d_g, d_r, tau)
    return ReconReport(
        cd=_chamfer_from(d_g, d_r, chamfer_config.power),
        power=chamfer_config.power,
        precision=scores.precision,
        recall=scores.recall,
        fscore=scores.fscore,
        tau=tau,
        nc=normal_consistency(g, reference_index),
        samples=n,
        seed=seed,
        distance_mode=DistanceMode(distance_mode).value,
        faces=len(generated.faces),
    )


def roundtrip_eval(
    mesh: TriangleMesh,
    resolution: int,
    method: SignMethod = SignMethod.FLOOD_FILL,
    chamfer_config: Optional[ChamferConfig] = None,
    fscore_config: Optional[FscoreConfig] = None,
    tau_mode: TauMode = TauMode.ABSOLUTE,
    distance_mode: DistanceMode = DistanceMode.SURFACE,
    cutoff: float = DEFAULT_CUTOFF,
    jobs: int = 1,
) -> ReconReport:
    """Mesh to SDF grid to mesh, then compare the reconstruction with the original.

    With ``tau_mode="voxel"`` the F-score threshold is one eighth of the
    voxel size instead of the configured absolute value.
    """
    spec = GridSpec.default(resolution)
    method = SignMethod(method)
    started = time.perf_counter()
    grid = compute_sdf(mesh, spec, method, cutoff, jobs=jobs)
    reconstruction = marching_cubes(grid, IsoSurfaceConfig())
    if reconstruction.is_empty:
        raise EmptyReconstruction(
            f"marching cubes produced no faces at N={resolution}",
            details={"resolution": resolution, "method": method.value},
        )
    converted = time.perf_counter()

    fscore_config = fscore_config or FscoreConfig()
    tau = spec.voxel_size / 8.0 if TauMode(tau_mode) == TauMode.VOXEL else fscore_config.tau
    report = compare_meshes(
        reconstruction, mesh, chamfer_config, fscore_config, distance_mode, tau, jobs
    )
    logger.debug(
        f"round trip N={resolution} {method.value}: convert {converted - started:.2f}s, "
        f"metrics {time.perf_counter() - converted:.2f}s, F={report.fscore:.2f}"
    )
    return report.model_copy(update={"resolution": resolution, "method": method.value})


def fscore_histogram(scores: np.ndarray, bins: int = 10) -> Tuple[list, list]:
    """Counts of F-scores in equal-width bins over [0, 100]."""
    counts, edges = np.histogram(np.asarray(scores, dtype=np.float64), bins=bins, range=(0.0, 100.0))
    return counts.tolist(), edges.tolist()

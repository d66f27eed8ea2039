"""Set-level generation metrics over pairwise Chamfer distances.

Generated items are indexed before reference items wherever the two sets are
concatenated, and every argmin takes the lowest index on ties.
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import stats

from .errors import (
    DatasetTooSmall,
    EmptySet,
    MatrixFormatError,
    ShapeMismatch,
    ZeroVolume,
)
from .geometry import PointCloud, TriangleMesh, make_rng
from .recon_metrics import ChamferConfig, nearest_distances

logger = logging.getLogger(__name__)

MIN_VOLUME = 1e-12

MATRIX_MAGIC = b"CDMX"
MATRIX_VERSION = 1
MATRIX_HEADER = struct.Struct("<4sIIIB")


class SetRole(str, Enum):
    GENERATED = "generated"
    REFERENCE = "reference"


@dataclass(frozen=True, eq=False)
class MeshSet:
    """Named point clouds standing in for a set of meshes."""

    ids: List[str]
    clouds: List[PointCloud]
    role: SetRole = SetRole.REFERENCE

    def __post_init__(self):
        if len(self.ids) != len(self.clouds):
            raise ValueError("ids and clouds differ in length")
        duplicates = {i for i in self.ids if self.ids.count(i) > 1}
        if duplicates:
            raise ValueError(f"duplicate ids in mesh set: {sorted(duplicates)}")
        object.__setattr__(self, "ids", list(self.ids))
        object.__setattr__(self, "clouds", list(self.clouds))

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, positions: Sequence[int], role: Optional[SetRole] = None) -> "MeshSet":
        return MeshSet(
            [self.ids[i] for i in positions],
            [self.clouds[i] for i in positions],
            role or self.role,
        )


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Chamfer distances within and between a generated and a reference set."""

    gg: np.ndarray
    gr: np.ndarray
    rr: np.ndarray
    power: int = 1

    def __post_init__(self):
        gg = np.array(self.gg, dtype=np.float64)
        gr = np.array(self.gr, dtype=np.float64)
        rr = np.array(self.rr, dtype=np.float64)
        g, r = gr.shape
        if gg.shape != (g, g) or rr.shape != (r, r):
            raise ShapeMismatch(
                f"matrix blocks disagree: gg {gg.shape}, gr {gr.shape}, rr {rr.shape}"
            )
        for block in (gg, gr, rr):
            block.setflags(write=False)
        object.__setattr__(self, "gg", gg)
        object.__setattr__(self, "gr", gr)
        object.__setattr__(self, "rr", rr)

    @property
    def n_gen(self) -> int:
        return self.gr.shape[0]

    @property
    def n_ref(self) -> int:
        return self.gr.shape[1]

    def joint(self) -> np.ndarray:
        """Distances over generated followed by reference items."""
        return np.block([[self.gg, self.gr], [self.gr.T, self.rr]])

    @classmethod
    def from_joint(cls, full: np.ndarray, generated: Sequence[int], reference: Sequence[int], power: int = 1):
        g = np.asarray(generated)
        r = np.asarray(reference)
        return cls(full[np.ix_(g, g)], full[np.ix_(g, r)], full[np.ix_(r, r)], power)


class MmdResult(NamedTuple):
    value: float
    per_reference: np.ndarray


class GenReport(BaseModel):
    """Distribution metrics for one generated/reference pair of sets."""

    cov: float = Field(..., ge=0.0, le=1.0, description="Coverage.")
    mmd: float = Field(..., ge=0.0, description="Minimum matching distance.")
    one_nna: float = Field(..., ge=0.0, le=1.0, description="1-nearest-neighbor accuracy.")
    n_gen: int = Field(..., description="Generated set size.")
    n_ref: int = Field(..., description="Reference set size.")
    power: int = Field(..., description="Chamfer exponent used.")
    seed: int = Field(..., description="Sampling seed.")
    warnings: List[str] = Field(default_factory=list, description="Non-fatal conditions.")


def _directional(source: PointCloud, target: PointCloud, power: int) -> float:
    return float(np.mean(nearest_distances(source, target) ** power))


def _pair(a: PointCloud, b: PointCloud, power: int) -> float:
    return _directional(a, b, power) + _directional(b, a, power)


def _fill(
    out: np.ndarray,
    pairs: List[Tuple[int, int]],
    left: List[PointCloud],
    right: List[PointCloud],
    power: int,
    jobs: int,
) -> None:
    def work(pair: Tuple[int, int]) -> float:
        i, j = pair
        return _pair(left[i], right[j], power)

    if jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(work, pairs, chunksize=64))
    else:
        values = [work(p) for p in pairs]
    for (i, j), value in zip(pairs, values):
        out[i, j] = value


def within_distances(clouds: List[PointCloud], power: int = 1, jobs: int = 1) -> np.ndarray:
    """Symmetric Chamfer matrix of one set; only the upper triangle is computed."""
    n = len(clouds)
    out = np.zeros((n, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    _fill(out, pairs, clouds, clouds, power, jobs)
    return out + out.T


def cross_distances(
    left: List[PointCloud], right: List[PointCloud], power: int = 1, jobs: int = 1
) -> np.ndarray:
    out = np.zeros((len(left), len(right)))
    pairs = [(i, j) for i in range(len(left)) for j in range(len(right))]
    _fill(out, pairs, left, right, power, jobs)
    return out


def pairwise_distances(
    generated: MeshSet,
    reference: MeshSet,
    config: Optional[ChamferConfig] = None,
    jobs: int = 1,
) -> DistanceMatrix:
    config = config or ChamferConfig()
    if len(generated) == 0 or len(reference) == 0:
        raise EmptySet(
            "pairwise distances need two non-empty sets",
            details={"n_gen": len(generated), "n_ref": len(reference)},
        )
    power = config.power
    logger.info(
        f"computing Chamfer matrix for {len(generated)} generated x {len(reference)} "
        f"reference items with {jobs} workers"
    )
    return DistanceMatrix(
        gg=within_distances(generated.clouds, power, jobs),
        gr=cross_distances(generated.clouds, reference.clouds, power, jobs),
        rr=within_distances(reference.clouds, power, jobs),
        power=power,
    )


def coverage(matrix: DistanceMatrix) -> float:
    """Fraction of reference items that are the nearest match of some generated item."""
    matched = np.unique(np.argmin(matrix.gr, axis=1))
    return len(matched) / matrix.n_ref


def mmd(matrix: DistanceMatrix) -> MmdResult:
    """Mean over reference items of the distance to the closest generated item."""
    per_reference = matrix.gr.min(axis=0)
    return MmdResult(float(per_reference.mean()), per_reference)


def one_nna(matrix: DistanceMatrix) -> float:
    """Leave-one-out 1-NN classification accuracy over the union of both sets."""
    if matrix.n_gen != matrix.n_ref:
        logger.warning(
            f"1-NNA on unequal set sizes ({matrix.n_gen} generated, {matrix.n_ref} reference)"
        )
    full = matrix.joint()
    np.fill_diagonal(full, np.inf)
    nearest = np.argmin(full, axis=1)
    is_generated = np.arange(len(full)) < matrix.n_gen
    same = is_generated == is_generated[nearest]
    return float(np.count_nonzero(same)) / len(full)


def gen_report(matrix: DistanceMatrix, seed: int = 0) -> GenReport:
    warnings = []
    if matrix.n_gen != matrix.n_ref:
        warnings.append("UnequalSetSizes")
    return GenReport(
        cov=coverage(matrix),
        mmd=mmd(matrix).value,
        one_nna=one_nna(matrix),
        n_gen=matrix.n_gen,
        n_ref=matrix.n_ref,
        power=matrix.power,
        seed=seed,
        warnings=warnings,
    )


class StabilityStats(BaseModel):
    size: int = Field(..., description="Items per subset.")
    trials: int = Field(..., description="Random draws at this size.")
    cov: Tuple[float, float] = Field(..., description="Mean and std of coverage.")
    mmd: Tuple[float, float] = Field(..., description="Mean and std of MMD.")
    one_nna: Tuple[float, float] = Field(..., description="Mean and std of 1-NNA.")


def stability_from_matrix(
    full: np.ndarray,
    sizes: Sequence[int],
    trials: int = 100,
    seed: int = 0,
    power: int = 1,
) -> Dict[int, StabilityStats]:
    """Subset-size study over a precomputed symmetric dataset matrix.

    Each trial permutes the dataset and takes the first ``size`` items as
    the generated set and the next ``size`` as the reference set.
    """
    n = len(full)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not sizes or min(sizes) < 1 or 2 * max(sizes) > n:
        raise DatasetTooSmall(
            f"dataset of {n} items cannot supply two disjoint subsets of sizes {list(sizes)}",
            details={"dataset": n, "sizes": list(sizes)},
        )
    results: Dict[int, StabilityStats] = {}
    for size in sizes:
        rng = make_rng(seed, stream=size)
        values = np.empty((trials, 3))
        for trial in range(trials):
            order = rng.permutation(n)
            matrix = DistanceMatrix.from_joint(
                full, order[:size], order[size : 2 * size], power
            )
            values[trial] = (coverage(matrix), mmd(matrix).value, one_nna(matrix))
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        results[int(size)] = StabilityStats(
            size=int(size),
            trials=trials,
            cov=(float(mean[0]), float(std[0])),
            mmd=(float(mean[1]), float(std[1])),
            one_nna=(float(mean[2]), float(std[2])),
        )
        logger.debug(f"stability size={size}: MMD {mean[1]:.4g} +- {std[1]:.4g}")
    return results


def subset_stability(
    dataset: MeshSet,
    sizes: Sequence[int],
    trials: int = 100,
    seed: int = 0,
    config: Optional[ChamferConfig] = None,
    jobs: int = 1,
    full: Optional[np.ndarray] = None,
) -> Dict[int, StabilityStats]:
    """Mean and std of COV, MMD and 1-NNA over random disjoint subset pairs."""
    config = config or ChamferConfig()
    if not sizes or 2 * max(sizes) > len(dataset):
        raise DatasetTooSmall(
            f"dataset of {len(dataset)} items cannot supply two disjoint subsets of "
            f"sizes {list(sizes)}",
            details={"dataset": len(dataset), "sizes": list(sizes)},
        )
    if full is None:
        full = within_distances(dataset.clouds, config.power, jobs)
    return stability_from_matrix(full, sizes, trials, seed, config.power)


class SurfaceToVolume(NamedTuple):
    ratio: float
    closed: bool
    area: float
    volume: float


def enclosed_volume(mesh: TriangleMesh) -> float:
    """Absolute sum of signed tetrahedron volumes against the origin."""
    if mesh.is_empty:
        return 0.0
    tris = mesh.triangles
    signed = np.einsum("ij,ij->i", tris[:, 0], np.cross(tris[:, 1], tris[:, 2])) / 6.0
    return abs(float(signed.sum()))


def surface_to_volume(mesh: TriangleMesh) -> SurfaceToVolume:
    """Surface area over enclosed volume, with a closedness flag."""
    if mesh.is_empty:
        raise EmptySet("surface-to-volume of a mesh without faces")
    area = mesh.area
    volume = enclosed_volume(mesh)
    closed = mesh.is_closed
    if volume < MIN_VOLUME:
        raise ZeroVolume(
            f"enclosed volume {volume:.3g} is below {MIN_VOLUME}",
            details={"ratio": float("inf"), "area": area, "volume": volume, "closed": closed},
        )
    return SurfaceToVolume(area / volume, closed, area, volume)


class Complexity(BaseModel):
    triangles: int = Field(..., description="Face count.")
    area: float = Field(..., description="Total surface area.")
    volume: float = Field(..., description="Enclosed volume.")
    ratio: float = Field(..., description="Surface-to-volume ratio; inf for zero volume.")
    closed: bool = Field(..., description="Every edge has exactly two incident faces.")


def complexity(mesh: TriangleMesh) -> Complexity:
    """Triangle count and surface-to-volume ratio; never raises on flat meshes."""
    try:
        result = surface_to_volume(mesh)
        ratio, closed, area, volume = result
    except ZeroVolume as e:
        ratio = float("inf")
        closed = e.details["closed"]
        area = e.details["area"]
        volume = e.details["volume"]
    return Complexity(
        triangles=len(mesh.faces), area=area, volume=volume, ratio=ratio, closed=closed
    )


class Correlation(NamedTuple):
    r: Optional[float]
    p_value: Optional[float]


class Decomposition(BaseModel):
    """Shares of MMD explained by reconstruction and compression error."""

    recon_fraction: Optional[float] = Field(..., description="mean(recon_cd) / mean(mmd).")
    compression_fraction: Optional[float] = Field(
        ..., description="mean(compression_cd) / mean(mmd)."
    )
    pearson_recon_mmd: Optional[float] = Field(..., description="Pearson r of recon CD vs MMD.")
    pearson_recon_mmd_p: Optional[float] = Field(None, description="Two-sided p-value.")
    pearson_recon_compression: Optional[float] = Field(
        ..., description="Pearson r of recon CD vs compression CD."
    )
    pearson_recon_compression_p: Optional[float] = Field(None, description="Two-sided p-value.")
    pearson_compression_mmd: Optional[float] = Field(
        None, description="Pearson r of compression CD vs MMD."
    )
    pearson_compression_mmd_p: Optional[float] = Field(None, description="Two-sided p-value.")
    n: int = Field(..., description="Number of reference items.")


def pearson(x: np.ndarray, y: np.ndarray) -> Correlation:
    """Pearson r with p-value; ``None`` when either input has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return Correlation(None, None)
    result = stats.pearsonr(x, y)
    r = float(np.clip(result[0], -1.0, 1.0))
    return Correlation(r, float(result[1]))


def error_decomposition(
    mmd_per_ref: np.ndarray, recon_cd: np.ndarray, compression_cd: np.ndarray
) -> Decomposition:
    mmd_per_ref = np.asarray(mmd_per_ref, dtype=np.float64)
    recon_cd = np.asarray(recon_cd, dtype=np.float64)
    compression_cd = np.asarray(compression_cd, dtype=np.float64)
    n = len(mmd_per_ref)
    if len(recon_cd) != n or len(compression_cd) != n:
        raise ShapeMismatch(
            "decomposition vectors differ in length",
            details={"mmd": n, "recon": len(recon_cd), "compression": len(compression_cd)},
        )
    if n < 3:
        raise ShapeMismatch("decomposition needs at least 3 reference items", details={"n": n})

    mean_mmd = float(mmd_per_ref.mean())
    recon_fraction = float(recon_cd.mean()) / mean_mmd if mean_mmd > 0 else None
    compression_fraction = float(compression_cd.mean()) / mean_mmd if mean_mmd > 0 else None
    recon_mmd = pearson(recon_cd, mmd_per_ref)
    recon_compression = pearson(recon_cd, compression_cd)
    compression_mmd = pearson(compression_cd, mmd_per_ref)
    for name, corr in (
        ("recon/mmd", recon_mmd),
        ("recon/compression", recon_compression),
        ("compression/mmd", compression_mmd),
    ):
        if corr.r is None:
            logger.warning(f"ZeroVariance: Pearson r for {name} is undefined")
    return Decomposition(
        recon_fraction=recon_fraction,
        compression_fraction=compression_fraction,
        pearson_recon_mmd=recon_mmd.r,
        pearson_recon_mmd_p=recon_mmd.p_value,
        pearson_recon_compression=recon_compression.r,
        pearson_recon_compression_p=recon_compression.p_value,
        pearson_compression_mmd=compression_mmd.r,
        pearson_compression_mmd_p=compression_mmd.p_value,
        n=n,
    )


def write_matrix(matrix: DistanceMatrix, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = MATRIX_HEADER.pack(
        MATRIX_MAGIC, MATRIX_VERSION, matrix.n_gen, matrix.n_ref, matrix.power
    )
    body = b"".join(block.astype("<f8").tobytes(order="C") for block in (matrix.gg, matrix.gr, matrix.rr))
    path.write_bytes(header + body)
    return path


def read_matrix(path: Union[str, Path]) -> DistanceMatrix:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < MATRIX_HEADER.size:
        raise MatrixFormatError(f"{path}: truncated header", details={"path": str(path)})
    magic, version, g, r, power = MATRIX_HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC or version != MATRIX_VERSION:
        raise MatrixFormatError(
            f"{path}: not a version {MATRIX_VERSION} CDMX file", details={"path": str(path)}
        )
    if power not in (1, 2):
        raise MatrixFormatError(f"{path}: bad power {power}", details={"path": str(path)})
    expected = MATRIX_HEADER.size + 8 * (g * g + g * r + r * r)
    if len(data) != expected:
        raise MatrixFormatError(
            f"{path}: expected {expected} bytes, found {len(data)}",
            details={"path": str(path), "expected": expected, "found": len(data)},
        )
    values = np.frombuffer(data, dtype="<f8", offset=MATRIX_HEADER.size)
    gg = values[: g * g].reshape(g, g)
    gr = values[g * g : g * g + g * r].reshape(g, r)
    rr = values[g * g + g * r :].reshape(r, r)
    return DistanceMatrix(gg, gr, rr, power)

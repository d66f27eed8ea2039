"""Pydantic models for command configurations, reports and run manifests."""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Literal, Optional, Set

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import __version__
from .recon_metrics import DEFAULT_SAMPLES, DEFAULT_TAU, DistanceMode, TauMode
from .signing import DEFAULT_CUTOFF, MIN_RESOLUTION, SignMethod

DEFAULT_SIZES = [25, 50, 100, 200, 400]


class JobConfig(BaseModel):
    """Base class for command configurations.

    Every field is validated on construction, before any computation.
    """

    model_config = ConfigDict(extra="forbid")

    # fields that do not change results and stay out of the config hash
    hash_exclude: ClassVar[Set[str]] = {"output", "jobs", "use_cache"}

    jobs: Optional[int] = Field(
        None, ge=1, description="Worker count; defaults to MESH3D_JOBS or logical cores."
    )

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of all result-affecting fields."""
        payload = self.model_dump(mode="json", exclude=self.hash_exclude)
        payload["command"] = type(self).__name__
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ConvertJob(JobConfig):
    input: Path = Field(..., description="Input OBJ mesh.")
    output: Path = Field(..., description="Output SDFG grid file.")
    resolution: int = Field(64, ge=MIN_RESOLUTION, description="Voxels per axis.")
    sign: SignMethod = Field(SignMethod.FLOOD_FILL, description="Sign determination method.")
    kind: Literal["sdf", "occupancy"] = Field("sdf", description="Grid content.")
    cutoff: float = Field(DEFAULT_CUTOFF, gt=0.0, description="SDF truncation distance.")
    normalize: bool = Field(True, description="Normalize the mesh to the unit cube first.")


class ReconstructJob(JobConfig):
    input: Path = Field(..., description="Input SDFG grid file.")
    output: Path = Field(..., description="Output OBJ mesh.")
    iso_value: Optional[float] = Field(
        None, description="Iso level; defaults to 0 for SDF and 0.5 for occupancy."
    )


class SamplingOptions(JobConfig):
    power: Literal[1, 2] = Field(1, description="Chamfer exponent.")
    samples: int = Field(DEFAULT_SAMPLES, ge=1, description="Surface samples per mesh.")
    seed: int = Field(0, ge=0, lt=2**64, description="Sampling seed.")
    normalize: bool = Field(True, description="Normalize meshes to the unit cube before sampling.")


class EvalReconJob(SamplingOptions):
    dir_a: Optional[Path] = Field(None, description="Reconstructed meshes.")
    dir_b: Optional[Path] = Field(None, description="Reference meshes with matching names.")
    roundtrip: Optional[Path] = Field(None, description="Meshes to convert and reconstruct.")
    output: Path = Field(..., description="Report directory.")
    resolutions: List[int] = Field([64], min_length=1, description="Round-trip grid resolutions.")
    sign: SignMethod = Field(SignMethod.FLOOD_FILL, description="Round-trip sign method.")
    cutoff: float = Field(DEFAULT_CUTOFF, gt=0.0, description="Round-trip SDF truncation.")
    tau: float = Field(DEFAULT_TAU, gt=0.0, description="F-score threshold.")
    tau_mode: TauMode = Field(TauMode.ABSOLUTE, description="Absolute tau or voxel_size / 8.")
    distance_mode: DistanceMode = Field(DistanceMode.SURFACE, description="Distance measurement.")

    @field_validator("resolutions")
    @classmethod
    def _resolutions(cls, value: List[int]) -> List[int]:
        for n in value:
            if n < MIN_RESOLUTION:
                raise ValueError(f"resolution {n} is below {MIN_RESOLUTION}")
        return sorted(set(value))

    @model_validator(mode="after")
    def _mode(self):
        pair = self.dir_a is not None and self.dir_b is not None
        if pair == (self.roundtrip is not None):
            raise ValueError("give either dir_a and dir_b, or roundtrip")
        if pair and self.tau_mode == TauMode.VOXEL:
            raise ValueError("tau_mode 'voxel' needs a round trip grid")
        return self


class EvalGenJob(SamplingOptions):
    gen_dir: Path = Field(..., description="Generated meshes or clouds.")
    ref_dir: Path = Field(..., description="Reference meshes or clouds.")
    output: Path = Field(..., description="Report directory.")
    use_cache: bool = Field(True, description="Reuse a cached distance matrix.")


class StabilityJob(SamplingOptions):
    dataset_dir: Path = Field(..., description="Dataset meshes or clouds.")
    output: Path = Field(..., description="Report directory.")
    sizes: List[int] = Field(DEFAULT_SIZES, min_length=1, description="Subset sizes.")
    trials: int = Field(100, ge=1, description="Random draws per size.")
    use_cache: bool = Field(True, description="Reuse a cached dataset matrix.")

    @field_validator("sizes")
    @classmethod
    def _sizes(cls, value: List[int]) -> List[int]:
        if min(value) < 1:
            raise ValueError("subset sizes must be positive")
        return sorted(set(value))


class BtFitJob(JobConfig):
    input: Path = Field(..., description="CSV with winner,loser columns.")
    output: Path = Field(..., description="Output JSON.")
    tolerance: float = Field(1e-8, gt=0.0, description="Convergence threshold on scores.")
    max_iter: int = Field(10000, ge=1, description="Iteration cap.")
    pseudo_count: float = Field(0.0, ge=0.0, description="Added wins per compared pair and direction.")


class DecomposeJob(JobConfig):
    mmd_csv: Path = Field(..., description="Per-reference MMD values with an id column.")
    recon_csv: Path = Field(..., description="Per-reference reconstruction CD.")
    compression_csv: Path = Field(..., description="Per-reference compression CD.")
    output: Path = Field(..., description="Output JSON.")


class ComplexityJob(JobConfig):
    input: Path = Field(..., description="Directory of OBJ meshes.")
    output: Path = Field(..., description="Report directory.")
    normalize: bool = Field(True, description="Normalize meshes before measuring.")


class ObjectStatus(BaseModel):
    """Outcome for one object of a batch."""

    id: str = Field(..., description="Object identifier (file stem or relative path).")
    status: Literal["ok", "warning", "error", "skipped"] = Field(..., description="Outcome.")
    message: Optional[str] = Field(None, description="Error or skip reason.")
    warnings: List[str] = Field(default_factory=list, description="Warning flags.")


class RunManifest(BaseModel):
    """One per batch run; the only place timestamps and timings are recorded."""

    tool_version: str = Field(__version__, description="mesh3d-bench version.")
    command: str = Field(..., description="Command name.")
    config_hash: str = Field(..., description="SHA-256 of the job configuration.")
    config: Dict[str, Any] = Field(..., description="Full job configuration.")
    started_at: str = Field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(),
        description="UTC start time.",
    )
    objects: List[ObjectStatus] = Field(default_factory=list, description="Sorted by id.")
    timings: Dict[str, float] = Field(default_factory=dict, description="Seconds per stage.")
    cache_hit: Optional[bool] = Field(None, description="Whether a cached matrix was used.")

    @property
    def exit_code(self) -> int:
        return 1 if any(o.status == "error" for o in self.objects) else 0


class CommandResult(BaseModel):
    """What a command handler hands back to the CLI."""

    command: str = Field(..., description="Command name.")
    exit_code: int = Field(0, description="Process exit status.")
    outputs: List[str] = Field(default_factory=list, description="Written file paths.")
    warnings: List[str] = Field(default_factory=list, description="Warning flags raised.")


def report_header(job: JobConfig) -> Dict[str, Any]:
    """Provenance block embedded at the top of every report."""
    return {
        "tool_version": __version__,
        "config": job.model_dump(mode="json", exclude={"jobs"}),
        "config_hash": job.config_hash(),
    }

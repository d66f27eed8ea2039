"""Command handlers for the mesh3d-bench CLI."""

import asyncio
import logging
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .batch import (
    CLOUD_SUFFIXES,
    JobLimiter,
    MatrixCache,
    StageTimer,
    batch_lock,
    cache_key,
    list_inputs,
    object_ids,
    require_file,
    write_csv,
    write_json,
)
from .config import BenchSettings
from .errors import (
    BenchError,
    DatasetTooSmall,
    EmptySet,
    MisalignedIds,
    MissingInput,
    ParseError,
)
from .gen_metrics import (
    DistanceMatrix,
    MeshSet,
    SetRole,
    complexity,
    error_decomposition,
    gen_report,
    mmd,
    pairwise_distances,
    stability_from_matrix,
    within_distances,
)
from .geometry import PointCloud, TriangleMesh, load_cloud, load_mesh, normalize_to_unit_cube, write_mesh
from .models import (
    BtFitJob,
    CommandResult,
    ComplexityJob,
    ConvertJob,
    DecomposeJob,
    EvalGenJob,
    EvalReconJob,
    JobConfig,
    ObjectStatus,
    ReconstructJob,
    RunManifest,
    SamplingOptions,
    StabilityJob,
    report_header,
)
from .preference import fit_bt, load_records
from .recon_metrics import (
    ChamferConfig,
    FscoreConfig,
    ReconReport,
    compare_meshes,
    fscore_histogram,
    roundtrip_eval,
)
from .reconstruct import IsoSurfaceConfig, marching_cubes
from .signing import GridSpec, ScalarGrid, compute_sdf, occupancy_grid, read_grid, write_grid

logger = logging.getLogger(__name__)

RECON_METRICS = ("cd", "precision", "recall", "fscore", "nc")
STABILITY_METRICS = ("cov", "mmd", "one_nna")

# (object id, input paths); one path in round-trip mode, two in pair mode
ReconTask = Tuple[str, Tuple[Path, ...]]


def _mean_std(values: Sequence[float]) -> Dict[str, float]:
    array = np.asarray(values, dtype=np.float64)
    return {"mean": float(array.mean()), "std": float(array.std())}


def _prepared_mesh(path: Path, normalize: bool) -> TriangleMesh:
    mesh = load_mesh(path)
    if normalize and not mesh.is_empty:
        mesh, _ = normalize_to_unit_cube(mesh)
    return mesh


def _chamfer_config(job: SamplingOptions) -> ChamferConfig:
    return ChamferConfig(power=job.power, samples_per_mesh=job.samples, seed=job.seed)


def _sampling_key(job: SamplingOptions) -> Dict[str, Any]:
    return job.model_dump(mode="json", include={"power", "samples", "seed", "normalize"})


def _load_cloud(job: SamplingOptions, path: Path) -> PointCloud:
    return load_cloud(path, job.samples, job.seed, normalize=job.normalize)


def _value_series(path: Path, preferred: str) -> pd.Series:
    """Values of a per-reference CSV indexed by its ``id`` column.

    The value column is the only numeric non-id column, else ``preferred``.
    """
    path = require_file(path)
    frame = pd.read_csv(path, dtype={"id": str}, keep_default_na=False)
    if "id" not in frame.columns:
        raise ParseError(f"{path}: missing 'id' column", details={"path": str(path)})
    numeric = [
        c for c in frame.columns if c != "id" and pd.api.types.is_numeric_dtype(frame[c])
    ]
    if len(numeric) == 1:
        column = numeric[0]
    elif preferred in numeric:
        column = preferred
    else:
        raise ParseError(
            f"{path}: cannot tell which column holds the values (expected '{preferred}')",
            details={"path": str(path), "columns": list(frame.columns)},
        )
    ids = frame["id"].astype(str)
    duplicates = sorted(set(ids[ids.duplicated()]))
    if duplicates:
        raise MisalignedIds(
            f"{path}: duplicate ids {duplicates}",
            details={"path": str(path), "duplicates": duplicates},
        )
    return pd.Series(frame[column].to_numpy(dtype=np.float64), index=ids.to_numpy(), name=column)


def _aligned(mmd_values: pd.Series, **others: pd.Series) -> List[np.ndarray]:
    """Reorder ``others`` to the ids of ``mmd_values``; any id mismatch is an error."""
    reference = set(mmd_values.index)
    problems: Dict[str, List[str]] = {}
    for name, series in others.items():
        missing = sorted(reference - set(series.index))
        unexpected = sorted(set(series.index) - reference)
        if missing:
            problems[f"missing_in_{name}"] = missing
        if unexpected:
            problems[f"unexpected_in_{name}"] = unexpected
    if problems:
        raise MisalignedIds("id columns of the decomposition inputs differ", details=problems)
    order = list(mmd_values.index)
    return [series.loc[order].to_numpy() for series in others.values()]


class CommandHandlers:
    """A dispatcher for CLI commands."""

    def __init__(self, settings: BenchSettings):
        self.settings = settings

    def _jobs(self, job: JobConfig) -> int:
        return job.jobs or self.settings.jobs

    def _cache(self, use_cache: bool) -> MatrixCache:
        return MatrixCache(self.settings.cache_dir, self.settings.enable_caching and use_cache)

    def _manifest(self, command: str, job: JobConfig) -> RunManifest:
        return RunManifest(
            command=command, config_hash=job.config_hash(), config=job.model_dump(mode="json")
        )

    def _write_manifest(self, directory: Path, manifest: RunManifest) -> Path:
        payload = manifest.model_dump(mode="json")
        payload["exit_code"] = manifest.exit_code
        return write_json(Path(directory) / "manifest.json", payload)

    async def convert(self, **kwargs: Any) -> CommandResult:
        """Normalize a mesh and write its truncated SDF or occupancy grid."""
        job = ConvertJob(**kwargs)
        require_file(job.input)
        grid, warnings = await asyncio.to_thread(self._convert, job)
        write_grid(grid, job.output)
        logger.info(f"wrote {job.kind} grid N={job.resolution} to {job.output}")
        return CommandResult(command="convert", outputs=[str(job.output)], warnings=warnings)

    def _convert(self, job: ConvertJob) -> Tuple[ScalarGrid, List[str]]:
        warnings = []
        mesh = _prepared_mesh(job.input, job.normalize)
        if mesh.is_empty:
            warnings.append("EmptyMesh")
        elif not mesh.is_closed:
            logger.warning(f"OpenMesh: {job.input} has boundary or non-manifold edges")
            warnings.append("OpenMesh")
        spec = GridSpec.default(job.resolution)
        if job.kind == "occupancy":
            grid = occupancy_grid(mesh, spec, job.sign)
        else:
            grid = compute_sdf(mesh, spec, job.sign, job.cutoff, jobs=self._jobs(job))
        return grid, warnings

    async def reconstruct(self, **kwargs: Any) -> CommandResult:
        """Extract a mesh from a grid with marching cubes."""
        job = ReconstructJob(**kwargs)
        grid = read_grid(require_file(job.input))
        mesh = await asyncio.to_thread(
            marching_cubes, grid, IsoSurfaceConfig(iso_value=job.iso_value)
        )
        warnings = ["EmptyReconstruction"] if mesh.is_empty else []
        write_mesh(mesh, job.output)
        logger.info(f"wrote {len(mesh.faces)} faces to {job.output}")
        return CommandResult(command="reconstruct", outputs=[str(job.output)], warnings=warnings)

    async def eval_recon(self, **kwargs: Any) -> CommandResult:
        """Reconstruction metrics over matching mesh pairs or round trips."""
        job = EvalReconJob(**kwargs)
        jobs = self._jobs(job)
        timer = StageTimer()
        with batch_lock(job.output):
            manifest = self._manifest("eval-recon", job)
            if job.roundtrip is not None:
                paths = list_inputs(job.roundtrip)
                tasks: List[ReconTask] = [(i, (p,)) for i, p in zip(object_ids(paths), paths)]
                skipped: List[ObjectStatus] = []
            else:
                tasks, skipped = self._match_pairs(job.dir_a, job.dir_b)
            if not tasks and not skipped:
                raise MissingInput("no OBJ meshes to evaluate", details={"config": manifest.config})
            tasks.sort(key=lambda task: task[0])

            limiter = JobLimiter(jobs)
            inner_jobs = max(1, jobs // max(1, len(tasks)))
            with timer.stage("objects"):
                outcomes = await limiter.map(
                    partial(self._recon_object, job, jobs=inner_jobs), tasks
                )

            keys = [str(n) for n in job.resolutions] if job.roundtrip is not None else ["pair"]
            aggregate: Dict[str, Any] = {}
            histogram: Dict[str, Any] = {}
            for key in keys:
                reports = [found[key] for _, found in outcomes if key in found]
                if not reports:
                    continue
                aggregate[key] = {m: _mean_std([getattr(r, m) for r in reports]) for m in RECON_METRICS}
                aggregate[key]["objects"] = len(reports)
                counts, edges = fscore_histogram([r.fscore for r in reports])
                histogram[key] = {"counts": counts, "edges": edges}

            rows = []
            for status, found in outcomes:
                for report in found.values():
                    row = {"id": status.id, "resolution": report.resolution}
                    row.update({m: getattr(report, m) for m in RECON_METRICS})
                    row.update({"tau": report.tau, "faces": report.faces})
                    rows.append(row)
            columns = ["id", "resolution", *RECON_METRICS, "tau", "faces"]

            report_path = write_json(
                job.output / "recon_report.json",
                {
                    **report_header(job),
                    "mode": "roundtrip" if job.roundtrip is not None else "pair",
                    "objects": {
                        status.id: {k: r.model_dump(mode="json") for k, r in found.items()}
                        for status, found in outcomes
                        if found
                    },
                    "aggregate": aggregate,
                    "histogram": histogram,
                },
            )
            csv_path = write_csv(job.output / "recon_report.csv", pd.DataFrame(rows, columns=columns))

            manifest.objects = sorted([s for s, _ in outcomes] + skipped, key=lambda s: s.id)
            manifest.timings = timer.timings
            manifest_path = self._write_manifest(job.output, manifest)

        warnings = sorted({w for s in manifest.objects for w in s.warnings})
        return CommandResult(
            command="eval-recon",
            exit_code=manifest.exit_code,
            outputs=[str(report_path), str(csv_path), str(manifest_path)],
            warnings=warnings,
        )

    def _match_pairs(self, dir_a: Path, dir_b: Path) -> Tuple[List[ReconTask], List[ObjectStatus]]:
        paths_a = list_inputs(dir_a)
        paths_b = list_inputs(dir_b)
        by_id_a = dict(zip(object_ids(paths_a), paths_a))
        by_id_b = dict(zip(object_ids(paths_b), paths_b))
        tasks = [(i, (by_id_a[i], by_id_b[i])) for i in sorted(set(by_id_a) & set(by_id_b))]
        skipped = [
            ObjectStatus(id=i, status="skipped", message=f"no matching mesh in {dir_b}")
            for i in sorted(set(by_id_a) - set(by_id_b))
        ] + [
            ObjectStatus(id=i, status="skipped", message=f"no matching mesh in {dir_a}")
            for i in sorted(set(by_id_b) - set(by_id_a))
        ]
        for status in skipped:
            logger.warning(f"skipping {status.id}: {status.message}")
        return tasks, skipped

    def _recon_object(
        self, job: EvalReconJob, task: ReconTask, jobs: int = 1
    ) -> Tuple[ObjectStatus, Dict[str, ReconReport]]:
        object_id, paths = task
        chamfer_config = _chamfer_config(job)
        fscore_config = FscoreConfig(tau=job.tau, samples_per_mesh=job.samples, seed=job.seed)
        found: Dict[str, ReconReport] = {}
        warnings: List[str] = []
        try:
            meshes = [_prepared_mesh(p, job.normalize) for p in paths]
            if any(not m.is_empty and not m.is_closed for m in meshes):
                warnings.append("OpenMesh")
            if job.roundtrip is not None:
                for n in job.resolutions:
                    found[str(n)] = roundtrip_eval(
                        meshes[0],
                        n,
                        job.sign,
                        chamfer_config,
                        fscore_config,
                        job.tau_mode,
                        job.distance_mode,
                        job.cutoff,
                        jobs,
                    )
            else:
                found["pair"] = compare_meshes(
                    meshes[0], meshes[1], chamfer_config, fscore_config, job.distance_mode, jobs=jobs
                )
        except BenchError as e:
            logger.error(f"{object_id}: {type(e).__name__}: {e}")
            status = ObjectStatus(
                id=object_id, status="error", message=f"{type(e).__name__}: {e}", warnings=warnings
            )
            return status, found
        status = "warning" if warnings else "ok"
        return ObjectStatus(id=object_id, status=status, warnings=warnings), found

    async def eval_gen(self, **kwargs: Any) -> CommandResult:
        """COV, MMD and 1-NNA between a generated and a reference set."""
        job = EvalGenJob(**kwargs)
        jobs = self._jobs(job)
        timer = StageTimer()
        with batch_lock(job.output):
            manifest = self._manifest("eval-gen", job)
            gen_paths = list_inputs(job.gen_dir, CLOUD_SUFFIXES)
            ref_paths = list_inputs(job.ref_dir, CLOUD_SUFFIXES)
            gen_ids = object_ids(gen_paths)
            ref_ids = object_ids(ref_paths)
            if not gen_paths or not ref_paths:
                raise EmptySet(
                    "generated and reference directories must both hold meshes or clouds",
                    details={"n_gen": len(gen_paths), "n_ref": len(ref_paths)},
                )

            cache = self._cache(job.use_cache)
            key = cache_key([gen_paths, ref_paths], _sampling_key(job))
            matrix = cache.get(key)
            manifest.cache_hit = matrix is not None
            if matrix is None:
                limiter = JobLimiter(jobs)
                loader = partial(_load_cloud, job)
                with timer.stage("sampling"):
                    generated = MeshSet(gen_ids, await limiter.map(loader, gen_paths), SetRole.GENERATED)
                    reference = MeshSet(ref_ids, await limiter.map(loader, ref_paths), SetRole.REFERENCE)
                with timer.stage("distances"):
                    matrix = await asyncio.to_thread(
                        pairwise_distances, generated, reference, _chamfer_config(job), jobs
                    )
                cache.put(key, matrix)

            with timer.stage("metrics"):
                report = gen_report(matrix, job.seed)
                per_reference = mmd(matrix).per_reference
            report_path = write_json(
                job.output / "gen_report.json",
                {
                    **report_header(job),
                    **report.model_dump(mode="json"),
                    "generated": gen_ids,
                    "reference": ref_ids,
                },
            )
            mmd_path = write_csv(
                job.output / "mmd_per_ref.csv", pd.DataFrame({"id": ref_ids, "mmd": per_reference})
            )
            manifest.objects = sorted(
                [ObjectStatus(id=f"generated/{i}", status="ok") for i in gen_ids]
                + [ObjectStatus(id=f"reference/{i}", status="ok") for i in ref_ids],
                key=lambda s: s.id,
            )
            manifest.timings = timer.timings
            manifest_path = self._write_manifest(job.output, manifest)

        logger.info(f"COV {report.cov:.4f}, MMD {report.mmd:.6g}, 1-NNA {report.one_nna:.4f}")
        return CommandResult(
            command="eval-gen",
            outputs=[str(report_path), str(mmd_path), str(manifest_path)],
            warnings=report.warnings,
        )

    async def stability(self, **kwargs: Any) -> CommandResult:
        """Spread of the set metrics over random subsets of one dataset."""
        job = StabilityJob(**kwargs)
        jobs = self._jobs(job)
        timer = StageTimer()
        with batch_lock(job.output):
            manifest = self._manifest("stability", job)
            paths = list_inputs(job.dataset_dir, CLOUD_SUFFIXES)
            ids = object_ids(paths)
            if 2 * max(job.sizes) > len(paths):
                raise DatasetTooSmall(
                    f"dataset of {len(paths)} items cannot supply two disjoint subsets of "
                    f"size {max(job.sizes)}",
                    details={"dataset": len(paths), "sizes": job.sizes},
                )

            cache = self._cache(job.use_cache)
            key = cache_key([paths], {**_sampling_key(job), "matrix": "dataset"})
            cached = cache.get(key)
            manifest.cache_hit = cached is not None
            if cached is not None:
                full = cached.gg
            else:
                limiter = JobLimiter(jobs)
                with timer.stage("sampling"):
                    clouds = await limiter.map(partial(_load_cloud, job), paths)
                with timer.stage("distances"):
                    full = await asyncio.to_thread(within_distances, clouds, job.power, jobs)
                n = len(paths)
                cache.put(key, DistanceMatrix(full, np.zeros((n, 0)), np.zeros((0, 0)), job.power))

            with timer.stage("subsets"):
                stats = await asyncio.to_thread(
                    stability_from_matrix, full, job.sizes, job.trials, job.seed, job.power
                )
            rows = [
                {"size": size, "metric": metric, "mean": getattr(s, metric)[0], "std": getattr(s, metric)[1]}
                for size, s in sorted(stats.items())
                for metric in STABILITY_METRICS
            ]
            csv_path = write_csv(job.output / "stability.csv", pd.DataFrame(rows))
            json_path = write_json(
                job.output / "stability.json",
                {
                    **report_header(job),
                    "dataset": ids,
                    "sizes": {str(size): s.model_dump(mode="json") for size, s in sorted(stats.items())},
                },
            )
            manifest.objects = [ObjectStatus(id=i, status="ok") for i in sorted(ids)]
            manifest.timings = timer.timings
            manifest_path = self._write_manifest(job.output, manifest)

        return CommandResult(
            command="stability", outputs=[str(csv_path), str(json_path), str(manifest_path)]
        )

    async def bt_fit(self, **kwargs: Any) -> CommandResult:
        """Fit Bradley-Terry scores to preference records."""
        job = BtFitJob(**kwargs)
        records = load_records(require_file(job.input))
        if not records:
            raise ParseError(f"{job.input}: no preference records", details={"path": str(job.input)})
        fit = await asyncio.to_thread(fit_bt, records, job.tolerance, job.max_iter, job.pseudo_count)
        write_json(job.output, {**report_header(job), **fit.model_dump(mode="json")})
        ranking = ", ".join(f"{m}={s:+.3f}" for m, s in sorted(fit.scores.items(), key=lambda kv: -kv[1]))
        logger.info(f"Bradley-Terry scores: {ranking}")
        return CommandResult(
            command="bt-fit",
            outputs=[str(job.output)],
            warnings=[] if fit.converged else ["NotConverged"],
        )

    async def decompose(self, **kwargs: Any) -> CommandResult:
        """Split MMD into reconstruction and compression shares."""
        job = DecomposeJob(**kwargs)
        mmd_values = _value_series(job.mmd_csv, "mmd")
        recon, compression = _aligned(
            mmd_values,
            recon=_value_series(job.recon_csv, "cd"),
            compression=_value_series(job.compression_csv, "cd"),
        )
        result = error_decomposition(mmd_values.to_numpy(), recon, compression)
        warnings = []
        if result.pearson_recon_mmd is None or result.pearson_recon_compression is None:
            warnings.append("ZeroVariance")
        write_json(
            job.output,
            {**report_header(job), **result.model_dump(mode="json"), "ids": list(mmd_values.index)},
        )
        return CommandResult(command="decompose", outputs=[str(job.output)], warnings=warnings)

    async def complexity(self, **kwargs: Any) -> CommandResult:
        """Triangle count and surface-to-volume ratio per mesh."""
        job = ComplexityJob(**kwargs)
        jobs = self._jobs(job)
        timer = StageTimer()
        with batch_lock(job.output):
            manifest = self._manifest("complexity", job)
            paths = list_inputs(job.input)
            if not paths:
                raise MissingInput(f"no OBJ meshes in {job.input}", details={"path": str(job.input)})
            tasks = sorted(zip(object_ids(paths), paths))
            with timer.stage("objects"):
                outcomes = await JobLimiter(jobs).map(partial(self._complexity_object, job), tasks)

            rows = [
                {"id": status.id, **measured}
                for status, measured in outcomes
                if measured is not None
            ]
            frame = pd.DataFrame(rows, columns=["id", "triangles", "area", "volume", "ratio", "closed"])
            finite = frame["ratio"][np.isfinite(frame["ratio"].astype(np.float64))]
            summary = {
                "objects": len(frame),
                "triangles": _mean_std(frame["triangles"]) if len(frame) else None,
                "ratio": _mean_std(finite) if len(finite) else None,
                "zero_volume": int(len(frame) - len(finite)),
            }
            csv_path = write_csv(job.output / "complexity.csv", frame)
            json_path = write_json(
                job.output / "complexity.json",
                {
                    **report_header(job),
                    "objects": {
                        row["id"]: {
                            **{k: v for k, v in row.items() if k != "id"},
                            "ratio": row["ratio"] if np.isfinite(row["ratio"]) else None,
                        }
                        for row in rows
                    },
                    "summary": summary,
                },
            )
            manifest.objects = [status for status, _ in outcomes]
            manifest.timings = timer.timings
            manifest_path = self._write_manifest(job.output, manifest)

        warnings = sorted({w for s in manifest.objects for w in s.warnings})
        return CommandResult(
            command="complexity",
            exit_code=manifest.exit_code,
            outputs=[str(csv_path), str(json_path), str(manifest_path)],
            warnings=warnings,
        )

    def _complexity_object(self, job: ComplexityJob, task: Tuple[str, Path]):
        object_id, path = task
        try:
            measured = complexity(_prepared_mesh(path, job.normalize)).model_dump()
        except BenchError as e:
            logger.error(f"{object_id}: {type(e).__name__}: {e}")
            return ObjectStatus(id=object_id, status="error", message=f"{type(e).__name__}: {e}"), None
        warnings = []
        if not np.isfinite(measured["ratio"]):
            warnings.append("ZeroVolume")
        if not measured["closed"]:
            warnings.append("OpenMesh")
        status = "warning" if warnings else "ok"
        return ObjectStatus(id=object_id, status=status, warnings=warnings), measured

    async def dispatch(self, name: str, arguments: Dict[str, Any]) -> CommandResult:
        """Dispatch a command to the appropriate handler."""
        handler = getattr(self, name.replace("-", "_"), None)
        if handler is None or name.startswith("_") or name == "dispatch":
            raise BenchError(f"Unknown command: {name}", details={"command": name})
        return await handler(**arguments)

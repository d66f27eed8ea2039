"""Batch plumbing: bounded worker pool, output-directory lock, hashing and caches."""

import asyncio
import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, TypeVar

import pandas as pd

from .errors import BatchLocked, MatrixFormatError, MisalignedIds, MissingInput
from .gen_metrics import DistanceMatrix, read_matrix, write_matrix

logger = logging.getLogger(__name__)

T = TypeVar("T")

LOCK_NAME = ".mesh3d-bench.lock"
MESH_SUFFIXES = (".obj",)
CLOUD_SUFFIXES = (".obj", ".npy")


class JobLimiter:
    """Runs blocking jobs in threads, at most ``max_jobs`` at a time."""

    def __init__(self, max_jobs: int = 1):
        self.max_jobs = max_jobs
        self._semaphore = asyncio.Semaphore(max_jobs)

    async def run(self, fn: Callable[..., T], *args: Any, **kwargs: Any) -> T:
        async with self._semaphore:
            return await asyncio.to_thread(fn, *args, **kwargs)

    async def map(self, fn: Callable[..., T], items: Sequence[Any]) -> List[T]:
        """Apply ``fn`` to every item; results keep input order."""
        return list(await asyncio.gather(*(self.run(fn, item) for item in items)))


@contextmanager
def batch_lock(directory: Path) -> Iterator[Path]:
    """Exclusive lock file in ``directory`` for the duration of a batch."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise BatchLocked(
            f"another batch holds {lock}", details={"lock": str(lock)}
        )
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield lock
    finally:
        lock.unlink(missing_ok=True)


class StageTimer:
    """Collects wall-clock seconds per named stage."""

    def __init__(self):
        self.timings: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            logger.debug(f"stage {name}: {elapsed:.3f}s")


def list_inputs(directory: Path, suffixes: Iterable[str] = MESH_SUFFIXES) -> List[Path]:
    """Files in ``directory`` with one of ``suffixes``, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingInput(f"{directory} is not a directory", details={"path": str(directory)})
    suffixes = tuple(s.lower() for s in suffixes)
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in suffixes)


def require_file(path: Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"{path} does not exist", details={"path": str(path)})
    return path


def content_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def cache_key(groups: Sequence[Sequence[Path]], settings: Dict[str, Any]) -> str:
    """Key over the contents of ordered input groups and the relevant settings."""
    digest = hashlib.sha256()
    for group in groups:
        digest.update(b"[")
        for path in group:
            digest.update(content_hash(path).encode("ascii"))
        digest.update(b"]")
    digest.update(json.dumps(settings, sort_keys=True).encode("utf-8"))
    return digest.hexdigest()


class MatrixCache:
    """Distance matrices stored as CDMX files under ``directory``."""

    def __init__(self, directory: Path, enabled: bool = True):
        self.directory = Path(directory)
        self.enabled = enabled

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.cdmx"

    def get(self, key: str) -> Optional[DistanceMatrix]:
        if not self.enabled:
            return None
        path = self.path(key)
        if not path.exists():
            return None
        try:
            matrix = read_matrix(path)
        except MatrixFormatError as e:
            logger.warning(f"ignoring unreadable cache entry {path}: {e}")
            return None
        logger.info(f"distance matrix cache hit: {path.name}")
        return matrix

    def put(self, key: str, matrix: DistanceMatrix) -> Optional[Path]:
        if not self.enabled:
            return None
        path = self.path(key)
        tmp = path.with_suffix(".tmp")
        write_matrix(matrix, tmp)
        tmp.replace(path)
        return path


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    return path


def object_ids(paths: Sequence[Path]) -> List[str]:
    """File stems used as object ids; stems must be unique within a directory."""
    ids = [Path(p).stem for p in paths]
    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    if duplicates:
        raise MisalignedIds(
            f"several files share the id(s) {duplicates}", details={"duplicates": duplicates}
        )
    return ids


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path

"""Exception hierarchy for mesh3d-bench.

Every error carries the process exit code the CLI should use and a
JSON-serializable ``details`` dict that ends up in the error report.
"""

from typing import Any, Dict, Optional


class BenchError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 2

    def __init__(
        self,
        message: str,
        exit_code: Optional[int] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        if exit_code is not None:
            self.exit_code = exit_code
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form written to stderr by the CLI."""
        return {
            "error": type(self).__name__,
            "message": str(self),
            "details": self.details,
        }


# geometry
class ParseError(BenchError):
    """Malformed OBJ record or out-of-range face index."""


class DegenerateExtent(BenchError):
    """All vertices coincide, so the mesh cannot be normalized."""


class DegenerateMesh(BenchError):
    """The mesh has no face with positive area."""


# signing
class InvalidGridSpec(BenchError):
    """Grid resolution or domain violates the grid invariants."""


class DomainTooTight(BenchError):
    """The mesh touches the outermost voxel shell of the grid."""


class CornerIsSurface(BenchError):
    """The flood-fill seed corner is a surface voxel."""


class NoOutsideNeighbor(BenchError):
    """A surface voxel has no outside voxel among its 26 neighbors."""


class GridFormatError(BenchError):
    """Binary grid file is truncated or has a bad header."""


# recon_metrics
class EmptyCloud(BenchError):
    """A point cloud passed to a metric has no points."""


class EmptyReconstruction(BenchError):
    """Marching cubes produced no faces."""


# gen_metrics
class EmptySet(BenchError):
    """A mesh set passed to a set metric has no members."""


class DatasetTooSmall(BenchError):
    """The dataset cannot supply two disjoint subsets of the requested size."""


class ZeroVolume(BenchError):
    """Enclosed volume is too small for a surface-to-volume ratio."""


class MatrixFormatError(BenchError):
    """Binary distance-matrix file is truncated or has a bad header."""


# preference
class SeparatedGraph(BenchError):
    """Some method wins or loses every comparison, so scores diverge."""

    exit_code = 3


class NotConnected(BenchError):
    """The comparison graph has more than one component."""


class UnknownId(BenchError):
    """A method id is not present in the score vector."""


# ddpm
class InvalidRange(BenchError):
    """Noise schedule parameters are out of range."""


class ShapeMismatch(BenchError):
    """Tensor shapes do not agree."""


# cli
class BatchLocked(BenchError):
    """Another batch is already running in the output directory."""


class MisalignedIds(BenchError):
    """Id columns of the decomposition inputs do not match."""


class MissingInput(BenchError):
    """An input file or directory does not exist or holds no usable inputs."""

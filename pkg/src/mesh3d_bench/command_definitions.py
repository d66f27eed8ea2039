"""Command definitions for the mesh3d-bench CLI.

Each command lists its arguments as ``(flags, options)`` pairs passed to
``argparse``. The ``dest`` of every option matches a field of the command's
job model, so parsed arguments validate directly into it.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple


def int_list(text: str) -> List[int]:
    """Parse ``"32,64,128"``."""
    return [int(tok) for tok in text.split(",") if tok.strip()]


Argument = Tuple[Tuple[str, ...], Dict[str, Any]]


@dataclass(frozen=True)
class Command:
    name: str
    description: str
    arguments: List[Argument] = field(default_factory=list)

    @property
    def handler(self) -> str:
        return self.name.replace("-", "_")


_JOBS: Argument = (("--jobs",), {"type": int, "help": "Worker threads (default: MESH3D_JOBS or logical cores)"})
_SEED: Argument = (("--seed",), {"type": int, "help": "Sampling seed (default: 0)"})
_SAMPLES: Argument = (("--samples",), {"type": int, "help": "Surface samples per mesh (default: 10000)"})
_POWER: Argument = (("--power",), {"type": int, "choices": [1, 2], "help": "Chamfer exponent (default: 1)"})
_NO_NORMALIZE: Argument = (
    ("--no-normalize",),
    {"dest": "normalize", "action": "store_false", "default": None, "help": "Skip unit-cube normalization"},
)
_NO_CACHE: Argument = (
    ("--no-cache",),
    {"dest": "use_cache", "action": "store_false", "default": None, "help": "Recompute distance matrices"},
)
_SIGN: Argument = (
    ("--sign",),
    {"choices": ["floodfill", "naive"], "help": "Sign method: flood fill or ray parity (default: floodfill)"},
)
_CUTOFF: Argument = (("--cutoff",), {"type": float, "help": "SDF truncation distance (default: 0.2)"})
_OUT_DIR: Argument = (("--out", "-o"), {"dest": "output", "required": True, "help": "Report directory"})


def get_commands() -> List[Command]:
    """Returns every CLI command."""
    return [
        Command(
            name="convert",
            description="Normalize a mesh and write its truncated SDF or occupancy grid",
            arguments=[
                (("input",), {"help": "Input OBJ mesh"}),
                (("output",), {"help": "Output SDFG grid"}),
                (("--res",), {"dest": "resolution", "type": int, "help": "Voxels per axis (default: 64)"}),
                _SIGN,
                (("--kind",), {"choices": ["sdf", "occupancy"], "help": "Grid content (default: sdf)"}),
                _CUTOFF,
                _NO_NORMALIZE,
                _JOBS,
            ],
        ),
        Command(
            name="reconstruct",
            description="Extract a mesh from a grid with marching cubes",
            arguments=[
                (("input",), {"help": "Input SDFG grid"}),
                (("output",), {"help": "Output OBJ mesh"}),
                (("--iso",), {"dest": "iso_value", "type": float, "help": "Iso level (default: 0 or 0.5)"}),
            ],
        ),
        Command(
            name="eval-recon",
            description="Reconstruction metrics between matching meshes, or mesh-grid-mesh round trips",
            arguments=[
                (("dir_a",), {"nargs": "?", "help": "Reconstructed meshes"}),
                (("dir_b",), {"nargs": "?", "help": "Reference meshes with matching names"}),
                (("--roundtrip",), {"help": "Directory of meshes to round-trip"}),
                _OUT_DIR,
                (("--res",), {"dest": "resolutions", "type": int_list, "help": "Comma-separated resolutions (default: 64)"}),
                _SIGN,
                _CUTOFF,
                (("--tau",), {"type": float, "help": "F-score threshold (default: 0.0125)"}),
                (("--tau-mode",), {"choices": ["absolute", "voxel"], "help": "Absolute tau or voxel_size/8"}),
                (("--distance-mode",), {"choices": ["surface", "samples"], "help": "Distance to surface or to samples (default: surface)"}),
                _POWER,
                _SAMPLES,
                _SEED,
                _NO_NORMALIZE,
                _JOBS,
            ],
        ),
        Command(
            name="eval-gen",
            description="COV, MMD and 1-NNA between a generated and a reference set",
            arguments=[
                (("gen_dir",), {"help": "Generated meshes (.obj) or clouds (.npy)"}),
                (("ref_dir",), {"help": "Reference meshes (.obj) or clouds (.npy)"}),
                _OUT_DIR,
                _POWER,
                _SAMPLES,
                _SEED,
                _NO_NORMALIZE,
                _NO_CACHE,
                _JOBS,
            ],
        ),
        Command(
            name="stability",
            description="Spread of COV, MMD and 1-NNA over random subsets of a dataset",
            arguments=[
                (("dataset_dir",), {"help": "Dataset meshes (.obj) or clouds (.npy)"}),
                _OUT_DIR,
                (("--sizes",), {"type": int_list, "help": "Comma-separated subset sizes (default: 25,50,100,200,400)"}),
                (("--trials",), {"type": int, "help": "Draws per size (default: 100)"}),
                _POWER,
                _SAMPLES,
                _SEED,
                _NO_NORMALIZE,
                _NO_CACHE,
                _JOBS,
            ],
        ),
        Command(
            name="bt-fit",
            description="Fit Bradley-Terry scores to winner,loser records",
            arguments=[
                (("input",), {"help": "CSV with winner,loser header"}),
                (("output",), {"help": "Output JSON"}),
                (("--tolerance",), {"type": float, "help": "Convergence threshold (default: 1e-8)"}),
                (("--max-iter",), {"type": int, "help": "Iteration cap (default: 10000)"}),
                (("--pseudo-count",), {"type": float, "help": "Regularizing wins per compared pair (default: 0)"}),
            ],
        ),
        Command(
            name="decompose",
            description="Share of MMD explained by reconstruction and compression error",
            arguments=[
                (("mmd_csv",), {"help": "CSV with id and per-reference MMD"}),
                (("recon_csv",), {"help": "CSV with id and reconstruction CD"}),
                (("compression_csv",), {"help": "CSV with id and compression CD"}),
                (("output",), {"help": "Output JSON"}),
            ],
        ),
        Command(
            name="complexity",
            description="Triangle count and surface-to-volume ratio per mesh",
            arguments=[
                (("input",), {"help": "Directory of OBJ meshes"}),
                _OUT_DIR,
                _NO_NORMALIZE,
                _JOBS,
            ],
        ),
    ]


SIGN_ALIASES = {"floodfill": "flood_fill", "naive": "raycast_parity"}

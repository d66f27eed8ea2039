"""mesh3d-bench: geometry toolkit for 3D representation benchmarks."""

__version__ = "0.1.0"

"""Synthetic UAV photogrammetry point clouds with automatic semantic labels."""

from synthpc.mesh import CLASS_NAMES, IGNORE_ID, SceneMesh

__version__ = "0.1.0"

__all__ = ["CLASS_NAMES", "IGNORE_ID", "SceneMesh", "__version__"]

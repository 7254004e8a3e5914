"""Triangle-soup scene mesh with per-triangle semantic class and object id."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class SemanticClass(IntEnum):
    GROUND = 0
    BUILDING = 1
    TREE = 2
    VEHICLE = 3
    CLUTTER = 4


CLASS_NAMES = {c.value: c.name.lower() for c in SemanticClass}
IGNORE_ID = 255


def class_id(name_or_id) -> int:
    if isinstance(name_or_id, str):
        return SemanticClass[name_or_id.upper()].value
    return SemanticClass(int(name_or_id)).value


@dataclass(frozen=True)
class Crown:
    """Axis-aligned ellipsoid enclosing a tree crown, in world coordinates."""

    object_id: int
    center: tuple[float, float, float]
    radii: tuple[float, float, float]

    def normalized_radius(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Ellipsoid 'radius' of each point against the crown shrunk by ``margin``."""
        r = np.asarray(self.radii, dtype=float) - margin
        d = (np.asarray(points, dtype=float) - np.asarray(self.center)) / r
        return np.sqrt((d * d).sum(axis=1))


@dataclass
class SceneMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    tri_class: np.ndarray
    tri_object: np.ndarray
    crowns: list[Crown] = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.tri_class = np.asarray(self.tri_class, dtype=np.uint8).reshape(-1)
        self.tri_object = np.asarray(self.tri_object, dtype=np.int64).reshape(-1)
        if self.tri_class.size == 1 and len(self.triangles) > 1:
            self.tri_class = np.repeat(self.tri_class, len(self.triangles))
        if self.tri_object.size == 1 and len(self.triangles) > 1:
            self.tri_object = np.repeat(self.tri_object, len(self.triangles))

    @classmethod
    def empty(cls) -> "SceneMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    @classmethod
    def from_triangles(cls, tris: np.ndarray, klass: int, obj: int = 0) -> "SceneMesh":
        """Build from an (M, 3, 3) array of corner coordinates (no vertex sharing)."""
        tris = np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3)
        m = len(tris)
        return cls(
            tris.reshape(-1, 3),
            np.arange(3 * m).reshape(m, 3),
            np.full(m, klass),
            np.full(m, obj),
        )

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def __len__(self) -> int:
        return self.n_triangles

    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def cross(self) -> np.ndarray:
        c = self.corners()
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.cross(), axis=1)

    def normals(self) -> np.ndarray:
        n = self.cross()
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        used = self.vertices[np.unique(self.triangles)] if len(self.triangles) else self.vertices
        return used.min(axis=0), used.max(axis=0)

    def validate(self) -> None:
        m = len(self.triangles)
        if len(self.tri_class) != m or len(self.tri_object) != m:
            raise ValueError("per-triangle arrays must match the triangle count")
        if m and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if m and not np.isin(self.tri_class, list(CLASS_NAMES)).all():
            raise ValueError("triangle class outside the class table")
        if m and (self.areas() <= 0).any():
            raise ValueError("degenerate (zero-area) triangle")

    def drop_degenerate(self, eps: float = 1e-12) -> "SceneMesh":
        if not len(self.triangles):
            return self
        return self.select(self.areas() > eps)

    def select(self, mask: np.ndarray) -> "SceneMesh":
        return SceneMesh(
            self.vertices,
            self.triangles[mask],
            self.tri_class[mask],
            self.tri_object[mask],
            list(self.crowns),
        )

    def with_object(self, obj: int) -> "SceneMesh":
        return SceneMesh(
            self.vertices, self.triangles, self.tri_class,
            np.full(len(self.triangles), obj), list(self.crowns),
        )

    def transformed(self, rotation: np.ndarray, translation, scale: float = 1.0) -> "SceneMesh":
        """Apply ``x -> rotation @ (scale * x) + translation``; crowns follow the centre only."""
        rot = np.asarray(rotation, dtype=float)
        t = np.asarray(translation, dtype=float)
        verts = (scale * self.vertices) @ rot.T + t
        crowns = [
            Crown(c.object_id,
                  tuple(rot @ (scale * np.asarray(c.center)) + t),
                  tuple(scale * np.asarray(c.radii)))
            for c in self.crowns
        ]
        return SceneMesh(verts, self.triangles, self.tri_class, self.tri_object, crowns)

    @staticmethod
    def concat(meshes) -> "SceneMesh":
        meshes = [m for m in meshes if m is not None]
        if not meshes:
            return SceneMesh.empty()
        offsets = np.cumsum([0] + [len(m.vertices) for m in meshes[:-1]])
        return SceneMesh(
            np.concatenate([m.vertices for m in meshes]),
            np.concatenate([m.triangles + o for m, o in zip(meshes, offsets)]),
            np.concatenate([m.tri_class for m in meshes]),
            np.concatenate([m.tri_object for m in meshes]),
            [c for m in meshes for c in m.crowns],
        )

    def compact(self) -> "SceneMesh":
        """Drop unreferenced vertices."""
        used, inverse = np.unique(self.triangles, return_inverse=True)
        return SceneMesh(
            self.vertices[used], inverse.reshape(-1, 3),
            self.tri_class, self.tri_object, list(self.crowns),
        )


def quad(p0, p1, p2, p3) -> np.ndarray:
    """Two triangles (p0,p1,p2), (p0,p2,p3) for a planar quad given in winding order."""
    return np.array([[p0, p1, p2], [p0, p2, p3]], dtype=np.float64)

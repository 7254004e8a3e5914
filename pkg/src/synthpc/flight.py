"""Lawnmower and crosshatch UAV camera plans with front/side overlap.

Camera convention: the camera looks along its local -z axis, local +x is image
right and local +y is image up. At heading 0 the aircraft flies north (+y) and
image up points along the flight direction.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass(frozen=True)
class CameraIntrinsics:
    image_width: int
    image_height: int
    focal_length: float  # pixels
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.cx is None:
            object.__setattr__(self, "cx", self.image_width / 2)
        if self.cy is None:
            object.__setattr__(self, "cy", self.image_height / 2)
        if min(self.image_width, self.image_height) <= 0 or not self.focal_length > 0:
            raise ValueError("image size and focal length must be positive")
        if not (0 < self.cx < self.image_width and 0 < self.cy < self.image_height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {"image_width": self.image_width, "image_height": self.image_height,
                "focal_length": self.focal_length, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(int(d["image_width"]), int(d["image_height"]), float(d["focal_length"]),
                   float(d["cx"]), float(d["cy"]))


@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray
    rotation: np.ndarray  # camera -> world

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or not abs(np.linalg.det(r) - 1) < 1e-9:
            raise ValueError("orientation must be a proper rotation")
        object.__setattr__(self, "rotation", r)

    @property
    def optical_axis(self) -> np.ndarray:
        return -self.rotation[:, 2]

    def world_to_camera(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - self.position) @ self.rotation

    def __eq__(self, other):
        return (isinstance(other, CameraPose) and np.array_equal(self.position, other.position)
                and np.array_equal(self.rotation, other.rotation))

    __hash__ = None


@dataclass(frozen=True)
class FlightParams:
    aoi: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    altitude: float
    front_overlap: float = 0.8
    side_overlap: float = 0.7
    headings: tuple[float, ...] = (0.0, 90.0)
    ground_elevation: float = 0.0
    gimbal_pitch: float = 0.0  # degrees off nadir, tilting forward

    def __post_init__(self):
        for name in ("front_overlap", "side_overlap"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if not self.altitude > 0:
            raise ValueError("altitude must be > 0")
        x0, y0, x1, y1 = self.aoi
        if x1 < x0 or y1 < y0:
            raise ValueError("aoi must be (xmin, ymin, xmax, ymax)")


def ground_footprint(intrinsics: CameraIntrinsics, altitude: float) -> tuple[float, float]:
    """Nadir footprint (across-track width, along-track height) on flat ground."""
    if not altitude > 0:
        raise ValueError("altitude must be > 0")
    return (altitude * intrinsics.image_width / intrinsics.focal_length,
            altitude * intrinsics.image_height / intrinsics.focal_length)


def heading_rotation(heading_deg: float, gimbal_pitch_deg: float = 0.0) -> np.ndarray:
    """Camera-to-world rotation: nadir view, image up along the compass heading."""
    h = math.radians(heading_deg)
    # rotation about z by -heading maps +y (north) onto (sin h, cos h)
    c, s = math.cos(-h), math.sin(-h)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    if gimbal_pitch_deg:
        p = math.radians(gimbal_pitch_deg)
        cp, sp = math.cos(p), math.sin(p)
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
        return rz @ rx
    return rz


def line_counts(extent: float, spacing: float) -> int:
    return int(math.ceil(extent / spacing - 1e-9)) + 1 if extent > 0 else 1


def plan_lawnmower(params: FlightParams, intrinsics: CameraIntrinsics, heading: float | None = None) -> list[CameraPose]:
    """Serpentine flight lines at one heading covering the aoi."""
    if heading is None:
        if len(params.headings) != 1:
            raise ValueError("plan_lawnmower needs a single heading")
        heading = params.headings[0]
    fw, fh = ground_footprint(intrinsics, params.altitude)
    line_spacing = fw * (1 - params.side_overlap)
    shot_spacing = fh * (1 - params.front_overlap)
    h = math.radians(heading)
    along = np.array([math.sin(h), math.cos(h)])
    across = np.array([math.cos(h), -math.sin(h)])
    x0, y0, x1, y1 = params.aoi
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    center = corners.mean(axis=0)
    a_ext = np.ptp(corners @ across)
    b_ext = np.ptp(corners @ along)
    n_lines = line_counts(a_ext, line_spacing)
    n_shots = line_counts(b_ext, shot_spacing)
    rot = heading_rotation(heading, params.gimbal_pitch)
    z = params.ground_elevation + params.altitude
    poses = []
    for i in range(n_lines):
        a = (i - (n_lines - 1) / 2) * line_spacing
        order = range(n_shots) if i % 2 == 0 else range(n_shots - 1, -1, -1)
        for j in order:
            b = (j - (n_shots - 1) / 2) * shot_spacing
            xy = center + a * across + b * along
            poses.append(CameraPose(np.array([xy[0], xy[1], z]), rot))
    return poses


def plan_crosshatch(params: FlightParams, intrinsics: CameraIntrinsics) -> list[CameraPose]:
    poses = []
    for heading in params.headings:
        poses.extend(plan_lawnmower(params, intrinsics, heading))
    return poses


def poses_to_csv(poses) -> str:
    buf = io.StringIO()
    buf.write("index,x,y,z,qw,qx,qy,qz\n")
    for k, p in enumerate(poses):
        qx, qy, qz, qw = Rotation.from_matrix(p.rotation).as_quat()
        vals = [*p.position, qw, qx, qy, qz]
        buf.write(f"{k}," + ",".join(repr(float(v)) for v in vals) + "\n")
    return buf.getvalue()


def poses_from_csv(text: str) -> list[CameraPose]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "index,x,y,z,qw,qx,qy,qz":
        raise ValueError("pose CSV header must be index,x,y,z,qw,qx,qy,qz")
    poses = []
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 8:
            raise ValueError(f"pose CSV line {n}: expected 8 fields")
        x, y, z, qw, qx, qy, qz = map(float, parts[1:])
        rot = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        poses.append(CameraPose(np.array([x, y, z]), rot))
    return poses


def rig_to_json(intrinsics: CameraIntrinsics) -> str:
    return json.dumps(intrinsics.to_dict(), indent=2, sort_keys=True)

"""Point clouds from rendered frames (exact) and from a parametric reconstruction-noise model.

The noise model stands in for multi-view stereo. It reproduces three artefacts:
depth error along the viewing ray, mismatched points pulled off the surface
towards the camera, and tree crowns that come back as closed shells.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit, prange

from synthpc.cloud import LabeledPointCloud
from synthpc.mesh import SceneMesh, SemanticClass
from synthpc.raycast import _STACK, _closest_hit, build_bvh, camera_rays
from synthpc.rng import derive_seed, hash_uniform
from synthpc.shapes import ellipsoid


def params_digest(params) -> str:
    d = asdict(params) if hasattr(params, "__dataclass_fields__") else params
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


# -- ground truth from depth --------------------------------------------------------


def fuse_depth_frames(frames, intrinsics, stride: int = 1, meta: dict | None = None) -> LabeledPointCloud:
    """Unproject every finite-depth pixel (every ``stride``-th row and column) of each frame.

    ``frames`` holds ``(DepthFrame, LabelFrame, CameraPose)`` triples.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    shape = (intrinsics.image_height, intrinsics.image_width)
    pts, labels = [], []
    for k, (depth, label, pose) in enumerate(frames):
        if depth.depth.shape != shape or label.labels.shape != shape:
            raise ValueError(f"frame {k} does not match the rig image size {shape[1]}x{shape[0]}")
        d = depth.depth[::stride, ::stride].astype(np.float64)
        lab = label.labels[::stride, ::stride]
        ok = np.isfinite(d)
        rays = camera_rays(intrinsics, pose.rotation, stride)
        pts.append(pose.position + rays[ok] * d[ok][:, None])
        labels.append(lab[ok])
    if pts:
        p, lab = np.concatenate(pts), np.concatenate(labels)
    else:
        p, lab = np.empty((0, 3)), np.empty(0, np.uint8)
    return LabeledPointCloud(p, lab, lab.copy(), "depth_fused", dict(meta or {}, stride=stride))


# -- simulated reconstruction ----------------------------------------------------------


@dataclass(frozen=True)
class NoiseParams:
    sigma0: float = 0.03
    depth_coeff: float = 0.0005
    outlier_fraction: float = 0.02
    outlier_max_offset: float = 5.0
    min_views: int = 2
    surface_density: float = 5.0
    crown_as_hull: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.sigma0 < 0 or self.depth_coeff < 0:
            raise ValueError("sigma0 and depth_coeff must be >= 0")
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must be in [0, 1]")
        if self.outlier_max_offset < 0:
            raise ValueError("outlier_max_offset must be >= 0")
        if self.min_views < 1:
            raise ValueError("min_views must be >= 1")
        if not self.surface_density > 0:
            raise ValueError("surface_density must be > 0")


def hull_crowns(scene: SceneMesh) -> SceneMesh:
    """Swap each crown's leaves for the closed surface of its bounding ellipsoid."""
    if not scene.crowns:
        return scene
    centroids = scene.corners().mean(axis=1)
    drop = np.zeros(scene.n_triangles, bool)
    shells = []
    for crown in scene.crowns:
        own = (scene.tri_object == crown.object_id) & (scene.tri_class == SemanticClass.TREE)
        inside = crown.normalized_radius(centroids[own]) <= 1.0 + 1e-9
        drop[np.flatnonzero(own)[inside]] = True
        shells.append(SceneMesh.from_triangles(ellipsoid(crown.center, crown.radii), SemanticClass.TREE,
                                               crown.object_id))
    return SceneMesh.concat([scene.select(~drop), *shells]).compact()


def sample_surface(scene: SceneMesh, density: float, seed: int):
    """Area-uniform samples; candidate i depends only on (seed, i). Returns (points, triangle ids)."""
    areas = scene.areas()
    total = float(areas.sum())
    n = int(round(density * total))
    if n == 0:
        return np.empty((0, 3)), np.empty(0, np.int64)
    cdf = np.cumsum(areas) / total
    keys = np.arange(n, dtype=np.uint64) * np.uint64(3)
    s = derive_seed(seed, "surface-sample")
    u0, u1, u2 = (hash_uniform(s, keys + np.uint64(j)) for j in range(3))
    tri = np.minimum(np.searchsorted(cdf, u0, side="right"), len(areas) - 1)
    c = scene.corners()[tri]
    r1 = np.sqrt(u1)
    a, b = 1.0 - r1, r1 * (1.0 - u2)
    pts = a[:, None] * c[:, 0] + b[:, None] * c[:, 1] + (1.0 - a - b)[:, None] * c[:, 2]
    return pts, tri.astype(np.int64)


@njit(cache=True, inline="always")
def _in_image(p, pos, rot, w, h, f, cx, cy):
    dx, dy, dz = p[0] - pos[0], p[1] - pos[1], p[2] - pos[2]
    xc = rot[0, 0] * dx + rot[1, 0] * dy + rot[2, 0] * dz
    yc = rot[0, 1] * dx + rot[1, 1] * dy + rot[2, 1] * dz
    zc = -(rot[0, 2] * dx + rot[1, 2] * dy + rot[2, 2] * dz)
    if zc <= 0.0:
        return -1.0
    u = f * xc / zc + cx
    v = -f * yc / zc + cy
    if u < 0.0 or v < 0.0 or u >= w or v >= h:
        return -1.0
    return zc


@njit(cache=True, parallel=True)
def _visibility(pts, src_tri, positions, rotations, w, h, f, cx, cy, min_views,
                lo, hi, left, right, start, count, order, v0, v1, v2):
    """Per point: number of confirming views (capped at min_views), nearest seeing pose, its planar depth."""
    n = pts.shape[0]
    n_pose = positions.shape[0]
    views = np.zeros(n, np.int64)
    nearest = np.full(n, -1, np.int64)
    depth = np.zeros(n)
    chunk = 256
    for c in prange((n + chunk - 1) // chunk):
        stack = np.empty(_STACK, np.int64)
        dist = np.empty(n_pose)
        d = np.empty(3)
        for i in range(c * chunk, min(n, (c + 1) * chunk)):
            p = pts[i]
            for k in range(n_pose):
                dist[k] = ((p[0] - positions[k, 0]) ** 2 + (p[1] - positions[k, 1]) ** 2
                           + (p[2] - positions[k, 2]) ** 2)
            by_dist = np.argsort(dist, kind="mergesort")
            for q in range(n_pose):
                k = by_dist[q]
                zc = _in_image(p, positions[k], rotations[k], w, h, f, cx, cy)
                if zc <= 0.0:
                    continue
                for a in range(3):
                    d[a] = p[a] - positions[k, a]
                t, tri = _closest_hit(positions[k], d, 0.0, np.inf, lo, hi, left, right, start, count,
                                      order, v0, v1, v2, stack)
                # the sample is seen if the first hit is its own triangle or no closer than itself
                if tri == src_tri[i] or t >= 1.0 - 1e-7:
                    if views[i] == 0:
                        nearest[i] = k
                        depth[i] = zc
                    views[i] += 1
                    if views[i] >= min_views:
                        break
    return views, nearest, depth


def view_counts(scene_or_bvh, points, src_tri, intrinsics, poses, cap: int):
    """Confirming-view counts, nearest seeing pose and planar depth for surface samples."""
    bvh = scene_or_bvh if hasattr(scene_or_bvh, "kernel_args") else build_bvh(scene_or_bvh)
    positions = np.ascontiguousarray([p.position for p in poses], dtype=np.float64).reshape(-1, 3)
    rotations = np.ascontiguousarray([p.rotation for p in poses], dtype=np.float64).reshape(-1, 3, 3)
    return _visibility(np.ascontiguousarray(points, dtype=np.float64), np.asarray(src_tri, dtype=np.int64),
                       positions, rotations, float(intrinsics.image_width), float(intrinsics.image_height),
                       float(intrinsics.focal_length), float(intrinsics.cx), float(intrinsics.cy), int(cap),
                       *bvh.kernel_args())


def _gaussian(seed: int, keys: np.ndarray) -> np.ndarray:
    """Box-Muller normals from two keyed uniforms per candidate."""
    u1 = hash_uniform(seed, keys * np.uint64(2))
    u2 = hash_uniform(seed, keys * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def simulate_photogrammetric_cloud(scene: SceneMesh, rig, params: NoiseParams, return_sources: bool = False):
    """Noisy reconstruction of ``scene`` as seen from ``rig = (intrinsics, poses)``.

    Candidates are sampled on the surface, kept when at least ``min_views`` poses
    see them, jittered along the ray to the nearest seeing pose and, for an exact
    ``round(outlier_fraction * kept)`` of them, pulled towards that camera.
    With ``return_sources`` the result is ``(cloud, source_points, source_triangles,
    surface_mesh)``.
    """
    intrinsics, poses = rig
    poses = list(poses)
    if not poses:
        raise ValueError("the rig has no poses")
    surface = hull_crowns(scene) if params.crown_as_hull else scene
    bvh = build_bvh(surface)
    src, src_tri = sample_surface(surface, params.surface_density, params.seed)
    views, nearest, depth = view_counts(bvh, src, src_tri, intrinsics, poses, params.min_views)
    keep = np.flatnonzero(views >= params.min_views)
    src, src_tri, nearest, depth = src[keep], src_tri[keep], nearest[keep], depth[keep]
    cam = np.asarray([poses[k].position for k in nearest]).reshape(-1, 3)
    to_cam = cam - src
    to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)

    keys = keep.astype(np.uint64)
    sd = params.sigma0 + params.depth_coeff * depth
    jitter = _gaussian(derive_seed(params.seed, "jitter"), keys) * sd
    pts = src + jitter[:, None] * to_cam

    n_out = int(round(params.outlier_fraction * len(keep)))
    if n_out:
        score = hash_uniform(derive_seed(params.seed, "outlier-pick"), keys)
        chosen = np.lexsort((keep, score))[:n_out]
        offset = params.outlier_max_offset * hash_uniform(derive_seed(params.seed, "outlier-offset"), keys[chosen])
        pts[chosen] += offset[:, None] * to_cam[chosen]

    true_label = surface.tri_class[src_tri]
    meta = {"seed": int(params.seed), "params_digest": params_digest(params)}
    cloud = LabeledPointCloud(pts, true_label, true_label.copy(), "photogrammetric_sim", meta)
    if return_sources:
        return cloud, src, src_tri, surface
    return cloud

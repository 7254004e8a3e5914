"""Label transfer onto point clouds: naive 2D-label projection and k-NN from a labelled source."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from synthpc.cloud import LabeledPointCloud
from synthpc.kdtree import build_kdtree
from synthpc.mesh import IGNORE_ID

DEPTH_TOLERANCE = 0.5  # metres


@dataclass(frozen=True)
class TransferParams:
    k: int = 3
    max_radius: float = float("inf")

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.max_radius > 0:
            raise ValueError("max_radius must be > 0")


@njit(cache=True, parallel=True)
def _project(points, positions, rotations, depths, labels, f, cx, cy, depth_check, tol):
    n = points.shape[0]
    n_frames, h, w = labels.shape
    out = np.full(n, 255, np.uint8)
    for i in prange(n):
        best_cos = -2.0
        best = 255
        for k in range(n_frames):
            dx = points[i, 0] - positions[k, 0]
            dy = points[i, 1] - positions[k, 1]
            dz = points[i, 2] - positions[k, 2]
            r = rotations[k]
            xc = r[0, 0] * dx + r[1, 0] * dy + r[2, 0] * dz
            yc = r[0, 1] * dx + r[1, 1] * dy + r[2, 1] * dz
            zc = -(r[0, 2] * dx + r[1, 2] * dy + r[2, 2] * dz)
            if zc <= 0.0:
                continue
            u = f * xc / zc + cx
            v = -f * yc / zc + cy
            if u < 0.0 or v < 0.0 or u >= w or v >= h:
                continue
            col, row = int(u), int(v)
            if depth_check and not abs(zc - depths[k, row, col]) <= tol:
                continue
            # view angle to nadir of the line of sight; larger cosine is less oblique
            cos_nadir = -dz / np.sqrt(dx * dx + dy * dy + dz * dz)
            if cos_nadir > best_cos:
                best_cos = cos_nadir
                best = labels[k, row, col]
        out[i] = best
    return out


def annotate_by_projection(target: LabeledPointCloud, frames, intrinsics, depth_check: bool = False,
                           tolerance: float = DEPTH_TOLERANCE) -> np.ndarray:
    """Read each point's label from the least-oblique frame it projects into.

    ``frames`` holds ``(LabelFrame, DepthFrame, CameraPose)`` triples. With
    ``depth_check`` a frame is skipped when the point's planar depth differs from
    the stored depth by more than ``tolerance``. Unresolved points get 255.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    labels = np.ascontiguousarray(np.stack([lf.labels for lf, _, _ in frames]), dtype=np.uint8)
    depths = np.ascontiguousarray(np.stack([df.depth for _, df, _ in frames]), dtype=np.float32)
    positions = np.ascontiguousarray([p.position for _, _, p in frames], dtype=np.float64)
    rotations = np.ascontiguousarray([p.rotation for _, _, p in frames], dtype=np.float64)
    return _project(np.ascontiguousarray(target.points), positions, rotations, depths, labels,
                    float(intrinsics.focal_length), float(intrinsics.cx), float(intrinsics.cy),
                    bool(depth_check), float(tolerance))


@njit(cache=True, parallel=True)
def _vote(nbr_label, nbr_idx):
    """Majority label per row; ties go to the tied label whose member ranks nearest."""
    m, k = nbr_label.shape
    out = np.full(m, 255, np.uint8)
    for r in prange(m):
        counts = np.zeros(256, np.int64)
        first = np.full(256, k, np.int64)
        for j in range(k):
            if nbr_idx[r, j] < 0:
                break
            lab = nbr_label[r, j]
            counts[lab] += 1
            if first[lab] == k:
                first[lab] = j
        best, best_c, best_f = 255, 0, k
        for lab in range(256):
            c = counts[lab]
            if c > best_c or (c == best_c and c > 0 and first[lab] < best_f):
                best, best_c, best_f = lab, c, first[lab]
        out[r] = best
    return out


def annotate_by_knn(target: LabeledPointCloud, source: LabeledPointCloud, params: TransferParams = TransferParams(),
                    tree=None) -> np.ndarray:
    """Majority label of the k nearest source points (within ``max_radius``); 255 when none."""
    if len(source) == 0:
        raise ValueError("source cloud is empty")
    tree = tree if tree is not None else build_kdtree(source.points)
    k = min(params.k, len(source))
    _, idx = tree.query(target.points, k, params.max_radius)
    nbr_label = np.where(idx >= 0, source.label[np.maximum(idx, 0)], IGNORE_ID).astype(np.uint8)
    return _vote(nbr_label, idx)

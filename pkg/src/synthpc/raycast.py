"""BVH ray casting and depth/label frame rendering.

Triangles are tested with the watertight algorithm of Woop, Benthin and Wald,
so a ray through a shared edge hits both neighbours and the tie is settled by
the lower triangle id. Closest hit is the minimum of (t, triangle id), which
makes the result independent of traversal order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba  # noqa: E402
import numpy as np
from numba import njit, prange  # noqa: E402

from synthpc.mesh import IGNORE_ID, SceneMesh

LEAF_SIZE = 4
_STACK = 128
_BOX_PAD = 1e-12


def set_threads(n: int | None) -> int:
    """Set the numba worker count, clamped to what the runtime allows; returns it."""
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if n is None else max(1, min(int(n), limit))
    numba.set_num_threads(n)
    return n


# -- construction --------------------------------------------------------------


@njit(cache=True)
def _select(order, keys, s, e, k):
    """Partially order ``order[s:e]`` so position k holds the k-th smallest key (quickselect)."""
    lo, hi = s, e - 1
    while hi > lo:
        mid = (lo + hi) // 2
        a, b, c = keys[order[lo]], keys[order[mid]], keys[order[hi]]
        if a < b:
            pivot = b if b < c else (c if a < c else a)
        else:
            pivot = a if a < c else (c if b < c else b)
        i, j = lo, hi
        while i <= j:
            while keys[order[i]] < pivot:
                i += 1
            while keys[order[j]] > pivot:
                j -= 1
            if i <= j:
                tmp = order[i]
                order[i] = order[j]
                order[j] = tmp
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            return


@njit(cache=True)
def _build(tri_lo, tri_hi, centroids, leaf_size):
    m = tri_lo.shape[0]
    cap = 2 * m + 1
    node_lo = np.empty((cap, 3))
    node_hi = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    order = np.arange(m)
    keys = np.empty(m)
    stack_node = np.empty(128, np.int64)
    stack_s = np.empty(128, np.int64)
    stack_e = np.empty(128, np.int64)
    sp = 0
    stack_node[0] = 0
    stack_s[0] = 0
    stack_e[0] = m
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        s = stack_s[sp]
        e = stack_e[sp]
        blo = np.full(3, np.inf)
        bhi = np.full(3, -np.inf)
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for q in range(s, e):
            t = order[q]
            for a in range(3):
                blo[a] = min(blo[a], tri_lo[t, a])
                bhi[a] = max(bhi[a], tri_hi[t, a])
                clo[a] = min(clo[a], centroids[t, a])
                chi[a] = max(chi[a], centroids[t, a])
        for a in range(3):
            node_lo[node, a] = blo[a]
            node_hi[node, a] = bhi[a]
        axis = 0
        ext = chi[0] - clo[0]
        for a in range(1, 3):
            if chi[a] - clo[a] > ext:
                ext = chi[a] - clo[a]
                axis = a
        if e - s <= leaf_size or ext <= 0.0:
            start[node] = s
            count[node] = e - s
            continue
        for q in range(s, e):
            keys[order[q]] = centroids[order[q], axis]
        mid = (s + e) // 2
        _select(order, keys, s, e, mid)
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack_node[sp] = rc
        stack_s[sp] = mid
        stack_e[sp] = e
        sp += 1
        stack_node[sp] = lc
        stack_s[sp] = s
        stack_e[sp] = mid
        sp += 1
    return node_lo[:n_nodes], node_hi[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], order


@dataclass
class Bvh:
    node_lo: np.ndarray
    node_hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    tri_class: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def n_triangles(self) -> int:
        return len(self.v0)

    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    def leaf_triangles(self, node: int) -> np.ndarray:
        return self.order[self.start[node]:self.start[node] + self.count[node]]

    def kernel_args(self):
        return (self.node_lo, self.node_hi, self.left, self.right, self.start, self.count,
                self.order, self.v0, self.v1, self.v2)


def build_bvh(scene: SceneMesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    if scene.n_triangles == 0:
        raise ValueError("cannot build a BVH over an empty scene")
    c = np.ascontiguousarray(scene.corners())
    tri_lo = c.min(axis=1)
    tri_hi = c.max(axis=1)
    centroids = c.mean(axis=1)
    lo, hi, left, right, start, count, order = _build(tri_lo, tri_hi, centroids, leaf_size)
    # conservative boxes so round-off in the slab test never culls a true hit
    lo = lo - _BOX_PAD * (1.0 + np.abs(lo))
    hi = hi + _BOX_PAD * (1.0 + np.abs(hi))
    return Bvh(lo, hi, left, right, start, count, order,
               np.ascontiguousarray(c[:, 0]), np.ascontiguousarray(c[:, 1]), np.ascontiguousarray(c[:, 2]),
               scene.tri_class.copy())


# -- intersection kernels --------------------------------------------------------


@njit(cache=True, inline="always")
def _ray_setup(d):
    ax0, ax1, ax2 = abs(d[0]), abs(d[1]), abs(d[2])
    kz = 0
    if ax1 > ax0 and ax1 >= ax2:
        kz = 1
    elif ax2 > ax0 and ax2 > ax1:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    sz = 1.0 / d[kz]
    return kx, ky, kz, d[kx] * sz, d[ky] * sz, sz


@njit(cache=True, inline="always")
def _tri_t(o, kx, ky, kz, sx, sy, sz, v0, v1, v2, tmin, tmax):
    """Watertight ray/triangle test; returns t or +inf."""
    ax_ = v0[kx] - o[kx]
    ay_ = v0[ky] - o[ky]
    az_ = v0[kz] - o[kz]
    bx_ = v1[kx] - o[kx]
    by_ = v1[ky] - o[ky]
    bz_ = v1[kz] - o[kz]
    cx_ = v2[kx] - o[kx]
    cy_ = v2[ky] - o[ky]
    cz_ = v2[kz] - o[kz]
    ax = ax_ - sx * az_
    ay = ay_ - sy * az_
    bx = bx_ - sx * bz_
    by = by_ - sy * bz_
    cx = cx_ - sx * cz_
    cy = cy_ - sy * cz_
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return np.inf
    det = u + v + w
    if det == 0.0:
        return np.inf
    t = (u * sz * az_ + v * sz * bz_ + w * sz * cz_) / det
    if t > tmin and t <= tmax:
        return t
    return np.inf


@njit(cache=True, inline="always")
def _box_entry(o, inv, dnz, lo, hi, node, tmin, tmax):
    tn = tmin
    tf = tmax
    for a in range(3):
        if dnz[a]:
            t1 = (lo[node, a] - o[a]) * inv[a]
            t2 = (hi[node, a] - o[a]) * inv[a]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tn:
                tn = t1
            if t2 < tf:
                tf = t2
        elif o[a] < lo[node, a] or o[a] > hi[node, a]:
            return np.inf
    if tn <= tf:
        return tn
    return np.inf


@njit(cache=True)
def _closest_hit(o, d, tmin, tmax, lo, hi, left, right, start, count, order, v0, v1, v2, stack):
    kx, ky, kz, sx, sy, sz = _ray_setup(d)
    inv = np.empty(3)
    dnz = np.empty(3, np.bool_)
    for a in range(3):
        dnz[a] = d[a] != 0.0
        inv[a] = 1.0 / d[a] if dnz[a] else 0.0
    best_t = tmax
    best_tri = -1
    if _box_entry(o, inv, dnz, lo, hi, 0, tmin, best_t) == np.inf:
        return np.inf, -1
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if left[node] < 0:
            for q in range(start[node], start[node] + count[node]):
                tri = order[q]
                t = _tri_t(o, kx, ky, kz, sx, sy, sz, v0[tri], v1[tri], v2[tri], tmin, best_t)
                if t < best_t or (t == best_t and t < np.inf and (best_tri < 0 or tri < best_tri)):
                    best_t = t
                    best_tri = tri
            continue
        l_, r_ = left[node], right[node]
        tl = _box_entry(o, inv, dnz, lo, hi, l_, tmin, best_t)
        tr = _box_entry(o, inv, dnz, lo, hi, r_, tmin, best_t)
        if tl <= tr:
            if tr < np.inf:
                stack[sp] = r_
                sp += 1
            if tl < np.inf:
                stack[sp] = l_
                sp += 1
        else:
            if tl < np.inf:
                stack[sp] = l_
                sp += 1
            if tr < np.inf:
                stack[sp] = r_
                sp += 1
    if best_tri < 0:
        return np.inf, -1
    return best_t, best_tri


@njit(cache=True, parallel=True)
def _cast_batch(origins, dirs, tmin, tmax, lo, hi, left, right, start, count, order, v0, v1, v2):
    n = origins.shape[0]
    t_out = np.empty(n)
    tri_out = np.empty(n, np.int64)
    chunk = 256
    for c in prange((n + chunk - 1) // chunk):
        stack = np.empty(_STACK, np.int64)
        for i in range(c * chunk, min(n, (c + 1) * chunk)):
            t, tri = _closest_hit(origins[i], dirs[i], tmin, tmax[i], lo, hi, left, right, start, count,
                                  order, v0, v1, v2, stack)
            t_out[i] = t
            tri_out[i] = tri
    return t_out, tri_out


@njit(cache=True, parallel=True)
def _brute_batch(origins, dirs, tmin, v0, v1, v2):
    n = origins.shape[0]
    m = v0.shape[0]
    t_out = np.empty(n)
    tri_out = np.empty(n, np.int64)
    for i in prange(n):
        o = origins[i]
        kx, ky, kz, sx, sy, sz = _ray_setup(dirs[i])
        best_t = np.inf
        best = -1
        for tri in range(m):
            t = _tri_t(o, kx, ky, kz, sx, sy, sz, v0[tri], v1[tri], v2[tri], tmin, best_t)
            if t < best_t:
                best_t = t
                best = tri
        t_out[i] = best_t
        tri_out[i] = best
    return t_out, tri_out


def cast_rays(bvh: Bvh, origins, dirs, tmin: float = 0.0, tmax=np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Closest hits for many rays; ``t`` is in units of each (unnormalised) direction."""
    origins = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
    dirs = np.ascontiguousarray(np.asarray(dirs, dtype=np.float64).reshape(-1, 3))
    tmax = np.ascontiguousarray(np.broadcast_to(np.asarray(tmax, dtype=np.float64), (len(origins),)))
    return _cast_batch(origins, dirs, float(tmin), tmax, *bvh.kernel_args())


def cast_rays_brute(scene_or_bvh, origins, dirs, tmin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """All-triangle reference caster (same triangle test, no hierarchy)."""
    if isinstance(scene_or_bvh, Bvh):
        v0, v1, v2 = scene_or_bvh.v0, scene_or_bvh.v1, scene_or_bvh.v2
    else:
        c = scene_or_bvh.corners()
        v0, v1, v2 = (np.ascontiguousarray(c[:, k]) for k in range(3))
    origins = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
    dirs = np.ascontiguousarray(np.asarray(dirs, dtype=np.float64).reshape(-1, 3))
    return _brute_batch(origins, dirs, float(tmin), v0, v1, v2)


@dataclass(frozen=True)
class Hit:
    t: float
    triangle: int
    klass: int


def ray_cast(bvh: Bvh, origin, direction) -> Hit | None:
    """Nearest hit along a ray; ``t`` is measured in metres along the normalised direction."""
    d = np.asarray(direction, dtype=float).reshape(3)
    norm = float(np.linalg.norm(d))
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("ray direction must be non-zero")
    t, tri = cast_rays(bvh, np.asarray(origin, dtype=float), d / norm)
    if tri[0] < 0:
        return None
    return Hit(float(t[0]), int(tri[0]), int(bvh.tri_class[tri[0]]))


# -- frames ----------------------------------------------------------------------


@dataclass
class DepthFrame:
    """Planar depth (metres along the optical axis); misses are +inf."""

    depth: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass
class LabelFrame:
    """Semantic class per pixel; misses are 255."""

    labels: np.ndarray

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


def camera_rays(intrinsics, rotation, stride: int = 1) -> np.ndarray:
    """World directions through pixel centres, scaled to unit axial length; shape (H', W', 3)."""
    v, u = np.mgrid[0:intrinsics.image_height:stride, 0:intrinsics.image_width:stride]
    x = (u + 0.5 - intrinsics.cx) / intrinsics.focal_length
    y = -(v + 0.5 - intrinsics.cy) / intrinsics.focal_length
    d_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
    return d_cam @ np.asarray(rotation).T


@njit(cache=True, inline="always")
def _plane_t(o, d, a, b, c, t):
    """Re-solve the hit distance against the triangle's plane; exact for axis-aligned planes."""
    e1x, e1y, e1z = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    e2x, e2y, e2z = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    nx = e1y * e2z - e1z * e2y
    ny = e1z * e2x - e1x * e2z
    nz = e1x * e2y - e1y * e2x
    den = nx * d[0] + ny * d[1] + nz * d[2]
    if den == 0.0:
        return t
    tp = (nx * (a[0] - o[0]) + ny * (a[1] - o[1]) + nz * (a[2] - o[2])) / den
    # near-grazing rays are ill-conditioned; keep the watertight value there
    return tp if abs(tp - t) <= 1e-9 * t else t


@njit(cache=True, parallel=True)
def _render(origin, rot, w, h, f, cx, cy, tri_class, lo, hi, left, right, start, count, order, v0, v1, v2):
    depth = np.empty((h, w), np.float64)
    labels = np.empty((h, w), np.uint8)
    for row in prange(h):
        stack = np.empty(_STACK, np.int64)
        d = np.empty(3)
        for col in range(w):
            x = (col + 0.5 - cx) / f
            y = -(row + 0.5 - cy) / f
            for a in range(3):
                d[a] = rot[a, 0] * x + rot[a, 1] * y - rot[a, 2]
            t, tri = _closest_hit(origin, d, 0.0, np.inf, lo, hi, left, right, start, count, order,
                                  v0, v1, v2, stack)
            if tri < 0:
                depth[row, col] = np.inf
                labels[row, col] = 255
            else:
                depth[row, col] = _plane_t(origin, d, v0[tri], v1[tri], v2[tri], t)
                labels[row, col] = tri_class[tri]
    return depth, labels


def render_frame(bvh: Bvh, pose, intrinsics) -> tuple[DepthFrame, LabelFrame]:
    depth, labels = _render(
        np.ascontiguousarray(pose.position, dtype=np.float64), np.ascontiguousarray(pose.rotation),
        int(intrinsics.image_width), int(intrinsics.image_height), float(intrinsics.focal_length),
        float(intrinsics.cx), float(intrinsics.cy), bvh.tri_class, *bvh.kernel_args(),
    )
    assert IGNORE_ID == 255
    return DepthFrame(depth), LabelFrame(labels)


def render_frames(bvh: Bvh, poses, intrinsics) -> list[tuple[DepthFrame, LabelFrame]]:
    return [render_frame(bvh, p, intrinsics) for p in poses]

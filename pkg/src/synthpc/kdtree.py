"""Exact k-nearest-neighbour search over 3D points.

Neighbours are ordered by (squared distance, source index), so at equal
distance the lower index wins. Squared distances are computed as
``dx*dx + dy*dy + dz*dz`` in that order, and a linear scan using the same
expression returns bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

LEAF_SIZE = 16


@njit(cache=True)
def _build(pts, leaf_size):
    n = pts.shape[0]
    cap = 2 * (n // max(1, leaf_size) + 1) * 2 + 1
    node_lo = np.empty((cap, 3))
    node_hi = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    stop = np.zeros(cap, np.int64)
    order = np.arange(n)
    st_node = np.empty(256, np.int64)
    st_s = np.empty(256, np.int64)
    st_e = np.empty(256, np.int64)
    st_node[0], st_s[0], st_e[0] = 0, 0, n
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node, s, e = st_node[sp], st_s[sp], st_e[sp]
        for a in range(3):
            node_lo[node, a] = np.inf
            node_hi[node, a] = -np.inf
        for q in range(s, e):
            for a in range(3):
                v = pts[order[q], a]
                if v < node_lo[node, a]:
                    node_lo[node, a] = v
                if v > node_hi[node, a]:
                    node_hi[node, a] = v
        start[node], stop[node] = s, e
        axis = 0
        spread = node_hi[node, 0] - node_lo[node, 0]
        for a in range(1, 3):
            if node_hi[node, a] - node_lo[node, a] > spread:
                spread = node_hi[node, a] - node_lo[node, a]
                axis = a
        if e - s <= leaf_size or spread <= 0.0:
            continue
        # median split along the widest axis; ties ordered by index for determinism
        sub = order[s:e].copy()
        keys = pts[sub, axis]
        perm = np.argsort(keys, kind="mergesort")
        order[s:e] = sub[perm]
        mid = (s + e) // 2
        lc, rc = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = lc, rc
        st_node[sp], st_s[sp], st_e[sp] = rc, mid, e
        sp += 1
        st_node[sp], st_s[sp], st_e[sp] = lc, s, mid
        sp += 1
    return node_lo[:n_nodes], node_hi[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], stop[:n_nodes], order


@njit(cache=True, inline="always")
def _box_d2(q, lo, hi, node):
    d2 = 0.0
    for a in range(3):
        if q[a] < lo[node, a]:
            t = lo[node, a] - q[a]
            d2 += t * t
        elif q[a] > hi[node, a]:
            t = q[a] - hi[node, a]
            d2 += t * t
    return d2


@njit(cache=True)
def _query_one(q, k, r2, pts, lo, hi, left, right, start, stop, order, best_d, best_i, stack):
    found = 0
    for j in range(k):
        best_d[j] = np.inf
        best_i[j] = -1
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        bound = best_d[k - 1] if found == k else r2
        if _box_d2(q, lo, hi, node) > bound:
            continue
        if left[node] < 0:
            for p in range(start[node], stop[node]):
                i = order[p]
                dx = pts[i, 0] - q[0]
                dy = pts[i, 1] - q[1]
                dz = pts[i, 2] - q[2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 > r2:
                    continue
                if found == k and (d2 > best_d[k - 1] or (d2 == best_d[k - 1] and i > best_i[k - 1])):
                    continue
                j = found if found < k else k - 1
                while j > 0 and (best_d[j - 1] > d2 or (best_d[j - 1] == d2 and best_i[j - 1] > i)):
                    best_d[j] = best_d[j - 1]
                    best_i[j] = best_i[j - 1]
                    j -= 1
                best_d[j] = d2
                best_i[j] = i
                if found < k:
                    found += 1
            continue
        a, b = left[node], right[node]
        da, db = _box_d2(q, lo, hi, a), _box_d2(q, lo, hi, b)
        if da <= db:
            stack[sp] = b
            stack[sp + 1] = a
        else:
            stack[sp] = a
            stack[sp + 1] = b
        sp += 2
    return found


@njit(cache=True, parallel=True)
def _query_batch(queries, k, r2, pts, lo, hi, left, right, start, stop, order):
    m = queries.shape[0]
    out_d = np.full((m, k), np.inf)
    out_i = np.full((m, k), -1, np.int64)
    chunk = 512
    for c in prange((m + chunk - 1) // chunk):
        stack = np.empty(256, np.int64)
        bd = np.empty(k)
        bi = np.empty(k, np.int64)
        for r in range(c * chunk, min(m, (c + 1) * chunk)):
            _query_one(queries[r], k, r2, pts, lo, hi, left, right, start, stop, order, bd, bi, stack)
            for j in range(k):
                out_d[r, j] = bd[j]
                out_i[r, j] = bi[j]
    return out_d, out_i


@dataclass
class KdTree:
    points: np.ndarray
    node_lo: np.ndarray
    node_hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    order: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries, k: int = 1, max_radius: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the k nearest points, shape (m, k); -1/inf pad past ``max_radius``."""
        k = int(k)
        if k < 1:
            raise ValueError("k must be >= 1")
        if k > len(self.points):
            raise ValueError("k exceeds the number of source points")
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        r2 = float(max_radius) ** 2 if np.isfinite(max_radius) else np.inf
        d2, idx = _query_batch(q, k, r2, self.points, self.node_lo, self.node_hi, self.left, self.right,
                               self.start, self.stop, self.order)
        return np.sqrt(d2), idx


def build_kdtree(points, leaf_size: int = LEAF_SIZE) -> KdTree:
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    if len(pts) == 0:
        raise ValueError("cannot build a k-d tree over zero points")
    return KdTree(pts, *_build(pts, leaf_size))


def knn_query(tree: KdTree, point, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the k nearest source points to one query point."""
    d, i = tree.query(np.asarray(point, dtype=float).reshape(1, 3), k)
    return i[0], d[0]


def knn_linear(points, query, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference linear scan with the same tie rule; returns (indices, distances)."""
    pts = np.asarray(points, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    dx = pts[:, 0] - q[0]
    dy = pts[:, 1] - q[1]
    dz = pts[:, 2] - q[2]
    d2 = dx * dx + dy * dy + dz * dz
    idx = np.lexsort((np.arange(len(pts)), d2))[:k]
    return idx, np.sqrt(d2[idx])

"""Planar polygon and polyline helpers shared by buildings, terrain and placement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import LinearRing, MultiPoint, Polygon


def signed_area(ring) -> float:
    r = np.asarray(ring, dtype=float)
    x, y = r[:, 0], r[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def ensure_ccw(ring) -> np.ndarray:
    r = np.asarray(ring, dtype=float)
    return r[::-1].copy() if signed_area(r) < 0 else r.copy()


def open_ring(ring) -> np.ndarray:
    """Strip a repeated closing vertex, if present."""
    r = np.asarray(ring, dtype=float)
    if len(r) > 1 and np.array_equal(r[0], r[-1]):
        r = r[:-1]
    return r


def is_simple(ring) -> bool:
    r = np.asarray(ring, dtype=float)
    if len(r) < 3 or abs(signed_area(r)) <= 0:
        return False
    return bool(LinearRing(r).is_simple)


def points_in_polygon(points, ring, strict: bool = False) -> np.ndarray:
    """Point-in-polygon mask; boundary points count as inside unless ``strict``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = Polygon(ring)
    test = shapely.contains_xy if strict else shapely.intersects_xy
    return np.asarray(test(poly, pts[:, 0], pts[:, 1]), dtype=bool)


def convex_hull(points) -> np.ndarray | None:
    """CCW hull ring, or None when the points are collinear/coincident."""
    hull = MultiPoint(np.asarray(points, dtype=float)).convex_hull
    if hull.geom_type != "Polygon" or hull.area <= 1e-9:
        return None
    return ensure_ccw(open_ring(np.asarray(hull.exterior.coords)))


@dataclass(frozen=True)
class OrientedBox:
    center: np.ndarray
    long_axis: np.ndarray  # unit vector
    short_axis: np.ndarray  # unit vector, long_axis rotated +90 degrees
    long_side: float
    short_side: float

    @property
    def area(self) -> float:
        return self.long_side * self.short_side

    def to_local(self, pts) -> np.ndarray:
        """Coordinates (along short axis, along long axis) relative to the centre."""
        d = np.asarray(pts, dtype=float) - self.center
        return np.stack([d @ self.short_axis, d @ self.long_axis], axis=-1)


def oriented_box(ring) -> OrientedBox:
    """Minimum-area bounding rectangle."""
    rect = Polygon(ring).minimum_rotated_rectangle
    c = np.asarray(rect.exterior.coords)[:4]
    e0, e1 = c[1] - c[0], c[2] - c[1]
    l0, l1 = float(np.hypot(*e0)), float(np.hypot(*e1))
    if l0 >= l1:
        long_axis, long_side, short_side = e0 / l0, l0, l1
    else:
        long_axis, long_side, short_side = e1 / l1, l1, l0
    # canonical sign so the result does not depend on GEOS vertex order
    if long_axis[0] < -1e-12 or (abs(long_axis[0]) <= 1e-12 and long_axis[1] < 0):
        long_axis = -long_axis
    short_axis = np.array([-long_axis[1], long_axis[0]])
    return OrientedBox(c.mean(axis=0), long_axis, short_axis, long_side, short_side)


def rectangularity(ring) -> float:
    box = oriented_box(ring)
    return abs(signed_area(ring)) / box.area if box.area > 0 else 0.0


def triangulate(ring) -> np.ndarray:
    """Constrained triangulation of a simple polygon; (K, 3, 2) CCW triangles."""
    tris = shapely.constrained_delaunay_triangles(Polygon(ring))
    out = []
    for g in tris.geoms:
        t = np.asarray(g.exterior.coords)[:3]
        if signed_area(t) < 0:
            t = t[::-1]
        out.append(t)
    return np.asarray(out, dtype=float).reshape(-1, 3, 2)


def segment_distance(points, a, b) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    a = np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    denom = float(ab @ ab)
    if denom == 0:
        return np.linalg.norm(p - a, axis=-1)
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def distance_to_polylines(points, polylines) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    best = np.full(p.shape[:-1], np.inf)
    for line in polylines:
        line = np.asarray(line, dtype=float)
        if len(line) == 1:
            best = np.minimum(best, np.linalg.norm(p - line[0], axis=-1))
        for a, b in zip(line[:-1], line[1:]):
            best = np.minimum(best, segment_distance(p, a, b))
    return best


def polyline_stations(line, spacing: float, tol: float = 1e-9):
    """Points and unit tangents at arc-length multiples of ``spacing``."""
    line = np.asarray(line, dtype=float)
    seg = np.diff(line, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    keep = seg_len > 0
    seg, seg_len, starts = seg[keep], seg_len[keep], line[:-1][keep]
    if not len(seg):
        return np.zeros((0, 2)), np.zeros((0, 2))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s = spacing * np.arange(int(np.floor(total / spacing + tol)) + 1)
    s = np.minimum(s, total)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    pts = starts[idx] + frac[:, None] * seg[idx]
    tangents = seg[idx] / seg_len[idx, None]
    return pts, tangents

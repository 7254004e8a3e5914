"""Procedural stand-ins for the external GIS inputs: a smooth 1 m DSM, a road grid and building footprints.

Used when a configuration gives no input paths, so a run needs nothing but a seed.
"""

from __future__ import annotations

import numpy as np
from shapely.geometry import LineString, Polygon

from synthpc.buildings import Footprint
from synthpc.rng import make_rng
from synthpc.terrain import Heightfield


def synthetic_dsm(extent, cell_size: float, relief: float, seed: int) -> Heightfield:
    """Gently rolling terrain: a few broad Gaussian hills and hollows plus a tilt."""
    x0, y0, x1, y1 = extent
    nx = int(round((x1 - x0) / cell_size)) + 1
    ny = int(round((y1 - y0) / cell_size)) + 1
    rng = make_rng(seed, "dsm")
    x = x0 + cell_size * np.arange(nx)
    y = y0 + cell_size * np.arange(ny)
    xx, yy = np.meshgrid(x, y)
    span = max(x1 - x0, y1 - y0)
    z = np.zeros_like(xx)
    for _ in range(6):
        cx, cy = rng.uniform(x0, x1), rng.uniform(y0, y1)
        s = rng.uniform(0.15, 0.35) * span
        z += rng.uniform(-1.0, 1.0) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
    gx, gy = rng.uniform(-0.5, 0.5, 2)
    z += gx * (xx - x0) / span + gy * (yy - y0) / span
    z = relief * (z - z.min()) / max(np.ptp(z), 1e-12)
    return Heightfield(z, cell_size, (x0, y0))


def road_grid(extent, n_x: int, n_y: int, seed: int, margin: float = 0.0) -> list[np.ndarray]:
    """Straight roads across the extent: ``n_x`` running north-south and ``n_y`` east-west."""
    x0, y0, x1, y1 = extent
    rng = make_rng(seed, "roads")
    roads = []
    for k in range(n_x):
        x = x0 + (x1 - x0) * (k + 1) / (n_x + 1) + rng.uniform(-0.05, 0.05) * (x1 - x0)
        roads.append(np.array([[x, y0 + margin], [x, y1 - margin]]))
    for k in range(n_y):
        y = y0 + (y1 - y0) * (k + 1) / (n_y + 1) + rng.uniform(-0.05, 0.05) * (y1 - y0)
        roads.append(np.array([[x0 + margin, y], [x1 - margin, y]]))
    return roads


def _rect(cx, cy, a, b, angle):
    c, s = np.cos(angle), np.sin(angle)
    local = np.array([[-a, -b], [a, -b], [a, b], [-a, b]]) / 2
    return local @ np.array([[c, s], [-s, c]]) + (cx, cy)


def _ell(cx, cy, a, b, angle):
    # L-shape: rectangle a x b with the upper-right quarter removed
    c, s = np.cos(angle), np.sin(angle)
    local = np.array([[-a, -b], [a, -b], [a, 0], [0, 0], [0, b], [-a, b]]) / 2
    return local @ np.array([[c, s], [-s, c]]) + (cx, cy)


def synthetic_footprints(extent, count: int, roads, seed: int, size_range=(10.0, 24.0),
                         road_clearance: float = 9.0, spacing: float = 6.0, l_shape_fraction: float = 0.25,
                         max_attempts: int = 2000) -> list[Footprint]:
    """Non-overlapping rectangular and L-shaped footprints kept clear of the roads."""
    x0, y0, x1, y1 = extent
    rng = make_rng(seed, "footprints")
    out: list[Footprint] = []
    polys = []
    attempts = 0
    while len(out) < count and attempts < max_attempts:
        attempts += 1
        a, b = np.sort(rng.uniform(*size_range, 2))[::-1]
        angle = rng.uniform(0, np.pi) if rng.uniform() < 0.3 else rng.integers(2) * np.pi / 2
        cx, cy = rng.uniform(x0 + a, x1 - a), rng.uniform(y0 + a, y1 - a)
        ring = (_ell if rng.uniform() < l_shape_fraction else _rect)(cx, cy, a, b, angle)
        poly = Polygon(ring)
        if any(poly.distance(LineString(r)) < road_clearance for r in roads):
            continue
        if any(poly.distance(p) < spacing for p in polys):
            continue
        polys.append(poly)
        out.append(Footprint(len(out), ring))
    return out

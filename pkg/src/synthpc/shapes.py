"""Primitive solids as (M, 3, 3) triangle arrays with outward normals."""

from __future__ import annotations

import numpy as np


def oriented(tris: np.ndarray, outward) -> np.ndarray:
    """Flip triangles whose normal points against ``outward`` (a vector or per-triangle array)."""
    tris = np.array(tris, dtype=float).reshape(-1, 3, 3)
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    flip = (n * np.broadcast_to(outward, n.shape)).sum(axis=1) < 0
    tris[flip] = tris[flip][:, ::-1]
    return tris


def quad_tris(p0, p1, p2, p3) -> np.ndarray:
    return np.array([[p0, p1, p2], [p0, p2, p3]], dtype=float)


def box(lo, hi, bottom: bool = True) -> np.ndarray:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    corner = lambda i, j, k: np.array([(lo, hi)[i][0], (lo, hi)[j][1], (lo, hi)[k][2]])  # noqa: E731
    faces = [
        ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)),
        ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),
        ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),
        ((1, 1, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)),
        ((0, 1, 0), (0, 0, 0), (0, 0, 1), (0, 1, 1)),
    ]
    if bottom:
        faces.append(((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)))
    tris = np.concatenate([quad_tris(*(corner(*v) for v in f)) for f in faces])
    return oriented(tris, tris.mean(axis=1) - (lo + hi) / 2)


def cylinder(radius: float, height: float, segments: int = 8, z0: float = 0.0, cap: bool = True) -> np.ndarray:
    ang = 2 * np.pi * np.arange(segments + 1) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    tris = []
    for a, b in zip(ring[:-1], ring[1:]):
        tris.extend(quad_tris((*a, z0), (*b, z0), (*b, z0 + height), (*a, z0 + height)))
        if cap:
            tris.append([(0, 0, z0 + height), (*a, z0 + height), (*b, z0 + height)])
    return np.asarray(tris, dtype=float)


def cone(radius: float, height: float, segments: int = 8, z0: float = 0.0) -> np.ndarray:
    ang = 2 * np.pi * np.arange(segments + 1) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    apex = (0.0, 0.0, z0 + height)
    return np.asarray([[(*a, z0), (*b, z0), apex] for a, b in zip(ring[:-1], ring[1:])], dtype=float)


def disk(center, normal, radius: float, sides: int = 6) -> np.ndarray:
    """Flat regular polygon (a 'leaf') as a triangle fan."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    ang = 2 * np.pi * np.arange(sides) / sides
    pts = np.asarray(center) + radius * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v)
    return np.asarray([[pts[0], pts[i], pts[i + 1]] for i in range(1, sides - 1)], dtype=float)


def ellipsoid(center, radii, slices: int = 24, stacks: int = 12) -> np.ndarray:
    """UV-sphere tessellation of an axis-aligned ellipsoid."""
    c = np.asarray(center, dtype=float)
    r = np.asarray(radii, dtype=float)
    theta = np.pi * np.arange(stacks + 1) / stacks  # polar
    phi = 2 * np.pi * np.arange(slices + 1) / slices
    st, ct = np.sin(theta), np.cos(theta)
    grid = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(ct, np.ones_like(phi))], axis=-1
    )
    grid[0, :] = (0, 0, 1)
    grid[-1, :] = (0, 0, -1)
    grid[:, -1] = grid[:, 0]
    p = c + grid * r
    tris = []
    for i in range(stacks):
        for j in range(slices):
            a, b, cc, d = p[i, j], p[i + 1, j], p[i + 1, j + 1], p[i, j + 1]
            if i > 0:
                tris.append([a, b, d])
            if i < stacks - 1:
                tris.append([b, cc, d])
    tris = np.asarray(tris, dtype=float)
    centroids = tris.mean(axis=1)
    return oriented(tris, centroids - c)

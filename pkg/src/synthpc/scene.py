"""Object placement (dart throwing under spacing/exclusion rules) and scene assembly."""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from synthpc import geometry2d as g2
from synthpc.mesh import Crown, SceneMesh, SemanticClass
from synthpc.rng import make_rng


class PlacementWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Placement:
    object_id: int
    klass: int
    position: tuple[float, float, float]
    yaw: float
    scale: float
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    variant: int = 0

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.position[:2])


@dataclass
class PlacementConstraints:
    region: tuple[float, float, float, float]
    min_distance: float | dict = 0.0
    exclusion_polygons: list = field(default_factory=list)
    max_attempts: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        values = self.min_distance.values() if isinstance(self.min_distance, dict) else [self.min_distance]
        if any(v < 0 for v in values):
            raise ValueError("min_distance must be >= 0")

    def distance_between(self, a: int, b: int) -> float:
        md = self.min_distance
        if not isinstance(md, dict):
            return float(md)
        a, b = int(a), int(b)
        for key in ((a, b), (b, a)):
            if key in md:
                return float(md[key])
        return float(md.get("default", 0.0))


class _Accepted:
    """Accepted positions with per-class arrays for the min-distance test."""

    def __init__(self, existing=()):
        self.xy = [np.asarray(p.position[:2], dtype=float) for p in existing]
        self.cls = [p.klass for p in existing]

    def conflicts(self, xy, klass, constraints: PlacementConstraints) -> bool:
        if not self.xy:
            return False
        pts = np.asarray(self.xy)
        d = np.hypot(pts[:, 0] - xy[0], pts[:, 1] - xy[1])
        req = np.array([constraints.distance_between(klass, c) for c in self.cls])
        return bool((d < req).any())

    def add(self, xy, klass):
        self.xy.append(np.asarray(xy, dtype=float))
        self.cls.append(klass)


def _excluded(xy, polygons) -> bool:
    return any(g2.points_in_polygon(xy, poly)[0] for poly in polygons)


def _check_region(constraints: PlacementConstraints, terrain) -> None:
    x0, y0, x1, y1 = constraints.region
    if not (x0 < x1 and y0 < y1):
        raise ValueError("placement region is empty")
    if terrain is not None and not terrain.contains(np.array([x0, x1]), np.array([y0, y1])).all():
        raise ValueError("placement region lies outside the terrain extent")


def _make(object_id, klass, xy, rng, scale_range, terrain, n_variants) -> Placement:
    z = float(terrain.elevation_at(xy[0], xy[1])) if terrain is not None else 0.0
    yaw = float(rng.uniform(0.0, 2 * math.pi))
    scale = float(rng.uniform(*scale_range))
    variant = int(rng.integers(n_variants)) if n_variants > 1 else 0
    p = Placement(object_id, int(klass), (float(xy[0]), float(xy[1]), z), yaw, scale, variant=variant)
    return orient_to_terrain(p, terrain) if terrain is not None else p


def place_random(klass, count: int, scale_range, constraints: PlacementConstraints, terrain=None,
                 existing=(), id_start: int = 0, candidates=None, n_variants: int = 1) -> list[Placement]:
    """Dart throwing: uniform candidates, rejected inside exclusions or too close to others.

    Stops early (with a :class:`PlacementWarning`) when ``max_attempts`` consecutive
    candidates are rejected.
    """
    _check_region(constraints, terrain)
    klass = int(klass)
    rng = make_rng(constraints.seed, "place-random", klass, id_start)
    x0, y0, x1, y1 = constraints.region
    stream = iter(candidates) if candidates is not None else None
    accepted = _Accepted(existing)
    out: list[Placement] = []
    failures = 0
    while len(out) < count and failures < constraints.max_attempts:
        if stream is not None:
            try:
                xy = np.asarray(next(stream), dtype=float)
            except StopIteration:
                break
        else:
            xy = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        if _excluded(xy, constraints.exclusion_polygons) or accepted.conflicts(xy, klass, constraints):
            failures += 1
            continue
        failures = 0
        accepted.add(xy, klass)
        out.append(_make(id_start + len(out), klass, xy, rng, scale_range, terrain, n_variants))
    if len(out) < count:
        warnings.warn(f"placement saturated: {len(out)} of {count} class-{klass} objects placed",
                      PlacementWarning, stacklevel=2)
    return out


def generate_forest(region, tree_density: float, hull_point_count: int, constraints: PlacementConstraints,
                    seed: int, terrain=None, scale_range=(0.8, 1.2), existing=(), id_start: int = 0,
                    n_variants: int = 1):
    """Random convex forest boundary inside ``region`` filled with trees at ``tree_density``.

    ``constraints.min_distance`` is the (usually smaller) in-forest spacing.
    Returns ``(boundary_ring, placements)``.
    """
    if not tree_density > 0:
        raise ValueError("tree_density must be > 0")
    if hull_point_count < 3:
        raise ValueError("need at least 3 hull points")
    rng = make_rng(seed, "forest", id_start)
    x0, y0, x1, y1 = region
    hull = None
    for _ in range(constraints.max_attempts):
        pts = np.stack([rng.uniform(x0, x1, hull_point_count), rng.uniform(y0, y1, hull_point_count)], 1)
        hull = g2.convex_hull(pts)
        if hull is not None:
            break
    if hull is None:
        raise ValueError("forest boundary degenerate after max_attempts retries")
    expected = tree_density * g2.signed_area(hull)
    target = int(rng.poisson(expected))
    lo, hi = hull.min(axis=0), hull.max(axis=0)

    def inside_stream():
        while True:
            xy = rng.uniform(lo, hi)
            if g2.points_in_polygon(xy, hull, strict=True)[0]:
                yield xy

    inner = replace(constraints, region=(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])),
                    seed=int(rng.integers(2**63)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PlacementWarning)
        trees = place_random(SemanticClass.TREE, target, scale_range, inner, terrain, existing, id_start,
                             candidates=inside_stream(), n_variants=n_variants)
    if len(trees) < target:
        warnings.warn(f"forest saturated: {len(trees)} of {target} trees placed", PlacementWarning, stacklevel=2)
    return hull, trees


def place_along_roads(klass, roads, spacing: float, lateral_jitter: float, constraints: PlacementConstraints,
                      terrain=None, scale_range=(1.0, 1.0), existing=(), id_start: int = 0,
                      n_variants: int = 1, offset: float = 0.0) -> list[Placement]:
    """Objects every ``spacing`` metres of arc length, shifted sideways by ``offset`` +/- jitter."""
    if not spacing > 0:
        raise ValueError("spacing must be > 0")
    klass = int(klass)
    rng = make_rng(constraints.seed, "place-road", klass, id_start)
    accepted = _Accepted(existing)
    out: list[Placement] = []
    for r, line in enumerate(roads):
        line = np.asarray(line, dtype=float).reshape(-1, 2)
        if len(line) < 2 or np.allclose(line, line[0]):
            warnings.warn(f"road {r} is empty; skipped", PlacementWarning, stacklevel=2)
            continue
        pts, tangents = g2.polyline_stations(line, spacing)
        normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
        for p, n in zip(pts, normals):
            jitter = rng.uniform(-lateral_jitter, lateral_jitter) if lateral_jitter > 0 else 0.0
            xy = p + (offset + jitter) * n
            if terrain is not None and not terrain.contains(xy[0], xy[1]):
                continue
            if _excluded(xy, constraints.exclusion_polygons) or accepted.conflicts(xy, klass, constraints):
                continue
            accepted.add(xy, klass)
            out.append(_make(id_start + len(out), klass, xy, rng, scale_range, terrain, n_variants))
    return out


def orient_to_terrain(placement: Placement, terrain) -> Placement:
    """Vehicles follow the slope; trees and clutter stay plumb."""
    x, y, _ = placement.position
    z = float(terrain.elevation_at(x, y))
    if placement.klass == SemanticClass.VEHICLE:
        up = tuple(float(v) for v in terrain.normal_at(x, y))
    else:
        up = (0.0, 0.0, 1.0)
    return replace(placement, position=(x, y, z), up=up)


def rotation_to_up(up) -> np.ndarray:
    """Smallest rotation taking +z onto ``up``."""
    u = np.asarray(up, dtype=float)
    u = u / np.linalg.norm(u)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, u)
    s, c = np.linalg.norm(v), float(z @ u)
    if s < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def instance(template, placement: Placement) -> SceneMesh:
    rot = rotation_to_up(placement.up) @ rotation_z(placement.yaw)
    mesh = template.mesh.with_object(placement.object_id)
    if template.crown is not None:
        mesh.crowns = [Crown(placement.object_id, template.crown.center, template.crown.radii)]
    return mesh.transformed(rot, placement.position, placement.scale)


def assemble_scene(terrain_mesh: SceneMesh, building_mesh: SceneMesh | None, placements, library) -> SceneMesh:
    ids = [p.object_id for p in placements]
    if len(set(ids)) != len(ids):
        raise ValueError("placement object ids are not unique")
    taken = set(np.unique(terrain_mesh.tri_object).tolist())
    if building_mesh is not None:
        taken |= set(np.unique(building_mesh.tri_object).tolist())
    if taken & set(ids):
        raise ValueError("placement object ids collide with terrain/building ids")
    parts = [terrain_mesh, building_mesh]
    for p in placements:
        variants = library.get(p.klass) or library.get(SemanticClass(p.klass))
        if not variants:
            raise KeyError(f"no template for class {SemanticClass(p.klass).name.lower()}")
        parts.append(instance(variants[p.variant % len(variants)], p))
    scene = SceneMesh.concat(parts)
    return scene.drop_degenerate()


def parse_roads(text: str) -> list[np.ndarray]:
    doc = json.loads(text)
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a FeatureCollection")
    roads = []
    for k, feat in enumerate(doc.get("features", [])):
        geom = (feat or {}).get("geometry") or {}
        if geom.get("type") != "LineString":
            raise ValueError(f"unsupported geometry at feature {k}")
        roads.append(np.asarray(geom.get("coordinates") or [], dtype=float).reshape(-1, 2))
    return roads


def roads_to_geojson(roads) -> str:
    feats = [{"type": "Feature", "properties": {"id": k},
              "geometry": {"type": "LineString", "coordinates": np.asarray(r, dtype=float).tolist()}}
             for k, r in enumerate(roads)]
    return json.dumps({"type": "FeatureCollection", "features": feats})


def placements_to_csv(placements) -> str:
    buf = io.StringIO()
    buf.write("id,class,x,y,z,yaw,scale\n")
    for p in placements:
        x, y, z = p.position
        buf.write(f"{p.object_id},{SemanticClass(p.klass).name.lower()},{x!r},{y!r},{z!r},{p.yaw!r},{p.scale!r}\n")
    return buf.getvalue()

"""Procedural buildings from 2D footprints.

Each footprint is extruded to a randomly drawn height, its walls get a simple
floor/tile façade grammar, and a roof is chosen from flat, flat with parapet,
gable or hip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from synthpc import geometry2d as g2
from synthpc.mesh import SceneMesh, SemanticClass
from synthpc.rng import make_rng
from synthpc.shapes import box, oriented, quad_tris

ROOF_STYLES = ("flat", "flat_parapet", "gable", "hip")
MIN_RECTANGULARITY = 0.95


class FootprintParseError(ValueError):
    pass


class StyleNotApplicable(ValueError):
    """Raised when a pitched roof is requested on a non-rectangular footprint."""


class BuildingGenerationError(RuntimeError):
    def __init__(self, failures: list[tuple[int, Exception]]):
        self.failures = failures
        detail = "; ".join(f"footprint {fid}: {exc}" for fid, exc in failures)
        super().__init__(f"{len(failures)} building(s) failed: {detail}")


@dataclass
class Footprint:
    id: int
    ring: np.ndarray
    height: float | None = None  # explicit height overrides random assignment

    def __post_init__(self):
        ring = g2.open_ring(np.asarray(self.ring, dtype=float).reshape(-1, 2))
        if len(ring) < 3:
            raise ValueError(f"footprint {self.id}: fewer than 3 vertices")
        if not g2.is_simple(ring):
            raise ValueError(f"footprint {self.id}: ring is not a simple polygon")
        self.ring = g2.ensure_ccw(ring)

    @property
    def area(self) -> float:
        return g2.signed_area(self.ring)


@dataclass(frozen=True)
class BuildingParams:
    height_range: tuple[float, float] = (6.0, 30.0)
    floor_height: float = 3.0
    tile_width: float = 3.0
    window_inset: float = 0.2
    roof_styles: dict = field(default_factory=lambda: {s: 1.0 for s in ROOF_STYLES})
    parapet_height: float = 1.0
    pitch_range: tuple[float, float] = (20.0, 40.0)
    roof_element_density: float = 0.01
    seed: int = 0
    balcony_probability: float = 0.0
    balcony_depth: float = 1.2
    parapet_thickness: float = 0.3

    def __post_init__(self):
        lo, hi = self.height_range
        if not 0 < lo <= hi:
            raise ValueError("height_range must satisfy 0 < min <= max")
        if self.floor_height <= 0 or self.tile_width <= 0:
            raise ValueError("floor_height and tile_width must be > 0")
        if self.window_inset < 0:
            raise ValueError("window_inset must be >= 0")
        w = self.roof_styles
        if set(w) - set(ROOF_STYLES) or any(v < 0 for v in w.values()) or not sum(w.values()) > 0:
            raise ValueError(f"roof_styles must weight {ROOF_STYLES} with non-negative, non-zero weights")
        p0, p1 = self.pitch_range
        if not 0 < p0 <= p1 <= 60:
            raise ValueError("pitch_range must lie in (0, 60] degrees")
        if self.roof_element_density < 0 or not 0 <= self.balcony_probability <= 1:
            raise ValueError("densities/probabilities out of range")


def parse_footprints(text: str) -> list[Footprint]:
    """Read a GeoJSON FeatureCollection of Polygon features (outer ring only)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FootprintParseError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise FootprintParseError("expected a FeatureCollection")
    out = []
    for k, feat in enumerate(doc.get("features", [])):
        geom = (feat or {}).get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise FootprintParseError(f"unsupported geometry at feature {k}")
        rings = geom.get("coordinates") or []
        if not rings:
            raise FootprintParseError(f"empty polygon at feature {k}")
        props = feat.get("properties") or {}
        fid = props.get("id", feat.get("id", k))
        height = props.get("height")
        try:
            ring = np.asarray(rings[0], dtype=float)[:, :2]
            out.append(Footprint(int(fid), ring, None if height is None else float(height)))
        except (ValueError, IndexError, TypeError) as exc:
            raise FootprintParseError(f"invalid polygon at feature {k}: {exc}") from None
    return out


def footprints_to_geojson(footprints) -> str:
    feats = []
    for fp in footprints:
        ring = [list(map(float, p)) for p in fp.ring] + [list(map(float, fp.ring[0]))]
        props = {"id": fp.id}
        if fp.height is not None:
            props["height"] = fp.height
        feats.append({"type": "Feature", "properties": props,
                      "geometry": {"type": "Polygon", "coordinates": [ring]}})
    return json.dumps({"type": "FeatureCollection", "features": feats})


def snap_height(h: float, params: BuildingParams) -> float:
    """Round up to a whole number of floors, staying inside the range when possible."""
    fh = params.floor_height
    lo, hi = params.height_range
    k = max(1, math.ceil(h / fh - 1e-9))
    if k * fh > hi + 1e-9:
        k = max(1, math.floor(hi / fh + 1e-9))
    if k * fh < lo - 1e-9:
        k = math.ceil(lo / fh - 1e-9)
    return k * fh


def assign_heights(footprints, params: BuildingParams, seed: int) -> list[tuple[Footprint, float]]:
    out = []
    for fp in footprints:
        if fp.height is not None:
            out.append((fp, float(fp.height)))
            continue
        u = make_rng(seed, "height", fp.id).uniform(*params.height_range)
        out.append((fp, snap_height(u, params)))
    return out


def facade_layout(edge_length: float, height: float, params: BuildingParams) -> tuple[int, int]:
    """(floors, tiles) of the façade grammar on one wall."""
    floors = int(math.floor(height / params.floor_height + 1e-9))
    tiles = max(1, int(math.floor(edge_length / params.tile_width + 1e-9)))
    return floors, tiles


class _Wall:
    """Maps wall-local (s along edge, z up, depth along outward normal) to world."""

    def __init__(self, p0, p1, base_z):
        self.p0 = np.asarray(p0, dtype=float)
        d = np.asarray(p1, dtype=float) - self.p0
        self.length = float(np.hypot(*d))
        self.u = d / self.length
        self.n = np.array([self.u[1], -self.u[0]])
        self.base = base_z

    def point(self, s, z, depth=0.0):
        xy = self.p0 + s * self.u + depth * self.n
        return np.array([xy[0], xy[1], self.base + z])

    def rect(self, s0, s1, z0, z1, depth=0.0):
        return quad_tris(self.point(s0, z0, depth), self.point(s1, z0, depth),
                         self.point(s1, z1, depth), self.point(s0, z1, depth))

    def normal3(self):
        return np.array([self.n[0], self.n[1], 0.0])


def _window_cell(wall: _Wall, s0, s1, z0, z1, opening, inset) -> list[np.ndarray]:
    a, b, c, d = opening
    out = [wall.rect(s0, a, z0, z1), wall.rect(b, s1, z0, z1), wall.rect(a, b, d, z1)]
    if c > z0:
        out.append(wall.rect(a, b, z0, c))
    out.append(wall.rect(a, b, c, d, -inset))
    u3 = np.array([wall.u[0], wall.u[1], 0.0])
    z3 = np.array([0.0, 0.0, 1.0])
    reveals = [
        (quad_tris(wall.point(a, c), wall.point(a, d), wall.point(a, d, -inset), wall.point(a, c, -inset)), u3),
        (quad_tris(wall.point(b, c), wall.point(b, d), wall.point(b, d, -inset), wall.point(b, c, -inset)), -u3),
        (quad_tris(wall.point(a, d), wall.point(b, d), wall.point(b, d, -inset), wall.point(a, d, -inset)), -z3),
        (quad_tris(wall.point(a, c), wall.point(b, c), wall.point(b, c, -inset), wall.point(a, c, -inset)), z3),
    ]
    out.extend(oriented(t, nrm) for t, nrm in reveals)
    return out


def _balcony(wall: _Wall, s0, s1, z0, depth, thickness=0.2, rail=1.0) -> list[np.ndarray]:
    """Slab plus railing protruding from the façade, built in wall-local axes."""
    parts = []
    for lo, hi in (((s0, 0.0, z0), (s1, depth, z0 + thickness)),
                   ((s0, depth - 0.05, z0 + thickness), (s1, depth, z0 + thickness + rail))):
        t = box(lo, hi)
        s, dd, z = t[..., 0], t[..., 1], t[..., 2]
        xy = wall.p0 + s[..., None] * wall.u + dd[..., None] * wall.n
        world = np.concatenate([xy, (wall.base + z)[..., None]], axis=-1)
        # the wall frame (u, n, z) is left-handed, so winding flips
        parts.append(world[:, ::-1])
    return parts


def extrude_building(footprint: Footprint, height: float, params: BuildingParams,
                     base_z: float = 0.0, object_id: int = 0, rng=None) -> SceneMesh:
    """Walls up to ``base_z + height`` with recessed window/door cells when window_inset > 0."""
    ring = footprint.ring
    if not height > 0:
        raise ValueError("building height must be > 0")
    if abs(g2.signed_area(ring)) <= 0:
        raise ValueError(f"footprint {footprint.id} is degenerate")
    rng = rng if rng is not None else make_rng(params.seed, "facade", footprint.id)
    inset = params.window_inset
    tris = []
    n = len(ring)
    for e in range(n):
        wall = _Wall(ring[e], ring[(e + 1) % n], base_z)
        if wall.length <= 0:
            continue
        if inset == 0:
            tris.append(wall.rect(0.0, wall.length, 0.0, height))
            continue
        floors, tiles = facade_layout(wall.length, height, params)
        tw = wall.length / tiles
        fh = params.floor_height
        for f in range(floors):
            z0, z1 = f * fh, (f + 1) * fh
            for t in range(tiles):
                s0, s1 = t * tw, (t + 1) * tw
                if f == 0 and e == 0 and t == tiles // 2:
                    opening = (s0 + 0.3 * tw, s1 - 0.3 * tw, z0, z0 + 0.75 * fh)
                else:
                    opening = (s0 + 0.25 * tw, s1 - 0.25 * tw, z0 + 0.3 * fh, z0 + 0.8 * fh)
                tris.extend(_window_cell(wall, s0, s1, z0, z1, opening, inset))
                if f > 0 and params.balcony_probability > 0 and rng.random() < params.balcony_probability:
                    tris.extend(_balcony(wall, s0 + 0.1 * tw, s1 - 0.1 * tw, z0, params.balcony_depth))
        if floors * fh < height - 1e-9:
            tris.append(wall.rect(0.0, wall.length, floors * fh, height))
    if not tris:
        return SceneMesh.empty()
    mesh = SceneMesh.from_triangles(np.concatenate(tris), SemanticClass.BUILDING, object_id)
    return mesh.drop_degenerate()


# -- roofs -------------------------------------------------------------------


def _clip_halfplane(poly: np.ndarray, coef) -> np.ndarray:
    """Keep the part of ``poly`` where ``coef . (x, y, 1) <= 0`` (Sutherland-Hodgman)."""
    if not len(poly):
        return poly
    f = poly @ np.asarray(coef[:2]) + coef[2]
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        fp, fq = f[i], f[(i + 1) % m]
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return np.asarray(out).reshape(-1, 2)


class _PitchedRoof:
    """Height field ``eave + tan(pitch) * min_k plane_k`` over the footprint's oriented box."""

    def __init__(self, ring, eave, pitch_deg, hip):
        self.box = g2.oriented_box(ring)
        self.eave = eave
        self.slope = math.tan(math.radians(pitch_deg))
        s, L = self.box.short_side, self.box.long_side
        # plane k value = c0 * a + c1 * b + c2 in box-local (a: short axis, b: long axis)
        planes = [(-1.0, 0.0, s / 2), (1.0, 0.0, s / 2)]
        if hip:
            planes += [(0.0, -1.0, L / 2), (0.0, 1.0, L / 2)]
        self.planes = np.asarray(planes)

    def local(self, xy):
        return self.box.to_local(xy)

    def plane_values(self, xy):
        ab = self.local(np.atleast_2d(xy))
        return ab @ self.planes[:, :2].T + self.planes[:, 2]

    def height(self, xy):
        rise = np.maximum(self.plane_values(xy).min(axis=1), 0.0) * self.slope
        rise = np.where(rise < 1e-9, 0.0, rise)
        return self.eave + rise

    def region_halfplanes(self, k):
        """World-space half-planes (A, B, C): plane_k - plane_j <= 0 for every other j."""
        out = []
        ax, ln = self.box.short_axis, self.box.long_axis
        c = self.box.center
        for j in range(len(self.planes)):
            if j == k:
                continue
            d = self.planes[k] - self.planes[j]
            # a = (p - c).ax, b = (p - c).ln
            A = d[0] * ax[0] + d[1] * ln[0]
            B = d[0] * ax[1] + d[1] * ln[1]
            C = d[2] - d[0] * (c @ ax) - d[1] * (c @ ln)
            out.append((A, B, C))
        return out

    def edge_breaks(self, p0, p1):
        """Parameters in (0, 1) where the active plane changes along segment p0->p1."""
        v0, v1 = self.plane_values(p0)[0], self.plane_values(p1)[0]
        ts = []
        for k in range(len(self.planes)):
            for j in range(k + 1, len(self.planes)):
                f0, f1 = v0[k] - v0[j], v1[k] - v1[j]
                if (f0 < 0 < f1) or (f1 < 0 < f0):
                    t = f0 / (f0 - f1)
                    p = p0 + t * (p1 - p0)
                    vals = self.plane_values(p)[0]
                    if vals[k] <= vals.min() + 1e-9:
                        ts.append(t)
        return sorted(set(ts))


def _lift(tris2d: np.ndarray, zfun) -> np.ndarray:
    flat = tris2d.reshape(-1, 2)
    z = zfun(flat)
    return np.concatenate([flat, z[:, None]], axis=1).reshape(-1, 3, 3)


def _pitched_roof(ring, eave, pitch, hip) -> list[np.ndarray]:
    roof = _PitchedRoof(ring, eave, pitch, hip)
    up = np.array([0.0, 0.0, 1.0])
    tris = []
    for k in range(len(roof.planes)):
        piece = ring.copy()
        for hp in roof.region_halfplanes(k):
            piece = _clip_halfplane(piece, hp)
        if len(piece) < 3 or abs(g2.signed_area(piece)) < 1e-12:
            continue
        piece = _dedupe(piece)
        if len(piece) < 3 or not g2.is_simple(piece):
            raise StyleNotApplicable("roof region is not a simple polygon")
        tris.append(oriented(_lift(g2.triangulate(piece), roof.height), up))
    n = len(ring)
    for e in range(n):
        p0, p1 = ring[e], ring[(e + 1) % n]
        ts = roof.edge_breaks(p0, p1)
        top_xy = [p0] + [p0 + t * (p1 - p0) for t in ts] + [p1]
        top_z = roof.height(np.asarray(top_xy))
        if top_z.max() - eave <= 1e-9:
            continue
        poly = [(*p0, eave), (*p1, eave)] + [(*xy, z) for xy, z in zip(top_xy[::-1], top_z[::-1])]
        poly = np.asarray(poly)
        fan = np.asarray([[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)])
        outward = np.array([p1[1] - p0[1], p0[0] - p1[0], 0.0])
        fan = oriented(fan, outward)
        tris.append(fan)
    return tris


def _dedupe(poly, eps=1e-12):
    keep = [poly[0]]
    for p in poly[1:]:
        if np.hypot(*(p - keep[-1])) > eps:
            keep.append(p)
    if len(keep) > 1 and np.hypot(*(keep[0] - keep[-1])) <= eps:
        keep.pop()
    return np.asarray(keep)


def _miter_offset(ring: np.ndarray, d: float) -> np.ndarray:
    """Offset a CCW ring inward by ``d`` using mitred corners."""
    n = len(ring)
    out = []
    for i in range(n):
        prev, cur, nxt = ring[i - 1], ring[i], ring[(i + 1) % n]
        e0 = (cur - prev) / np.hypot(*(cur - prev))
        e1 = (nxt - cur) / np.hypot(*(nxt - cur))
        n0 = np.array([-e0[1], e0[0]])  # inward (left) normals for CCW
        n1 = np.array([-e1[1], e1[0]])
        bis = n0 + n1
        denom = 1.0 + float(n0 @ n1)
        if denom < 1e-6:
            raise StyleNotApplicable("parapet offset undefined at a spike vertex")
        out.append(cur + d * bis / denom)
    return np.asarray(out)


def _flat_cap(ring, z) -> np.ndarray:
    return oriented(_lift(g2.triangulate(ring), lambda xy: np.full(len(xy), z)), np.array([0.0, 0.0, 1.0]))


def _roof_elements(ring, z, params, rng) -> list[np.ndarray]:
    """Chimney/vent boxes standing on a flat cap."""
    area = abs(g2.signed_area(ring))
    count = int(rng.poisson(params.roof_element_density * area))
    if count == 0:
        return []
    box2 = g2.oriented_box(ring)
    lo, hi = ring.min(axis=0), ring.max(axis=0)
    out = []
    attempts = 0
    while len(out) < count and attempts < 20 * count:
        attempts += 1
        c = rng.uniform(lo, hi)
        half = rng.uniform(0.25, 0.6)
        tall = rng.uniform(0.4, 1.5)
        corners = c + half * np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]]) @ np.stack(
            [box2.long_axis, box2.short_axis])
        if not g2.points_in_polygon(corners, ring, strict=True).all():
            continue
        local = box((-half, -half, 0.0), (half, half, tall), bottom=False)
        rot = np.stack([box2.long_axis, box2.short_axis])  # rows -> world x, y of local axes
        xy = local[..., :2] @ rot + c
        out.append(np.concatenate([xy, (z + local[..., 2])[..., None]], axis=-1))
    return out


def generate_roof(footprint: Footprint, eave_height: float, style: str, params: BuildingParams,
                  seed: int | None = None, object_id: int = 0, rng=None) -> SceneMesh:
    if style not in ROOF_STYLES:
        raise ValueError(f"unknown roof style {style!r}")
    rng = rng if rng is not None else make_rng(params.seed if seed is None else seed, "roof", footprint.id)
    ring = footprint.ring
    if style in ("gable", "hip"):
        if g2.rectangularity(ring) < MIN_RECTANGULARITY:
            raise StyleNotApplicable(f"{style} roof needs a rectangular footprint")
        pitch = float(rng.uniform(*params.pitch_range))
        tris = _pitched_roof(ring, eave_height, pitch, hip=style == "hip")
    elif style == "flat":
        tris = [_flat_cap(ring, eave_height)] + _roof_elements(ring, eave_height, params, rng)
    else:
        inner = _miter_offset(ring, params.parapet_thickness)
        if not g2.is_simple(inner) or g2.signed_area(inner) <= 0:
            raise StyleNotApplicable("footprint too thin for a parapet")
        top = eave_height + params.parapet_height
        tris = []
        n = len(ring)
        up = np.array([0.0, 0.0, 1.0])
        for e in range(n):
            o0, o1 = ring[e], ring[(e + 1) % n]
            i0, i1 = inner[e], inner[(e + 1) % n]
            outward = np.array([o1[1] - o0[1], o0[0] - o1[0], 0.0])
            tris.append(oriented(quad_tris((*o0, eave_height), (*o1, eave_height), (*o1, top), (*o0, top)), outward))
            tris.append(oriented(quad_tris((*o0, top), (*o1, top), (*i1, top), (*i0, top)), up))
            tris.append(oriented(quad_tris((*i0, top), (*i1, top), (*i1, eave_height), (*i0, eave_height)),
                                 -outward))
            tris.append(oriented(quad_tris((*o0, eave_height), (*o1, eave_height), (*i1, eave_height),
                                           (*i0, eave_height)), -up))
        tris.append(_flat_cap(inner, eave_height))
        tris.extend(_roof_elements(inner, eave_height, params, rng))
    mesh = SceneMesh.from_triangles(np.concatenate(tris), SemanticClass.BUILDING, object_id)
    return mesh.drop_degenerate()


def draw_style(params: BuildingParams, rng) -> str:
    w = np.array([params.roof_styles.get(s, 0.0) for s in ROOF_STYLES], dtype=float)
    return ROOF_STYLES[int(rng.choice(len(ROOF_STYLES), p=w / w.sum()))]


@dataclass
class BuildingRecord:
    footprint_id: int
    height: float
    base_z: float
    style: str
    requested_style: str
    mesh: SceneMesh


def generate_buildings(footprints, params: BuildingParams, seed: int, terrain=None,
                       object_id_start: int = 1) -> list[BuildingRecord]:
    """One record per footprint in id order; failures are collected and raised together."""
    records, failures = [], []
    ordered = sorted(footprints, key=lambda f: f.id)
    heights = dict((fp.id, h) for fp, h in assign_heights(ordered, params, seed))
    for k, fp in enumerate(ordered):
        oid = object_id_start + k
        try:
            base = 0.0
            if terrain is not None:
                base = float(terrain.elevation_at(fp.ring[:, 0], fp.ring[:, 1]).min())
            requested = draw_style(params, make_rng(seed, "style", fp.id))
            walls = extrude_building(fp, heights[fp.id], params, base, oid, make_rng(seed, "facade", fp.id))
            style = requested
            eave = base + heights[fp.id]
            try:
                roof = generate_roof(fp, eave, style, params, object_id=oid, rng=make_rng(seed, "roof", fp.id))
            except StyleNotApplicable:
                style = "flat"
                roof = generate_roof(fp, eave, style, params, object_id=oid, rng=make_rng(seed, "roof", fp.id))
            mesh = SceneMesh.concat([walls, roof])
            records.append(BuildingRecord(fp.id, heights[fp.id], base, style, requested, mesh))
        except Exception as exc:  # noqa: BLE001 - aggregated below
            failures.append((fp.id, exc))
    if failures:
        raise BuildingGenerationError(failures)
    return records


def generate_building_set(footprints, params: BuildingParams, seed: int, terrain=None,
                          object_id_start: int = 1) -> SceneMesh:
    records = generate_buildings(footprints, params, seed, terrain, object_id_start)
    return SceneMesh.concat([r.mesh for r in records])

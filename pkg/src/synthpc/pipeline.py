"""Config-driven pipeline: scene generation, flight planning, rendering, reconstruction,
annotation and evaluation, each stage reading and writing files in one run directory.

``run_pipeline`` simply calls the six stages in order, so chaining them by hand
produces the same bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import LineString, Polygon

from synthpc import io as sio
from synthpc.buildings import BuildingParams, footprints_to_geojson, generate_building_set, parse_footprints
from synthpc.flight import CameraIntrinsics, FlightParams, plan_crosshatch, poses_from_csv, poses_to_csv, rig_to_json
from synthpc.inputs import road_grid, synthetic_dsm, synthetic_footprints
from synthpc.kdtree import build_kdtree
from synthpc.mesh import SemanticClass, class_id
from synthpc.metrics import evaluate as evaluate_labels
from synthpc.metrics import render_report
from synthpc.raycast import build_bvh, render_frame
from synthpc.recon import NoiseParams, fuse_depth_frames, params_digest, simulate_photogrammetric_cloud
from synthpc.rng import derive_seed
from synthpc.scene import (PlacementConstraints, assemble_scene, generate_forest, parse_roads, place_along_roads,
                           place_random, placements_to_csv, roads_to_geojson)
from synthpc.templates import default_library
from synthpc.terrain import DetailParams, add_detail, heightfield_to_mesh, parse_heightfield, upsample_bilinear
from synthpc.terrain import write_heightfield
from synthpc.transfer import TransferParams, annotate_by_knn, annotate_by_projection

SCHEMA_VERSION = 1
STAGES = ("generate-scene", "plan-flight", "render", "reconstruct", "annotate", "evaluate")
PRESETS = ("set1", "set2", "set3", "set4")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- configuration ---------------------------------------------------------------------


@dataclass
class PathsConfig:
    dsm: str | None = None
    footprints: str | None = None
    roads: str | None = None
    output: str = "out"


@dataclass
class InputsConfig:
    """Procedural inputs used when no paths are given."""

    dsm_cell_size: float = 1.0
    dsm_relief: float = 4.0
    roads_x: int = 1
    roads_y: int = 1
    building_count: int = 10
    building_size: tuple = (12.0, 26.0)


@dataclass
class TerrainConfig:
    upsample_factor: int = 1
    detail: dict | None = None  # DetailParams fields without seed; None keeps the DSM as is
    gutter_offset: float = 4.5  # carved lines this far either side of every road


@dataclass
class PlacementConfig:
    mode: str = "road"  # road | random
    min_distance: float = 3.0
    max_attempts: int = 200
    road_clearance: float = 4.0  # keeps road-mode trees off the carriageway
    tree_count: int = 40
    tree_scale: tuple = (0.8, 1.2)
    vehicle_count: int = 0
    vehicle_spacing: float = 12.0
    vehicle_offset: float = 2.5
    clutter_count: int = 30
    clutter_spacing: float = 15.0
    clutter_offset: float = 6.0
    lateral_jitter: float = 0.5
    forests: list = field(default_factory=list)  # [{tree_density, hull_point_count, size, min_distance}]


@dataclass
class FlightConfig:
    altitude: float = 100.0
    front_overlap: float = 0.8
    side_overlap: float = 0.7
    headings: tuple = (0.0, 90.0)
    gimbal_pitch: float = 0.0


@dataclass
class RenderConfig:
    image_width: int = 512
    image_height: int = 512
    focal_length: float = 512.0
    fuse_stride: int = 4


@dataclass
class TransferConfig:
    method: str = "knn"  # knn | projection
    k: int = 3
    max_radius: float | None = None
    depth_check: bool = False


@dataclass
class EvaluationConfig:
    class_map: dict = field(default_factory=dict)  # class name -> class name or null (ignore)


@dataclass
class PipelineConfig:
    name: str = "custom"
    seed: int = 0
    extent: tuple = (0.0, 0.0, 200.0, 200.0)
    paths: PathsConfig = field(default_factory=PathsConfig)
    inputs: InputsConfig = field(default_factory=InputsConfig)
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    buildings: dict = field(default_factory=dict)  # BuildingParams fields without seed
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    flight: FlightConfig = field(default_factory=FlightConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    provenance: str = "photogrammetric_sim"
    noise: dict = field(default_factory=dict)  # NoiseParams fields without seed
    transfer: TransferConfig = field(default_factory=TransferConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        d = self.to_dict()
        d["paths"] = {k: v for k, v in d["paths"].items() if k != "output"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    # typed views used by the stages; each also validates its section
    def detail_params(self) -> DetailParams | None:
        d = self.terrain.detail
        return None if d is None else DetailParams(**d, seed=self.stage_seed("terrain-detail"))

    def building_params(self) -> BuildingParams:
        b = dict(self.buildings)
        for k in ("height_range", "pitch_range"):
            if k in b:
                b[k] = tuple(b[k])
        return BuildingParams(**b, seed=self.stage_seed("buildings"))

    def noise_params(self) -> NoiseParams:
        return NoiseParams(**self.noise, seed=self.stage_seed("reconstruct"))

    def transfer_params(self) -> TransferParams:
        r = self.transfer.max_radius
        return TransferParams(self.transfer.k, float("inf") if r is None else float(r))

    def intrinsics(self) -> CameraIntrinsics:
        r = self.render
        return CameraIntrinsics(int(r.image_width), int(r.image_height), float(r.focal_length))

    def stage_seed(self, label: str) -> int:
        return derive_seed(self.seed, label)

    def validate(self, check_paths: bool = True) -> "PipelineConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        x0, y0, x1, y1 = self.extent
        if not (x0 < x1 and y0 < y1):
            raise ConfigError("extent must be (xmin, ymin, xmax, ymax) with positive size")
        if self.provenance not in ("depth_fused", "photogrammetric_sim"):
            raise ConfigError("provenance must be depth_fused or photogrammetric_sim")
        if self.placement.mode not in ("road", "random"):
            raise ConfigError("placement.mode must be road or random")
        if self.transfer.method not in ("knn", "projection"):
            raise ConfigError("transfer.method must be knn or projection")
        if self.terrain.upsample_factor < 1 or self.render.fuse_stride < 1:
            raise ConfigError("upsample_factor and fuse_stride must be >= 1")
        for name in self.evaluation.class_map:
            class_id(name)
        try:
            self.detail_params()
            self.building_params()
            self.noise_params()
            self.transfer_params()
            self.intrinsics()
            FlightParams(tuple(self.extent), self.flight.altitude, self.flight.front_overlap,
                         self.flight.side_overlap, tuple(self.flight.headings), 0.0, self.flight.gimbal_pitch)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        if check_paths:
            for key in ("dsm", "footprints", "roads"):
                p = getattr(self.paths, key)
                if p is not None and not Path(p).is_file():
                    raise ConfigError(f"paths.{key}: file not found: {p}")
        return self


_SECTIONS = {"paths": PathsConfig, "inputs": InputsConfig, "terrain": TerrainConfig, "placement": PlacementConfig,
             "flight": FlightConfig, "render": RenderConfig, "transfer": TransferConfig,
             "evaluation": EvaluationConfig}


def _section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            v = data[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) and f.type == "tuple" else v
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k in _SECTIONS:
            kwargs[k] = _section(_SECTIONS[k], v, k)
        elif k == "extent":
            kwargs[k] = tuple(float(x) for x in v)
        else:
            kwargs[k] = v
    if "seed" not in data:
        raise ConfigError("config: seed is required")
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    try:
        return config_from_dict(data)
    except (ConfigError, TypeError, ValueError) as exc:
        raise ConfigError(f"{p}: {exc}") from None


def _schema_of(value):
    if isinstance(value, bool):
        return {"type": "boolean"}
    if isinstance(value, int):
        return {"type": "integer"}
    if isinstance(value, float):
        return {"type": "number"}
    if isinstance(value, str):
        return {"type": "string"}
    if isinstance(value, (list, tuple)):
        return {"type": "array"}
    return {"type": "object"}


def config_schema() -> dict:
    """JSON Schema (draft 2020-12) of the configuration document."""

    def obj(cls, nullable=()):
        inst = cls()
        props = {}
        for f in dataclasses.fields(cls):
            v = getattr(inst, f.name)
            s = obj(type(v)) if dataclasses.is_dataclass(v) else _schema_of(v)
            if f.name in nullable or v is None:
                s = {"type": [s["type"], "null"]} if v is not None else {}
            props[f.name] = s
        return {"type": "object", "additionalProperties": False, "properties": props}

    root = obj(PipelineConfig)
    root["required"] = ["seed"]
    root["properties"]["provenance"]["enum"] = ["depth_fused", "photogrammetric_sim"]
    root["properties"]["terrain"]["properties"]["detail"] = {"type": ["object", "null"]}
    root["properties"]["transfer"]["properties"]["max_radius"] = {"type": ["number", "null"]}
    root["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    root["title"] = f"synthpc pipeline config v{SCHEMA_VERSION}"
    return root


def preset(name: str) -> PipelineConfig:
    """The four training-set variants.

    set1: unmodified 1 m DSM, basic buildings, clutter along roads, no forest or vehicles.
    set2: set1 plus upsampled, detailed DSM, a forest and vehicles.
    set3: set2 with random placement, balconies, and clouds fused from depth maps.
    set4: set3 with simulated photogrammetric clouds labelled by k-NN.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose one of {', '.join(PRESETS)}")
    cfg = PipelineConfig(name=name, seed=0)
    cfg.buildings = {"balcony_probability": 0.0}
    cfg.noise = {}
    if name == "set1":
        return cfg
    cfg.terrain.upsample_factor = 4
    cfg.terrain.detail = {"noise_amplitude": 0.15, "noise_octaves": 3, "carve_depth": 0.3, "carve_width": 1.0,
                          "noise_scale": 8.0}
    cfg.placement.forests = [{"tree_density": 0.04, "hull_point_count": 8, "size": 70.0, "min_distance": 2.5}]
    cfg.placement.vehicle_count = 15
    if name == "set2":
        return cfg
    cfg.placement.mode = "random"
    cfg.buildings = {"balcony_probability": 0.3}
    cfg.provenance = "depth_fused"
    if name == "set3":
        return cfg
    cfg.provenance = "photogrammetric_sim"
    return cfg


# -- helpers ------------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _ring_of(geom) -> np.ndarray:
    return np.asarray(geom.exterior.coords)[:-1]


def _offset_lines(roads, offset, extent):
    x0, y0, x1, y1 = extent
    box = Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]).buffer(-1e-6)
    lines = []
    for r in roads:
        line = LineString(r)
        for side in ("left", "right"):
            off = line.parallel_offset(offset, side)
            clipped = off.intersection(box)
            parts = getattr(clipped, "geoms", [clipped])
            lines += [np.asarray(p.coords) for p in parts if p.length > 0 and p.geom_type == "LineString"]
    return lines


def _forest_region(extent, size, footprints):
    """Corner square of side ``size`` overlapping the least building area (first corner on ties)."""
    x0, y0, x1, y1 = extent
    size = min(size, x1 - x0, y1 - y0)
    corners = [(x0, y0), (x1 - size, y0), (x0, y1 - size), (x1 - size, y1 - size)]
    polys = [Polygon(fp.ring) for fp in footprints]

    def overlap(c):
        sq = Polygon([(c[0], c[1]), (c[0] + size, c[1]), (c[0] + size, c[1] + size), (c[0], c[1] + size)])
        return sum(sq.intersection(p).area for p in polys)

    cx, cy = min(corners, key=overlap)
    return (cx, cy, cx + size, cy + size)


def _placements(cfg: PipelineConfig, terrain, footprints, roads, id_start):
    pc = cfg.placement
    exclusions = [fp.ring for fp in footprints]
    corridors = [_ring_of(LineString(r).buffer(pc.road_clearance, cap_style=2)) for r in roads]
    base = dict(min_distance=pc.min_distance, max_attempts=pc.max_attempts)
    placed, forests = [], []
    lib = default_library()
    nv = {k: len(v) for k, v in lib.items()}

    def constraints(label, region=None, extra=(), **kw):
        args = dict(base, **kw)
        return PlacementConstraints(region or tuple(cfg.extent), exclusion_polygons=exclusions + list(extra),
                                    seed=cfg.stage_seed(f"placement-{label}"), **args)

    for k, spec in enumerate(pc.forests):
        unknown = set(spec) - {"tree_density", "hull_point_count", "size", "min_distance"}
        if unknown:
            raise ConfigError(f"placement.forests[{k}]: unknown key(s) {', '.join(sorted(unknown))}")
        region = _forest_region(cfg.extent, spec.get("size", 70.0), footprints)
        c = constraints(f"forest{k}", region, corridors, min_distance=spec.get("min_distance", 2.5))
        hull, trees = generate_forest(region, spec["tree_density"], spec.get("hull_point_count", 8), c,
                                      cfg.stage_seed(f"forest{k}"), terrain, tuple(pc.tree_scale), placed,
                                      id_start + len(placed), nv[SemanticClass.TREE])
        forests.append(hull)
        placed += trees

    road_mode = pc.mode == "road"
    c = constraints("trees", extra=corridors if road_mode else ())
    placed += place_random(SemanticClass.TREE, pc.tree_count, tuple(pc.tree_scale), c, terrain, placed,
                           id_start + len(placed), n_variants=nv[SemanticClass.TREE])
    for klass, count, spacing, offset in ((SemanticClass.VEHICLE, pc.vehicle_count, pc.vehicle_spacing,
                                           pc.vehicle_offset),
                                          (SemanticClass.CLUTTER, pc.clutter_count, pc.clutter_spacing,
                                           pc.clutter_offset)):
        if count <= 0:
            continue
        label = SemanticClass(klass).name.lower()
        if road_mode:
            got = []
            for side, sign in (("l", 1.0), ("r", -1.0)):
                got += place_along_roads(klass, roads, spacing, pc.lateral_jitter, constraints(f"{label}-{side}"),
                                         terrain, (1.0, 1.0), placed + got, id_start + len(placed) + len(got),
                                         nv[klass], offset=sign * offset)
            got = got[:count]
        else:
            got = place_random(klass, count, (1.0, 1.0), constraints(label), terrain, placed,
                               id_start + len(placed), n_variants=nv[klass])
        placed += got
    return placed, forests, lib


# -- stages ---------------------------------------------------------------------------------


def _frame_paths(out: Path, k: int) -> tuple[Path, Path]:
    return out / "frames" / f"depth_{k:04d}.pfm", out / "frames" / f"label_{k:04d}.pgm"


def stage_generate_scene(cfg: PipelineConfig, out: Path) -> None:
    extent = tuple(cfg.extent)
    p = cfg.paths
    if p.roads:
        roads = parse_roads(Path(p.roads).read_text())
    else:
        roads = road_grid(extent, cfg.inputs.roads_x, cfg.inputs.roads_y, cfg.stage_seed("roads"))
    if p.dsm:
        dsm = parse_heightfield(Path(p.dsm).read_text())
    else:
        dsm = synthetic_dsm(extent, cfg.inputs.dsm_cell_size, cfg.inputs.dsm_relief, cfg.stage_seed("dsm"))
    if p.footprints:
        footprints = parse_footprints(Path(p.footprints).read_text())
    else:
        footprints = synthetic_footprints(extent, cfg.inputs.building_count, roads, cfg.stage_seed("footprints"),
                                          tuple(cfg.inputs.building_size))
    terrain = upsample_bilinear(dsm, cfg.terrain.upsample_factor)
    detail = cfg.detail_params()
    if detail is not None:
        terrain = add_detail(terrain, detail, _offset_lines(roads, cfg.terrain.gutter_offset, terrain.extent))
    bparams = cfg.building_params()
    buildings = generate_building_set(footprints, bparams, bparams.seed, terrain, object_id_start=1)
    placed, forests, lib = _placements(cfg, terrain, footprints, roads, 1 + len(footprints))
    scene = assemble_scene(heightfield_to_mesh(terrain, 0), buildings, placed, lib)

    (out / "inputs").mkdir(parents=True, exist_ok=True)
    (out / "inputs" / "dsm.asc").write_text(write_heightfield(dsm))
    (out / "inputs" / "footprints.geojson").write_text(footprints_to_geojson(footprints))
    (out / "inputs" / "roads.geojson").write_text(roads_to_geojson(roads))
    (out / "terrain.asc").write_text(write_heightfield(terrain))
    (out / "placements.csv").write_text(placements_to_csv(placed))
    (out / "forests.geojson").write_text(json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"id": k},
         "geometry": {"type": "Polygon", "coordinates": [np.vstack([h, h[:1]]).tolist()]}}
        for k, h in enumerate(forests)]}))
    sio.write_mesh(out / "scene.ply", scene)


def _read_rig(out: Path):
    intr = CameraIntrinsics.from_dict(json.loads((out / "rig.json").read_text()))
    return intr, poses_from_csv((out / "poses.csv").read_text())


def stage_plan_flight(cfg: PipelineConfig, out: Path) -> None:
    terrain = parse_heightfield((out / "terrain.asc").read_text())
    f = cfg.flight
    params = FlightParams(tuple(cfg.extent), f.altitude, f.front_overlap, f.side_overlap, tuple(f.headings),
                          float(terrain.elevations.mean()), f.gimbal_pitch)
    intr = cfg.intrinsics()
    poses = plan_crosshatch(params, intr)
    (out / "poses.csv").write_text(poses_to_csv(poses))
    (out / "rig.json").write_text(rig_to_json(intr) + "\n")


def stage_render(cfg: PipelineConfig, out: Path) -> None:
    scene = sio.read_mesh(out / "scene.ply")
    intr, poses = _read_rig(out)
    bvh = build_bvh(scene)
    frames = out / "frames"
    if frames.exists():
        shutil.rmtree(frames)
    frames.mkdir()
    for k, pose in enumerate(poses):
        depth, label = render_frame(bvh, pose, intr)
        dp, lp = _frame_paths(out, k)
        dp.write_bytes(sio.depth_to_pfm_bytes(depth))
        lp.write_bytes(sio.labels_to_pgm_bytes(label))


def _read_frames(out: Path, poses):
    for k, pose in enumerate(poses):
        dp, lp = _frame_paths(out, k)
        if not dp.exists() or not lp.exists():
            raise FileNotFoundError(f"missing frame {k}: {dp.name}/{lp.name}")
        yield (sio.depth_from_pfm_bytes(dp.read_bytes(), str(dp)), sio.labels_from_pgm_bytes(lp.read_bytes(), str(lp)),
               pose)


def stage_reconstruct(cfg: PipelineConfig, out: Path) -> None:
    intr, poses = _read_rig(out)
    gt_meta = {"seed": cfg.seed, "params_digest": params_digest(cfg.to_dict()["render"])}
    gt = fuse_depth_frames(list(_read_frames(out, poses)), intr, cfg.render.fuse_stride, gt_meta)
    sio.write_cloud(out / "gt_cloud.ply", gt)
    scene = sio.read_mesh(out / "scene.ply")
    sim = simulate_photogrammetric_cloud(scene, (intr, poses), cfg.noise_params())
    sio.write_cloud(out / "photogrammetric.ply", sim)


def stage_annotate(cfg: PipelineConfig, out: Path) -> None:
    gt = sio.read_cloud(out / "gt_cloud.ply")
    if cfg.provenance == "depth_fused":
        # labels of a depth-fused cloud come straight from the label frames
        sio.write_cloud(out / "annotated.ply", gt)
        return
    target = sio.read_cloud(out / "photogrammetric.ply")
    if cfg.transfer.method == "knn":
        labels = annotate_by_knn(target, gt, cfg.transfer_params(), build_kdtree(gt.points))
    else:
        intr, poses = _read_rig(out)
        frames = [(lf, df, pose) for df, lf, pose in _read_frames(out, poses)]
        labels = annotate_by_projection(target, frames, intr, cfg.transfer.depth_check)
    annotated = target.relabeled(labels)
    annotated.meta["annotation"] = cfg.transfer.method
    sio.write_cloud(out / "annotated.ply", annotated)


def _class_map(cfg: PipelineConfig) -> dict:
    return {class_id(k): (None if v is None else class_id(v)) for k, v in cfg.evaluation.class_map.items()}


def stage_evaluate(cfg: PipelineConfig, out: Path) -> None:
    cloud = sio.read_cloud(out / "annotated.ply")
    report = evaluate_labels(cloud.label, cloud.true_label, _class_map(cfg))
    (out / "metrics.csv").write_text(render_report(report, "csv"))
    (out / "metrics.json").write_text(render_report(report, "json"))
    (out / "metrics.txt").write_text(render_report(report, "text"))


STAGE_FUNCS = {
    "generate-scene": stage_generate_scene,
    "plan-flight": stage_plan_flight,
    "render": stage_render,
    "reconstruct": stage_reconstruct,
    "annotate": stage_annotate,
    "evaluate": stage_evaluate,
}

STAGE_INPUTS = {
    "generate-scene": [],
    "plan-flight": ["terrain.asc"],
    "render": ["scene.ply", "poses.csv", "rig.json"],
    "reconstruct": ["scene.ply", "poses.csv", "rig.json", "frames"],
    "annotate": ["gt_cloud.ply", "photogrammetric.ply"],
    "evaluate": ["annotated.ply"],
}

STAGE_OUTPUTS = {
    "generate-scene": ["inputs", "terrain.asc", "placements.csv", "forests.geojson", "scene.ply"],
    "plan-flight": ["poses.csv", "rig.json"],
    "render": ["frames"],
    "reconstruct": ["gt_cloud.ply", "photogrammetric.ply"],
    "annotate": ["annotated.ply"],
    "evaluate": ["metrics.csv", "metrics.json", "metrics.txt"],
}

# manifest artifact name -> (producing stage, files)
ARTIFACTS = {
    "scene_mesh": ("generate-scene", ["scene.ply"]),
    "poses": ("plan-flight", ["poses.csv", "rig.json"]),
    "frames": ("render", ["frames"]),
    "gt_cloud": ("reconstruct", ["gt_cloud.ply"]),
    "photogrammetric_cloud": ("reconstruct", ["photogrammetric.ply"]),
    "annotated_cloud": ("annotate", ["annotated.ply"]),
    "metrics_report": ("evaluate", ["metrics.csv", "metrics.json", "metrics.txt"]),
}


# -- manifest -------------------------------------------------------------------------------


def _files(out: Path, rel: str) -> list[Path]:
    p = out / rel
    if p.is_dir():
        return sorted(q for q in p.rglob("*") if q.is_file())
    return [p] if p.is_file() else []


def _ply_count(path: Path) -> int | None:
    if not path.is_file():
        return None
    with open(path, "rb") as fh:
        head = fh.read(4096).split(b"end_header")[0].decode("ascii", "replace")
    for ln in head.splitlines():
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            return int(parts[2])
    return None


def _scene_counts(out: Path) -> dict:
    counts = {}
    fp = out / "inputs" / "footprints.geojson"
    if fp.is_file():
        counts["buildings"] = len(json.loads(fp.read_text())["features"])
    pl = out / "placements.csv"
    if pl.is_file():
        rows = pl.read_text().splitlines()[1:]
        for name in ("tree", "vehicle", "clutter"):
            counts[f"{name}s" if name != "clutter" else "clutter"] = sum(r.split(",")[1] == name for r in rows)
    fo = out / "forests.geojson"
    if fo.is_file():
        counts["forests"] = len(json.loads(fo.read_text())["features"])
    return counts


def build_manifest(cfg: PipelineConfig, out: Path, failure: StageError | None = None) -> dict:
    stages = {}
    for s in STAGES:
        outputs_present = all(_files(out, rel) for rel in STAGE_OUTPUTS[s])
        stages[s] = "done" if outputs_present else "not_run"
    if failure is not None:
        stages[failure.stage] = "failed"
    artifacts = {}
    for name, (stage, rels) in ARTIFACTS.items():
        files = [f for rel in rels for f in _files(out, rel)]
        entry = {"stage": stage, "paths": rels}
        if stages[stage] == "done":
            entry["status"] = "complete"
        elif files:
            entry["status"] = "partial"
        else:
            entry["status"] = "missing"
        if files:
            listing = [(str(f.relative_to(out)), sha256_file(f)) for f in files]
            if len(listing) == 1:
                entry["sha256"] = listing[0][1]
            else:
                entry["files"] = len(listing)
                entry["sha256"] = hashlib.sha256("".join(f"{p}\0{h}\n" for p, h in listing).encode()).hexdigest()
            entry["bytes"] = sum(f.stat().st_size for f in files)
        artifacts[name] = entry
    artifacts["manifest"] = {"stage": "all", "paths": ["manifest.json"], "status": "complete"}
    counts = _scene_counts(out)
    counts["frames"] = len(_files(out, "frames")) // 2
    for key, fname in (("gt_points", "gt_cloud.ply"), ("photogrammetric_points", "photogrammetric.ply"),
                       ("annotated_points", "annotated.ply")):
        n = _ply_count(out / fname)
        if n is not None:
            counts[key] = n
    status = "failed" if failure is not None else ("complete" if all(v == "done" for v in stages.values())
                                                    else "partial")
    sections = cfg.to_dict()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "preset": cfg.name,
        "status": status,
        "master_seed": int(cfg.seed),
        "seeds": {label: cfg.stage_seed(label) for label in
                  ("roads", "dsm", "footprints", "terrain-detail", "buildings", "reconstruct")},
        "config_digest": cfg.digest(),
        "parameter_digests": {k: params_digest(sections[k]) for k in
                              ("inputs", "terrain", "buildings", "placement", "flight", "render", "noise",
                               "transfer", "evaluation")},
        "provenance": cfg.provenance,
        "stages": stages,
        "counts": counts,
        "artifacts": artifacts,
    }
    if failure is not None:
        manifest["error"] = {"stage": failure.stage, "cause": f"{type(failure.cause).__name__}: {failure.cause}"}
    return manifest


def write_manifest(cfg: PipelineConfig, out: Path, failure: StageError | None = None) -> dict:
    m = build_manifest(cfg, out, failure)
    sio.write_json(out / "manifest.json", m)
    return m


# -- drivers --------------------------------------------------------------------------------


def _check_run_config(cfg: PipelineConfig, out: Path, stage: str) -> None:
    saved = out / "config.json"
    if stage == STAGES[0]:
        saved.write_text(cfg.to_json())
        return
    if not saved.is_file():
        raise FileNotFoundError(f"{saved}: run directory has no config; run generate-scene first")
    try:
        prior = config_from_dict(json.loads(saved.read_text()))
    except (ValueError, TypeError) as exc:
        raise ValueError(f"{saved}: {exc}") from None
    if prior.digest() != cfg.digest():
        raise ValueError(f"{saved}: run directory was produced with a different configuration")


def run_stage(cfg: PipelineConfig, stage: str, out=None) -> dict:
    """Run one stage into ``out`` (default ``cfg.paths.output``) and refresh the manifest."""
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}; choose one of {', '.join(STAGES)}")
    out = Path(out if out is not None else cfg.paths.output)
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    try:
        _check_run_config(cfg, out, stage)
        for rel in STAGE_INPUTS[stage]:
            if not _files(out, rel):
                raise FileNotFoundError(f"missing stage input {out / rel}")
        for rel in STAGE_OUTPUTS[stage]:
            p = out / rel
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
        STAGE_FUNCS[stage](cfg, out)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        err = StageError(stage, exc)
        write_manifest(cfg, out, err)
        raise err from exc
    return write_manifest(cfg, out)


def run_pipeline(cfg: PipelineConfig, out=None) -> dict:
    manifest = {}
    for stage in STAGES:
        manifest = run_stage(cfg, stage, out)
    return manifest


def frame_count(cfg: PipelineConfig) -> int:
    """Poses a flat-ground plan would produce (used to size presets)."""
    f = cfg.flight
    intr = cfg.intrinsics()
    params = FlightParams(tuple(cfg.extent), f.altitude, f.front_overlap, f.side_overlap, tuple(f.headings))
    return len(plan_crosshatch(params, intr))


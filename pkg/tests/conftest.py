import os

# allow the 1-vs-many worker comparisons even on small machines; must precede numba import
os.environ.setdefault("NUMBA_NUM_THREADS", "8")
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from synthpc.mesh import SceneMesh, SemanticClass  # noqa: E402
from synthpc.terrain import Heightfield, heightfield_to_mesh  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def flat_ground():
    """Flat 200 x 200 m ground plane at z = 0 centred on the origin."""
    hf = Heightfield(np.zeros((3, 3)), 100.0, (-100.0, -100.0))
    return hf, heightfield_to_mesh(hf)


def random_triangles(rng, n, span=10.0, size=1.0):
    base = rng.uniform(-span, span, (n, 1, 3))
    tris = base + rng.uniform(-size, size, (n, 3, 3))
    return SceneMesh.from_triangles(tris, SemanticClass.BUILDING)


def single_tree_scene(half=30.0):
    """Flat ground with one leaf-disk deciduous tree at the origin."""
    from synthpc.scene import Placement, assemble_scene
    from synthpc.templates import deciduous_tree

    ground = heightfield_to_mesh(Heightfield(np.zeros((2, 2)), 2 * half, (-half, -half)))
    tree = Placement(1, SemanticClass.TREE, (0.0, 0.0, 0.0), 0.0, 1.0)
    return assemble_scene(ground, None, [tree], {SemanticClass.TREE: [deciduous_tree()]})


def small_rig(aoi=(-15.0, -15.0, 15.0, 15.0), altitude=40.0, size=128, focal=128.0, overlaps=(0.8, 0.7)):
    from synthpc.flight import CameraIntrinsics, FlightParams, plan_crosshatch

    intr = CameraIntrinsics(size, size, focal)
    params = FlightParams(aoi, altitude, overlaps[0], overlaps[1])
    return intr, plan_crosshatch(params, intr)


def small_config(name="set4", seed=3, **render):
    """A preset shrunk to a 60 m block so a full run takes a few seconds."""
    from synthpc.pipeline import preset

    cfg = preset(name)
    cfg.seed = seed
    cfg.extent = (0.0, 0.0, 60.0, 60.0)
    cfg.inputs.building_count = 2
    cfg.inputs.building_size = (8.0, 12.0)
    cfg.placement.tree_count = 6
    cfg.placement.clutter_count = 4
    if cfg.placement.vehicle_count:
        cfg.placement.vehicle_count = 4
    for f in cfg.placement.forests:
        f["size"] = 20.0
    cfg.flight.altitude = 40.0
    cfg.render.image_width = render.get("size", 96)
    cfg.render.image_height = render.get("size", 96)
    cfg.render.focal_length = float(render.get("size", 96))
    cfg.render.fuse_stride = 2
    return cfg


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)

"""Procedural stand-ins for marketplace assets: trees, vehicles and street clutter.

Templates sit on the local z = 0 plane at the origin. Tree crowns are loose
clouds of small leaf disks inside an ellipsoid, so rays can slip between the
leaves and hit the inner crown.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synthpc.mesh import Crown, SceneMesh, SemanticClass
from synthpc.rng import make_rng
from synthpc.shapes import box, cylinder, disk

TEMPLATE_SEED = 20200601


@dataclass
class Template:
    name: str
    mesh: SceneMesh
    crown: Crown | None = None  # local frame, object_id unused


def _leafy_crown(rng, center, radii, n_leaves, leaf_radius, inside=None):
    c = np.asarray(center, dtype=float)
    shrink = np.asarray(radii, dtype=float) - leaf_radius
    tris = []
    while len(tris) < n_leaves:
        p = rng.uniform(-1, 1, 3)
        if p @ p > 1:
            continue
        pos = c + p * shrink
        if inside is not None and not inside(pos):
            continue
        normal = rng.normal(size=3)
        tris.append(disk(pos, normal, leaf_radius))
    return np.concatenate(tris)


def deciduous_tree(n_leaves: int = 260, seed: int = TEMPLATE_SEED) -> Template:
    rng = make_rng(seed, "deciduous")
    center, radii = (0.0, 0.0, 5.0), (2.5, 2.5, 2.2)
    trunk = cylinder(0.2, 3.2, segments=6, cap=False)
    leaves = _leafy_crown(rng, center, radii, n_leaves, 0.35)
    mesh = SceneMesh.from_triangles(np.concatenate([trunk, leaves]), SemanticClass.TREE)
    return Template("deciduous", mesh, Crown(-1, center, radii))


def conifer_tree(n_leaves: int = 220, seed: int = TEMPLATE_SEED) -> Template:
    rng = make_rng(seed, "conifer")
    center, radii = (0.0, 0.0, 5.5), (1.9, 1.9, 3.8)
    base_z, apex_z, base_r = 2.0, 9.3, 1.9

    def in_cone(p):
        if not base_z <= p[2] <= apex_z:
            return False
        return np.hypot(p[0], p[1]) <= base_r * (apex_z - p[2]) / (apex_z - base_z)

    trunk = cylinder(0.15, 2.4, segments=6, cap=False)
    leaves = _leafy_crown(rng, center, radii, n_leaves, 0.3, inside=in_cone)
    mesh = SceneMesh.from_triangles(np.concatenate([trunk, leaves]), SemanticClass.TREE)
    return Template("conifer", mesh, Crown(-1, center, radii))


def car(length=4.4, width=1.8) -> Template:
    body = box((-length / 2, -width / 2, 0.25), (length / 2, width / 2, 1.05))
    cabin = box((-length / 4, -width / 2 + 0.1, 1.05), (length / 4 + 0.2, width / 2 - 0.1, 1.55), bottom=False)
    wheels = [box((x - 0.35, y - 0.12, 0.0), (x + 0.35, y + 0.12, 0.25), bottom=False)
              for x in (-length / 3, length / 3) for y in (-width / 2 + 0.15, width / 2 - 0.15)]
    return Template("car", SceneMesh.from_triangles(np.concatenate([body, cabin, *wheels]), SemanticClass.VEHICLE))


def van() -> Template:
    body = box((-2.6, -1.0, 0.3), (2.6, 1.0, 2.3))
    hood = box((2.6, -0.95, 0.3), (3.3, 0.95, 1.2), bottom=False)
    return Template("van", SceneMesh.from_triangles(np.concatenate([body, hood]), SemanticClass.VEHICLE))


def light_pole() -> Template:
    pole = cylinder(0.1, 7.0, segments=6)
    arm = box((0.0, -0.08, 6.8), (1.8, 0.08, 6.95))
    lamp = box((1.5, -0.2, 6.6), (2.0, 0.2, 6.8))
    return Template("light_pole", SceneMesh.from_triangles(np.concatenate([pole, arm, lamp]), SemanticClass.CLUTTER))


def street_sign() -> Template:
    pole = cylinder(0.05, 2.6, segments=6)
    plate = box((-0.4, -0.03, 2.0), (0.4, 0.03, 2.6))
    return Template("street_sign", SceneMesh.from_triangles(np.concatenate([pole, plate]), SemanticClass.CLUTTER))


def bench() -> Template:
    seat = box((-0.9, -0.25, 0.4), (0.9, 0.25, 0.5))
    back = box((-0.9, 0.2, 0.5), (0.9, 0.28, 0.9))
    legs = [box((x - 0.05, -0.25, 0.0), (x + 0.05, 0.25, 0.4), bottom=False) for x in (-0.8, 0.8)]
    return Template("bench", SceneMesh.from_triangles(np.concatenate([seat, back, *legs]), SemanticClass.CLUTTER))


def bin_() -> Template:
    return Template("bin", SceneMesh.from_triangles(cylinder(0.3, 1.0, segments=8), SemanticClass.CLUTTER))


def default_library() -> dict[int, list[Template]]:
    return {
        SemanticClass.TREE: [deciduous_tree(), conifer_tree()],
        SemanticClass.VEHICLE: [car(), van()],
        SemanticClass.CLUTTER: [light_pole(), street_sign(), bench(), bin_()],
    }

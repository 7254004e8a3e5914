"""Readers and writers: PLY point clouds and scene meshes, PFM depth, PGM labels.

Point-cloud PLY (binary little-endian)::

    ply
    format binary_little_endian 1.0
    comment provenance <depth_fused|photogrammetric_sim>
    comment seed <u64>
    comment params_digest <hex>
    element vertex N
    property float x
    property float y
    property float z
    property uchar label
    property uchar true_label
    end_header
    N records of 14 bytes: <f4 x, <f4 y, <f4 z, u1 label, u1 true_label

The ASCII variant swaps the format line for ``format ascii 1.0`` and writes one
whitespace-separated record per line.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from synthpc.cloud import LabeledPointCloud
from synthpc.mesh import Crown, SceneMesh
from synthpc.raycast import DepthFrame, LabelFrame

CLOUD_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "u1"), ("true_label", "u1")])

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


class PlyError(ValueError):
    pass


# -- generic PLY header --------------------------------------------------------------


def _read_header(data: bytes, source: str = "<bytes>"):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError(f"{source}: not a PLY file")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt, comments, elements = None, [], []
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "comment":
            comments.append(ln[len("comment"):].strip())
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise PlyError(f"{source}: line {n}: property before element")
            if parts[1] == "list":
                elements[-1]["props"].append((parts[4], ("list", parts[2], parts[3])))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise PlyError(f"{source}: line {n}: unknown type {parts[1]}")
                elements[-1]["props"].append((parts[2], parts[1]))
        elif parts[0] != "obj_info":
            raise PlyError(f"{source}: line {n}: unexpected header keyword {parts[0]!r}")
    if fmt not in ("binary_little_endian", "ascii"):
        raise PlyError(f"{source}: unsupported PLY format {fmt!r}")
    return fmt, comments, elements, body_start


def _comment_dict(comments) -> dict:
    out = {}
    for c in comments:
        key, _, value = c.partition(" ")
        out[key] = value.strip()
    return out


# -- point clouds ----------------------------------------------------------------------


def _cloud_header(cloud: LabeledPointCloud, fmt: str) -> bytes:
    meta = cloud.meta or {}
    lines = ["ply", f"format {fmt} 1.0", f"comment provenance {cloud.provenance}"]
    for key in ("seed", "params_digest"):
        if key in meta:
            lines.append(f"comment {key} {meta[key]}")
    lines += [f"element vertex {len(cloud)}", "property float x", "property float y", "property float z",
              "property uchar label", "property uchar true_label", "end_header"]
    return ("\n".join(lines) + "\n").encode("ascii")


def cloud_to_ply_bytes(cloud: LabeledPointCloud, ascii: bool = False) -> bytes:
    head = _cloud_header(cloud, "ascii" if ascii else "binary_little_endian")
    rec = np.empty(len(cloud), dtype=CLOUD_DTYPE)
    pts = cloud.points.astype(np.float32)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    rec["label"], rec["true_label"] = cloud.label, cloud.true_label
    if not ascii:
        return head + rec.tobytes()
    rows = [f"{float(r['x'])!r} {float(r['y'])!r} {float(r['z'])!r} {r['label']} {r['true_label']}" for r in rec]
    return head + ("\n".join(rows) + ("\n" if rows else "")).encode("ascii")


def cloud_from_ply_bytes(data: bytes, source: str = "<bytes>") -> LabeledPointCloud:
    fmt, comments, elements, body = _read_header(data, source)
    vert = next((e for e in elements if e["name"] == "vertex"), None)
    if vert is None:
        raise PlyError(f"{source}: no vertex element")
    names = [p[0] for p in vert["props"]]
    for req in ("x", "y", "z", "label", "true_label"):
        if req not in names:
            raise PlyError(f"{source}: vertex property {req!r} missing")
    if any(isinstance(t, tuple) for _, t in vert["props"]):
        raise PlyError(f"{source}: list properties are not supported on vertices")
    dtype = np.dtype([(n, _PLY_TYPES[t]) for n, t in vert["props"]])
    n = vert["count"]
    if fmt == "binary_little_endian":
        need = n * dtype.itemsize
        if len(data) - body < need:
            raise PlyError(f"{source}: truncated vertex data")
        rec = np.frombuffer(data, dtype=dtype, count=n, offset=body)
    else:
        rows = data[body:].decode("ascii").split("\n")
        rows = [r for r in rows if r.strip()][:n]
        if len(rows) < n:
            raise PlyError(f"{source}: truncated vertex data")
        rec = np.empty(n, dtype=dtype)
        for i, r in enumerate(rows):
            vals = r.split()
            if len(vals) != len(names):
                raise PlyError(f"{source}: vertex {i}: expected {len(names)} values")
            rec[i] = tuple(float(v) if dtype[k].kind == "f" else int(v) for k, v in enumerate(vals))
    meta = _comment_dict(comments)
    provenance = meta.pop("provenance", "depth_fused")
    if "seed" in meta:
        meta["seed"] = int(meta["seed"])
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    try:
        return LabeledPointCloud(pts, rec["label"], rec["true_label"], provenance, meta)
    except ValueError as exc:
        raise PlyError(f"{source}: {exc}") from None


def write_cloud(path, cloud: LabeledPointCloud, ascii: bool = False) -> None:
    Path(path).write_bytes(cloud_to_ply_bytes(cloud, ascii))


def read_cloud(path) -> LabeledPointCloud:
    return cloud_from_ply_bytes(Path(path).read_bytes(), str(path))


# -- scene meshes ---------------------------------------------------------------------


def mesh_to_ply_bytes(mesh: SceneMesh) -> bytes:
    """Binary PLY: double vertices, faces with class/object, and a crown element."""
    head = "\n".join([
        "ply", "format binary_little_endian 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property double x", "property double y", "property double z",
        f"element face {mesh.n_triangles}",
        "property list uchar int vertex_indices", "property uchar class", "property int object",
        f"element crown {len(mesh.crowns)}",
        "property int object",
        "property double cx", "property double cy", "property double cz",
        "property double rx", "property double ry", "property double rz",
        "end_header",
    ]) + "\n"
    face = np.empty(mesh.n_triangles, dtype=[("n", "u1"), ("v", "<i4", 3), ("class", "u1"), ("object", "<i4")])
    face["n"] = 3
    face["v"] = mesh.triangles
    face["class"] = mesh.tri_class
    face["object"] = mesh.tri_object
    crown = np.array([(c.object_id, *c.center, *c.radii) for c in mesh.crowns],
                     dtype=[("object", "<i4")] + [(k, "<f8") for k in ("cx", "cy", "cz", "rx", "ry", "rz")])
    return (head.encode("ascii") + mesh.vertices.astype("<f8").tobytes() + face.tobytes() + crown.tobytes())


def mesh_from_ply_bytes(data: bytes, source: str = "<bytes>") -> SceneMesh:
    fmt, _, elements, off = _read_header(data, source)
    names = [e["name"] for e in elements]
    if fmt != "binary_little_endian" or names[:2] != ["vertex", "face"]:
        raise PlyError(f"{source}: not a scene-mesh PLY")
    nv, nf = elements[0]["count"], elements[1]["count"]
    ncr = elements[2]["count"] if len(elements) > 2 and elements[2]["name"] == "crown" else 0
    fdt = np.dtype([("n", "u1"), ("v", "<i4", 3), ("class", "u1"), ("object", "<i4")])
    cdt = np.dtype([("object", "<i4")] + [(k, "<f8") for k in ("cx", "cy", "cz", "rx", "ry", "rz")])
    need = nv * 24 + nf * fdt.itemsize + ncr * cdt.itemsize
    if len(data) - off < need:
        raise PlyError(f"{source}: truncated mesh data")
    verts = np.frombuffer(data, "<f8", nv * 3, off).reshape(nv, 3)
    off += nv * 24
    faces = np.frombuffer(data, fdt, nf, off)
    off += nf * fdt.itemsize
    if nf and (faces["n"] != 3).any():
        raise PlyError(f"{source}: only triangle faces are supported")
    crowns = [Crown(int(r["object"]), (float(r["cx"]), float(r["cy"]), float(r["cz"])),
                    (float(r["rx"]), float(r["ry"]), float(r["rz"])))
              for r in np.frombuffer(data, cdt, ncr, off)]
    return SceneMesh(verts.copy(), faces["v"].astype(np.int64), faces["class"].copy(),
                     faces["object"].astype(np.int64), crowns)


def write_mesh(path, mesh: SceneMesh) -> None:
    Path(path).write_bytes(mesh_to_ply_bytes(mesh))


def read_mesh(path) -> SceneMesh:
    return mesh_from_ply_bytes(Path(path).read_bytes(), str(path))


# -- frames -------------------------------------------------------------------------------


def depth_to_pfm_bytes(frame: DepthFrame) -> bytes:
    """PFM greyscale: ``Pf``, ``W H``, ``-1.0`` (little-endian), rows bottom to top."""
    h, w = frame.depth.shape
    head = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return head + np.ascontiguousarray(frame.depth[::-1], dtype="<f4").tobytes()


def depth_from_pfm_bytes(data: bytes, source: str = "<bytes>") -> DepthFrame:
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0].strip() != b"Pf":
        raise ValueError(f"{source}: not a greyscale PFM")
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise ValueError(f"{source}: malformed PFM header") from None
    dtype = "<f4" if scale < 0 else ">f4"
    if len(parts[3]) < w * h * 4:
        raise ValueError(f"{source}: truncated PFM data")
    arr = np.frombuffer(parts[3], dtype, w * h).reshape(h, w)[::-1]
    return DepthFrame(arr.astype(np.float32))


def labels_to_pgm_bytes(frame: LabelFrame) -> bytes:
    """Binary PGM (P5), maxval 255, rows top to bottom."""
    h, w = frame.labels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(frame.labels, dtype=np.uint8).tobytes()


def labels_from_pgm_bytes(data: bytes, source: str = "<bytes>") -> LabelFrame:
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0].strip() != b"P5":
        raise ValueError(f"{source}: not a binary PGM")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError:
        raise ValueError(f"{source}: malformed PGM header") from None
    if maxval != 255 or len(parts[3]) < w * h:
        raise ValueError(f"{source}: unsupported or truncated PGM")
    return LabelFrame(np.frombuffer(parts[3], np.uint8, w * h).reshape(h, w).copy())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

import struct

import numpy as np
import pytest

from synthpc.cloud import LabeledPointCloud
from synthpc.io import (PlyError, cloud_from_ply_bytes, cloud_to_ply_bytes, depth_from_pfm_bytes, depth_to_pfm_bytes,
                        labels_from_pgm_bytes, labels_to_pgm_bytes, mesh_from_ply_bytes, mesh_to_ply_bytes,
                        read_cloud, write_cloud)
from synthpc.raycast import DepthFrame, LabelFrame

from conftest import single_tree_scene


def sample_cloud(rng, n=50):
    return LabeledPointCloud(rng.normal(0, 100, (n, 3)), rng.integers(0, 5, n), rng.integers(0, 5, n),
                             "photogrammetric_sim", {"seed": 2**64 - 1, "params_digest": "0123456789abcdef"})


def test_binary_layout_byte_exact():
    cloud = LabeledPointCloud([[1.5, -2.0, 3.25]], [2], [4], "depth_fused", {"seed": 7, "params_digest": "ab"})
    data = cloud_to_ply_bytes(cloud)
    head, body = data.split(b"end_header\n")
    assert head.decode().splitlines() == [
        "ply", "format binary_little_endian 1.0", "comment provenance depth_fused", "comment seed 7",
        "comment params_digest ab", "element vertex 1", "property float x", "property float y",
        "property float z", "property uchar label", "property uchar true_label"]
    assert body == struct.pack("<fffBB", 1.5, -2.0, 3.25, 2, 4)
    assert len(body) == 14


def test_binary_round_trip(rng, tmp_path):
    cloud = sample_cloud(rng)
    path = tmp_path / "c.ply"
    write_cloud(path, cloud)
    back = read_cloud(path)
    np.testing.assert_array_equal(back.points, cloud.points.astype(np.float32))
    np.testing.assert_array_equal(back.label, cloud.label)
    np.testing.assert_array_equal(back.true_label, cloud.true_label)
    assert back.provenance == cloud.provenance and back.meta == cloud.meta
    assert cloud_to_ply_bytes(back) == path.read_bytes()


def test_ascii_round_trip(rng):
    cloud = sample_cloud(rng, 20)
    data = cloud_to_ply_bytes(cloud, ascii=True)
    assert b"format ascii 1.0" in data
    back = cloud_from_ply_bytes(data)
    np.testing.assert_array_equal(back.points, cloud.points.astype(np.float32))
    np.testing.assert_array_equal(back.label, cloud.label)
    assert cloud_to_ply_bytes(back) == cloud_to_ply_bytes(cloud)


def test_empty_cloud_round_trip():
    cloud = LabeledPointCloud(np.zeros((0, 3)), [], [], "depth_fused")
    assert len(cloud_from_ply_bytes(cloud_to_ply_bytes(cloud))) == 0
    assert len(cloud_from_ply_bytes(cloud_to_ply_bytes(cloud, ascii=True))) == 0


def test_reader_accepts_extra_properties():
    head = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\n"
            "property double z\nproperty float intensity\nproperty uchar label\nproperty uchar true_label\n"
            "end_header\n").encode()
    body = struct.pack("<dddfBB", 1, 2, 3, 0.5, 1, 1) + struct.pack("<dddfBB", 4, 5, 6, 0.5, 2, 3)
    back = cloud_from_ply_bytes(head + body)
    assert back.points.tolist() == [[1, 2, 3], [4, 5, 6]]
    assert back.true_label.tolist() == [1, 3]


@pytest.mark.parametrize("data", [
    b"not a ply",
    b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n",
    b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n",
    b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
    b"property float z\nproperty uchar label\nproperty uchar true_label\nend_header\n\x00\x00",
    b"ply\nformat ascii 1.0\nproperty float x\nend_header\n",
])
def test_malformed_ply(data):
    with pytest.raises(PlyError):
        cloud_from_ply_bytes(data)


def test_mesh_round_trip():
    scene = single_tree_scene()
    data = mesh_to_ply_bytes(scene)
    back = mesh_from_ply_bytes(data)
    np.testing.assert_array_equal(back.vertices, scene.vertices)
    np.testing.assert_array_equal(back.triangles, scene.triangles)
    np.testing.assert_array_equal(back.tri_class, scene.tri_class)
    np.testing.assert_array_equal(back.tri_object, scene.tri_object)
    assert back.crowns == scene.crowns
    assert mesh_to_ply_bytes(back) == data
    # face record: uchar 3, three int32 indices, uchar class, int32 object
    head, body = data.split(b"end_header\n")
    off = len(scene.vertices) * 24
    n, a, b, c, klass, obj = struct.unpack_from("<BiiiBi", body, off)
    assert (n, a, b, c, klass, obj) == (3, *scene.triangles[0], scene.tri_class[0], scene.tri_object[0])


def test_pfm_layout_and_round_trip(rng):
    depth = rng.uniform(1, 100, (3, 4))
    depth[0, 1] = np.inf
    data = depth_to_pfm_bytes(DepthFrame(depth))
    assert data.startswith(b"Pf\n4 3\n-1.0\n")
    body = data[len(b"Pf\n4 3\n-1.0\n"):]
    # first stored row is the bottom image row
    assert struct.unpack_from("<f", body, 0)[0] == np.float32(depth[2, 0])
    back = depth_from_pfm_bytes(data)
    np.testing.assert_array_equal(back.depth, depth.astype(np.float32))
    with pytest.raises(ValueError):
        depth_from_pfm_bytes(b"PF\n1 1\n-1.0\n0000")
    with pytest.raises(ValueError):
        depth_from_pfm_bytes(b"Pf\n4 4\n-1.0\n0000")


def test_pgm_layout_and_round_trip(rng):
    labels = rng.integers(0, 5, (5, 7)).astype(np.uint8)
    labels[0, 0] = 255
    data = labels_to_pgm_bytes(LabelFrame(labels))
    assert data.startswith(b"P5\n7 5\n255\n")
    assert data[len(b"P5\n7 5\n255\n")] == 255
    np.testing.assert_array_equal(labels_from_pgm_bytes(data).labels, labels)
    with pytest.raises(ValueError):
        labels_from_pgm_bytes(b"P2\n1 1\n255\n0")

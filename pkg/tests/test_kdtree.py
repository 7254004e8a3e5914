import numpy as np
import pytest

from synthpc.kdtree import build_kdtree, knn_linear, knn_query


def oracle(points, queries, k):
    # independent brute force: full distance matrix, stable order on (d^2, index)
    diff = queries[:, None, :] - points[None, :, :]
    d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return idx, np.sqrt(np.take_along_axis(d2, idx, 1))


def test_single_point_source():
    tree = build_kdtree([[1.0, 2.0, 3.0]])
    for q in ([0, 0, 0], [100, -5, 2], [1, 2, 3]):
        idx, dist = knn_query(tree, q, 1)
        assert idx.tolist() == [0]
        assert dist[0] == pytest.approx(np.linalg.norm(np.subtract(q, [1, 2, 3])))


@pytest.mark.parametrize("k", [1, 3, 5])
def test_matches_brute_force(rng, k):
    pts = rng.uniform(-10, 10, (1000, 3))
    qs = rng.uniform(-12, 12, (1000, 3))
    d, i = build_kdtree(pts).query(qs, k)
    oi, od = oracle(pts, qs, k)
    assert np.array_equal(i, oi)
    assert np.array_equal(d, od)


def test_equidistant_lower_index_wins():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    idx, _ = knn_query(build_kdtree(pts), [0, 0, 0], 1)
    assert idx.tolist() == [0]
    pts = pts[[2, 1, 0]]
    idx, _ = knn_query(build_kdtree(pts), [0, 0, 0], 2)
    assert idx.tolist() == [0, 1]


def test_lattice_ties_and_duplicates(rng):
    # integer lattice + duplicated points: exact distance ties everywhere
    g = np.stack(np.meshgrid(*[np.arange(6.0)] * 3), -1).reshape(-1, 3)
    pts = np.concatenate([g, g[rng.permutation(len(g))[:80]]])
    pts = pts[rng.permutation(len(pts))]
    qs = np.concatenate([g[:50], rng.integers(0, 6, (200, 3)) + 0.5 * rng.integers(0, 2, (200, 3))])
    tree = build_kdtree(pts, leaf_size=4)
    for k in (1, 3, 5, 9):
        d, i = tree.query(qs, k)
        oi, od = oracle(pts, qs, k)
        assert np.array_equal(i, oi) and np.array_equal(d, od)


def test_knn_linear_agrees_with_oracle(rng):
    pts = rng.normal(size=(300, 3))
    q = rng.normal(size=3)
    i, d = knn_linear(pts, q, 7)
    oi, od = oracle(pts, q[None], 7)
    assert np.array_equal(i, oi[0]) and np.array_equal(d, od[0])


def test_max_radius_pads(rng):
    pts = rng.uniform(0, 10, (200, 3))
    qs = np.array([[5.0, 5.0, 5.0], [100.0, 100.0, 100.0]])
    d, i = build_kdtree(pts).query(qs, 3, max_radius=2.0)
    assert (i[1] == -1).all() and np.isinf(d[1]).all()
    oi, od = oracle(pts, qs[:1], 3)
    keep = od[0] <= 2.0
    assert np.array_equal(i[0][keep], oi[0][keep])
    assert (i[0][~keep] == -1).all()


def test_every_point_retrievable(rng):
    pts = rng.uniform(0, 1, (500, 3))
    d, i = build_kdtree(pts).query(pts, 1)
    assert np.array_equal(i[:, 0], np.arange(500))
    assert (d == 0).all()


def test_invalid_arguments():
    tree = build_kdtree(np.zeros((3, 3)) + np.arange(3)[:, None])
    with pytest.raises(ValueError):
        tree.query([[0, 0, 0]], 0)
    with pytest.raises(ValueError):
        tree.query([[0, 0, 0]], 4)
    with pytest.raises(ValueError):
        build_kdtree(np.zeros((0, 3)))

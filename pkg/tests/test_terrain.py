import numpy as np
import pytest

from synthpc.mesh import SemanticClass
from synthpc.terrain import (DetailParams, Heightfield, HeightfieldParseError, add_detail,
                             heightfield_to_mesh, parse_heightfield, upsample_bilinear,
                             write_heightfield)


def grid_text(rows, ncols=None, cell=1.0, extra=""):
    ncols = ncols if ncols is not None else len(rows[0])
    head = (f"ncols {ncols}\nnrows {len(rows)}\nxllcorner 0\nyllcorner 0\n"
            f"cellsize {cell}\nNODATA_value -9999\n{extra}")
    return head + "\n".join(" ".join(str(v) for v in r) for r in rows) + "\n"


def test_parse_2x2_round_trip():
    # north row first in the file: [1 2] on top, [0 1] at the southern edge
    hf = parse_heightfield(grid_text([[1, 2], [0, 1]]))
    assert (hf.width, hf.height, hf.cell_size) == (2, 2, 1.0)
    assert hf.elevations.tolist() == [[0, 1], [1, 2]]
    again = parse_heightfield(write_heightfield(hf))
    np.testing.assert_array_equal(again.elevations, hf.elevations)
    assert again.origin == hf.origin and again.cell_size == hf.cell_size


def test_round_trip_is_exact_for_arbitrary_doubles(rng):
    hf = Heightfield(rng.normal(0, 100, (7, 5)), 0.37, (12.5, -3.25))
    again = parse_heightfield(write_heightfield(hf))
    np.testing.assert_array_equal(again.elevations, hf.elevations)
    assert again.origin == hf.origin and again.cell_size == hf.cell_size


def test_short_row_names_its_line():
    text = grid_text([[1, 2, 3], [4, 5]], ncols=3)
    with pytest.raises(HeightfieldParseError) as err:
        parse_heightfield(text)
    assert err.value.line == 8


@pytest.mark.parametrize("text", [
    "ncols 2\nnrows 2\nxllcorner 0\n",
    "ncols two\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n",
    grid_text([[1, "x"], [3, 4]]),
    grid_text([[1, -9999], [3, 4]]),
])
def test_malformed_documents_rejected(text):
    with pytest.raises(HeightfieldParseError):
        parse_heightfield(text)


def test_non_numeric_cell_line_number():
    with pytest.raises(HeightfieldParseError, match="line 7"):
        parse_heightfield(grid_text([[1, "x"], [3, 4]]))


def test_zero_grid_100():
    hf = parse_heightfield(grid_text([[0] * 100] * 100))
    assert hf.elevations.shape == (100, 100)
    assert not hf.elevations.any()


def test_upsample_constant_and_dims():
    hf = Heightfield(np.full((3, 4), 5.0), 1.0)
    up = upsample_bilinear(hf, 4)
    assert (up.width, up.height) == (3 * 4 + 1, 2 * 4 + 1)
    assert up.cell_size == 0.25
    assert (up.elevations == 5.0).all()


def test_upsample_midpoint():
    up = upsample_bilinear(Heightfield([[0.0, 1.0], [1.0, 2.0]], 1.0), 2)
    assert up.elevations[1, 1] == 1.0


def test_upsample_identity_and_nodes(rng):
    hf = Heightfield(rng.normal(size=(6, 9)), 1.0, (3.0, 4.0))
    np.testing.assert_array_equal(upsample_bilinear(hf, 1).elevations, hf.elevations)
    for factor in (2, 3, 5):
        up = upsample_bilinear(hf, factor)
        np.testing.assert_array_equal(up.elevations[::factor, ::factor], hf.elevations)
        assert up.extent == pytest.approx(hf.extent)


def test_upsample_interior_is_bilinear(rng):
    hf = Heightfield(rng.normal(size=(4, 4)), 2.0)
    up = upsample_bilinear(hf, 4)
    # independent oracle: scipy's regular-grid linear interpolant
    from scipy.interpolate import RegularGridInterpolator

    gx, gy = up.node_xy()
    ref = RegularGridInterpolator((np.arange(4) * 2.0, np.arange(4) * 2.0), hf.elevations)(
        np.stack([gy.ravel(), gx.ravel()], 1)).reshape(gx.shape)
    np.testing.assert_allclose(up.elevations, ref, atol=1e-12)


def test_upsample_factor_zero():
    with pytest.raises(ValueError):
        upsample_bilinear(Heightfield(np.zeros((2, 2)), 1.0), 0)


def test_detail_zero_is_identity(rng):
    hf = Heightfield(rng.normal(size=(10, 10)), 1.0)
    out = add_detail(hf, DetailParams(noise_amplitude=0.0, carve_depth=0.3), [])
    np.testing.assert_array_equal(out.elevations, hf.elevations)


def test_detail_carve_straight_path():
    hf = Heightfield(np.zeros((41, 41)), 0.25)
    path = np.array([[0.0, 5.0], [10.0, 5.0]])
    out = add_detail(hf, DetailParams(noise_amplitude=0.0, carve_depth=0.3, carve_width=1.0), [path])
    _, gy = hf.node_xy()
    on = np.isclose(gy, 5.0)
    assert np.allclose(out.elevations[on], -0.3)
    assert (out.elevations[np.abs(gy - 5.0) > 1.0] == 0).all()


def test_detail_deterministic_and_bounded(rng):
    hf = Heightfield(rng.normal(size=(50, 60)), 0.5)
    p = DetailParams(noise_amplitude=0.2, carve_depth=0.4, carve_width=1.5, seed=7)
    paths = [np.array([[1.0, 1.0], [20.0, 20.0], [29.0, 3.0]])]
    a, b = add_detail(hf, p, paths), add_detail(hf, p, paths)
    np.testing.assert_array_equal(a.elevations, b.elevations)
    delta = np.abs(a.elevations - hf.elevations)
    assert delta.max() <= 0.2 + 0.4 + 1e-12
    assert delta.max() > 0
    # noise-only cells stay within the noise amplitude
    far = add_detail(hf, DetailParams(noise_amplitude=0.2, carve_depth=0.0, seed=7)).elevations
    gx, gy = hf.node_xy()
    from synthpc.geometry2d import distance_to_polylines
    mask = distance_to_polylines(np.stack([gx, gy], -1), paths) > 1.5
    np.testing.assert_array_equal(a.elevations[mask], far[mask])
    assert not np.array_equal(a.elevations, add_detail(hf, DetailParams(0.2, 3, 0.4, 1.5, seed=8), paths).elevations)


def test_detail_path_outside_extent():
    hf = Heightfield(np.zeros((5, 5)), 1.0)
    with pytest.raises(ValueError):
        add_detail(hf, DetailParams(), [np.array([[0.0, 0.0], [10.0, 2.0]])])


@pytest.mark.parametrize("kw", [dict(noise_amplitude=-1), dict(carve_depth=-1), dict(carve_width=0),
                                dict(noise_octaves=0)])
def test_detail_params_invariants(kw):
    with pytest.raises(ValueError):
        DetailParams(**kw)


@pytest.mark.parametrize("n,count", [(2, 2), (3, 8), (5, 32)])
def test_mesh_triangle_count(n, count):
    m = heightfield_to_mesh(Heightfield(np.zeros((n, n)), 1.0))
    assert m.n_triangles == count
    assert (m.tri_class == SemanticClass.GROUND).all()


def test_mesh_flat_normals_and_vertices():
    hf = Heightfield(np.full((4, 3), 2.0), 0.5, (10.0, 20.0))
    m = heightfield_to_mesh(hf)
    np.testing.assert_allclose(m.normals(), np.tile([0, 0, 1.0], (m.n_triangles, 1)))
    # vertex (i, j) at origin + (i, j) * cell
    assert tuple(m.vertices[1 * 3 + 2]) == (11.0, 20.5, 2.0)


def test_mesh_interior_edges_shared_twice(rng):
    hf = Heightfield(rng.normal(size=(6, 7)), 1.0)
    m = heightfield_to_mesh(hf)
    e = np.sort(np.concatenate([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    v = m.vertices[uniq]
    x0, y0, x1, y1 = hf.extent
    on_border = ((np.isclose(v[:, :, 0], x0) | np.isclose(v[:, :, 0], x1)).all(1)
                 | (np.isclose(v[:, :, 1], y0) | np.isclose(v[:, :, 1], y1)).all(1))
    assert (counts[~on_border] == 2).all()
    assert (counts[on_border] == 1).all()


def test_heightfield_invariants():
    with pytest.raises(ValueError):
        Heightfield(np.zeros((1, 5)), 1.0)
    with pytest.raises(ValueError):
        Heightfield(np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError):
        Heightfield(np.array([[0, np.nan], [0, 0]]), 1.0)

import json

import numpy as np
import pytest
from PIL import Image

from cfedic.dic import DicConfig, DicSolution
from cfedic.mesh import ZoneOfInterest, build_connectivity, build_mesh
from cfedic.postprocess import (
    FieldGrid,
    compute_strain,
    export_field,
    interpolate,
    line_cut,
    pixel_grid,
    read_field_csv,
    sample_displacement,
)
from cfedic.shapes import CfeParams

ZOI = ZoneOfInterest(5, 8, 60, 40)


def solution_with(kind, fn, h=10):
    mesh = build_mesh(ZOI, h)
    conn = build_connectivity(mesh, kind)
    x, y = conn.node_coords.T
    u, v = fn(x, y)
    element = "cfe" if isinstance(kind, CfeParams) else kind
    return DicSolution(conn, DicConfig(element=element, element_size=h), np.concatenate([u, v]))


def quadratic(x, y):
    return 0.01 * x**2 - 0.02 * x * y + 0.3, 0.005 * y**2 + 0.01 * x


@pytest.mark.parametrize("kind", [CfeParams(2, 2, 8.0), "q8"])
def test_quadratic_field_reproduced(kind):
    sol = solution_with(kind, quadratic)
    pts = np.random.default_rng(0).uniform([ZOI.x0, ZOI.y0], [ZOI.x1, ZOI.y1], size=(300, 2))
    disp = sample_displacement(sol, pts)
    u, v = quadratic(pts[:, 0], pts[:, 1])
    np.testing.assert_allclose(disp.component("u"), u, atol=1e-9)
    np.testing.assert_allclose(disp.component("v"), v, atol=1e-9)
    strain = compute_strain(sol, pts)
    x, y = pts.T
    np.testing.assert_allclose(strain.component("exx"), 0.02 * x - 0.02 * y, atol=1e-9)
    np.testing.assert_allclose(strain.component("eyy"), 0.01 * y, atol=1e-9)
    np.testing.assert_allclose(strain.component("exy"), 0.5 * (-0.02 * x + 0.01), atol=1e-9)


def test_q4_bilinear_and_nodal_values():
    sol = solution_with("q4", lambda x, y: (0.1 + 0.01 * x * y, -0.2 * y))
    nodes = sol.conn.node_coords
    np.testing.assert_allclose(interpolate(sol.conn, sol.nodal, nodes), sol.nodal, atol=1e-12)
    mid = nodes[:1] + 5.0
    np.testing.assert_allclose(sample_displacement(sol, mid).values[0], [0.1 + 0.01 * 10 * 13, -0.2 * 13])


def _edge_jumps(sol, pts):
    left = pts - [1e-9, 0.0]
    right = pts + [1e-9, 0.0]
    disp = np.abs(sample_displacement(sol, left).values - sample_displacement(sol, right).values).max()
    strain = np.abs(compute_strain(sol, left).component("exx") - compute_strain(sol, right).component("exx"))
    return disp, strain


def _wavy(x, y):
    return np.sin(0.2 * x) * np.cos(0.1 * y), 0.3 * np.cos(0.15 * x + 0.1 * y)


def test_displacement_continuous_across_edges():
    rng = np.random.default_rng(4)
    pts = np.column_stack([ZOI.x0 + 10.0 * rng.integers(1, 6, 50), rng.uniform(ZOI.y0, ZOI.y1, 50)])
    for kind in (CfeParams(2, 2, 8.0), "q4", "q8"):
        disp, _ = _edge_jumps(solution_with(kind, _wavy), pts)
        assert disp < 1e-8


def test_cfe_strain_jumps_vanish_at_nodes_and_are_small_between():
    rng = np.random.default_rng(5)
    nodes = np.column_stack([ZOI.x0 + 10.0 * rng.integers(1, 6, 20), ZOI.y0 + 10.0 * rng.integers(1, 4, 20)])
    between = np.column_stack([nodes[:, 0], nodes[:, 1] + rng.uniform(1, 9, 20)])
    cfe = solution_with(CfeParams(2, 2, 8.0), _wavy)
    q4 = solution_with("q4", _wavy)
    assert _edge_jumps(cfe, nodes)[1].max() < 1e-6
    # off the nodes the normal derivative of a 2D C-FE field does jump, but far less than Q4's
    assert _edge_jumps(cfe, between)[1].max() < 0.2 * _edge_jumps(q4, between)[1].max()


def test_1d_cfe_shape_functions_are_c1_at_element_boundaries():
    from cfedic.shapes import build_patch_topology, shape_table

    for params in (CfeParams(2, 2, 8.0), CfeParams(2, 1, 4.0), CfeParams(1, 2, 8.0)):
        topo = build_patch_topology(params.patch_size, dim=1)
        t = shape_table(params, topo, np.array([[1.0], [-1.0]]), cache=False)
        nodes = t.node_offsets[:, 0]
        # element [-1,1] at its right end vs element [1,3] (nodes shifted by 2) at its left end
        left = dict(zip(nodes, t.grads[0, :, 0]))
        right = dict(zip(nodes + 2, t.grads[1, :, 0]))
        for k in set(left) | set(right):
            assert abs(left.get(k, 0.0) - right.get(k, 0.0)) < 1e-10


def test_line_cut_geometry():
    calls = []

    def sampler(p):
        calls.append(p)
        return p[:, 0] + 10 * p[:, 1]

    cut = line_cut(sampler, ZOI, "row", offset=3.0, spacing=2.0)
    assert np.all(cut.coords[:, 1] == ZOI.y0 + 20 + 3)
    np.testing.assert_allclose(cut.positions, np.arange(ZOI.x0, ZOI.x1 + 1, 2.0))
    np.testing.assert_allclose(cut.values, cut.coords[:, 0] + 10 * cut.coords[:, 1])
    col = line_cut(sampler, ZOI, "column")
    assert np.all(col.coords[:, 0] == ZOI.x0 + 30) and len(col.values) == 41
    with pytest.raises(ValueError):
        line_cut(sampler, ZOI, "row", offset=100)
    with pytest.raises(ValueError):
        line_cut(sampler, ZOI, "diagonal")


def test_pixel_grid():
    pts, shape = pixel_grid(ZOI)
    assert shape == (41, 61) and len(pts) == 41 * 61
    assert pts[0].tolist() == [ZOI.x0, ZOI.y0] and pts[-1].tolist() == [ZOI.x1, ZOI.y1]


def test_csv_roundtrip(tmp_path):
    pts, shape = pixel_grid(ZoneOfInterest(0, 0, 4, 3))
    vals = np.random.default_rng(0).normal(size=(len(pts), 2))
    f = FieldGrid(pts, vals, ("u", "v"), shape)
    export_field(f, "csv", tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "x,y,component,value"
    back = read_field_csv(tmp_path / "f.csv")
    assert back.components == ("u", "v")
    np.testing.assert_array_equal(back.values, vals)
    np.testing.assert_array_equal(back.points, pts)


def test_png_heatmap_with_sidecar(tmp_path):
    pts, shape = pixel_grid(ZoneOfInterest(0, 0, 9, 4))
    f = FieldGrid(pts, pts[:, 0] * 0.1 - 0.2, ("u",), shape)
    written = export_field(f, "png", tmp_path / "u.png")
    img = np.asarray(Image.open(tmp_path / "u.png"))
    assert img.shape == shape and img.dtype == np.uint8
    assert img[0, 0] == 0 and img[0, -1] == 255
    side = json.loads((tmp_path / "u.json").read_text())
    assert side["min"] == pytest.approx(-0.2) and side["max"] == pytest.approx(0.7)
    assert len(written) == 2
    with pytest.raises(ValueError):
        export_field(FieldGrid(pts, pts[:, 0], ("u",)), "png", tmp_path / "x.png")
    with pytest.raises(ValueError):
        export_field(f, "jpeg", tmp_path / "x.jpg")

import numpy as np
import pytest

from waveobs.grid import GridError, disk_grid, interval_grid, rectangle_grid
from waveobs.regions import RegionMismatch, SpaceTimeRegion, TimeAxis, read_pgm


def test_interval_nodes_and_boundary():
    g = interval_grid(0.0, 1.0, 10)
    assert g.shape == (11,)
    assert g.inside.sum() == 9
    np.testing.assert_allclose(g.boundary_points[:, 0], [0.0, 1.0])
    np.testing.assert_allclose(g.normals[:, 0], [-1.0, 1.0])
    assert g.cell_volume == pytest.approx(0.1)


def test_rectangle_skips_corners():
    g = rectangle_grid((0, 0), (1, 2), (4, 8))
    assert g.shape == (5, 9)
    # 2*(3 + 7) edge nodes without the four corners
    assert len(g.boundary_points) == 20
    assert np.allclose(np.linalg.norm(g.normals, axis=1), 1)


def test_disk_boundary_on_circle():
    g = disk_grid((0.0, 0.0), 1.0, 20)
    r = np.linalg.norm(g.boundary_points, axis=1)
    np.testing.assert_allclose(r, 1.0)
    assert np.all(np.linalg.norm(g.nodes[g.inside], axis=-1) < 1)


def test_bad_grids():
    with pytest.raises(GridError):
        interval_grid(1.0, 0.0, 10)
    with pytest.raises(GridError):
        interval_grid(0.0, 1.0, 1)


def test_time_axes_integrate_constants():
    for ax in (TimeAxis.midpoint(2.0, 7), TimeAxis.trapezoid(2.0, 9)):
        assert ax.weights.sum() == pytest.approx(2.0)
    assert TimeAxis.midpoint(1.0, 4).same_as(TimeAxis.midpoint(1.0, 4))
    assert not TimeAxis.midpoint(1.0, 4).same_as(TimeAxis.midpoint(1.0, 5))


def _cyl(lo, hi, n=40, nt=10):
    g = interval_grid(0, 1, n)
    ax = TimeAxis.midpoint(1.0, nt)
    x = g.nodes[..., 0]
    return SpaceTimeRegion.cylinder(ax, (x > lo) & (x < hi), g, "c")


def test_set_algebra_and_measure():
    a, b = _cyl(0.2, 0.6), _cyl(0.4, 0.9)
    assert (a & b).issubset(a) and (a & b).issubset(b)
    assert a.issubset(a | b)
    assert (a - b).violations(a) == 0
    assert ((a - b) & b).empty
    # 0.2 < x < 0.6 on a 0.025 lattice: 15 nodes
    assert a.measure() == pytest.approx(15 * 0.025)
    assert a.closure().measure() > a.measure()
    assert a.issubset(a.closure())


def test_mismatched_regions_refuse_to_combine():
    with pytest.raises(RegionMismatch):
        _ = _cyl(0.2, 0.6, n=40) | _cyl(0.2, 0.6, n=20)


def test_pgm_round_trip(tmp_path):
    a = _cyl(0.2, 0.6)
    a.write_pgm(tmp_path / "a.pgm")
    img, comments = read_pgm((tmp_path / "a.pgm").read_bytes())
    assert img.shape == (10, 41)
    np.testing.assert_array_equal(img > 0, a.mask)
    assert comments[0] == "region c"


def test_csv_lists_every_node():
    a = _cyl(0.2, 0.6)
    rows = a.to_csv().splitlines()
    assert rows[0].startswith("# schema")
    assert rows[1] == "t,x1"
    assert len(rows) - 2 == int(a.mask.sum())

import numpy as np
import pytest

from magmap.data import MapTable
from magmap.errors import DataError
from magmap.render import certainty, magnitude_raster, read_pgm, render, slice_table


def table(nx, ny, nz=1, mean=None, var=None, seed=0):
    rng = np.random.default_rng(seed)
    n = nx * ny * nz
    axes = (np.arange(nx, dtype=float), np.arange(ny, dtype=float), np.arange(nz, dtype=float))
    mean = rng.normal(size=(n, 3)) if mean is None else mean
    var = rng.uniform(0, 1, size=(n, 3)) if var is None else var
    return MapTable(axes, mean, var)


def test_constant_magnitude_is_uniform(tmp_path):
    t = table(5, 4, mean=np.tile([0.3, 0.4, 0.0], (20, 1)))
    render(t, tmp_path / "m.pgm")
    img = read_pgm(tmp_path / "m.pgm")
    assert np.unique(img).size == 1


def test_image_dimensions(tmp_path):
    shape = render(table(7, 3), tmp_path / "m.pgm", tmp_path / "c.pgm")
    assert shape == (3, 7)
    assert read_pgm(tmp_path / "m.pgm").shape == (3, 7)
    assert read_pgm(tmp_path / "c.pgm").shape == (3, 7)


def test_darker_is_stronger():
    img = magnitude_raster(np.array([[0.0, 1.0, 2.0]]))
    assert img[0, 0] == 255 and img[0, 2] == 0
    assert img[0, 0] > img[0, 1] > img[0, 2]


def test_certainty_on_two_nodes():
    prior = 0.25
    t = table(2, 1, mean=np.ones((2, 3)), var=np.array([[prior] * 3, [0.0] * 3]))
    _, std = slice_table(t)
    np.testing.assert_allclose(certainty(std), [[0.0, 1.0]])


def test_orientation_top_row_is_max_y():
    mean = np.zeros((6, 3))
    mean[1, 0] = 1.0  # node (x=0, y=1): strongest field
    mag, _ = slice_table(table(3, 2, mean=mean))
    assert mag[0, 0] == 1.0


def test_three_dimensional_lattice_needs_slice(tmp_path):
    t = table(3, 3, nz=2)
    with pytest.raises(DataError, match="slice"):
        render(t, tmp_path / "m.pgm")
    render(t, tmp_path / "m.pgm", z_index=1)
    with pytest.raises(DataError):
        render(t, tmp_path / "m.pgm", z_index=2)


def test_missing_variance_rejected_for_certainty(tmp_path):
    t = table(2, 2, var=np.full((4, 3), np.nan))
    render(t, tmp_path / "m.pgm")
    with pytest.raises(DataError):
        render(t, tmp_path / "m.pgm", tmp_path / "c.pgm")

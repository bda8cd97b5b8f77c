import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magmap.data import (MapTable, TrainingSet, budget_match, load_map, load_measurements,
                         make_simulation_dataset, rmse, sample_curlfree_prior, sample_grid_prior,
                         save_map, save_measurements, simulation_positions, split_train_test)
from magmap.data import SIMULATION_Z
from magmap.errors import CapacityError, ConfigError, DataError
from magmap.grid import InducingGrid, build_grid
from magmap.kernels import Hyperparameters, curlfree_block


def test_pure_noise_limit():
    hyp = Hyperparameters(1.0, 1e-12, 0.04)
    P = np.random.default_rng(0).uniform(-5, 5, size=(2000, 3))
    Y = sample_curlfree_prior(P, hyp, seed=1)
    var = Y.var(axis=0)
    # standard error of a sample variance is sigma^2 sqrt(2 / (n - 1))
    assert np.all(np.abs(var - 0.04) <= 3 * 0.04 * np.sqrt(2 / 1999))


def test_sampler_deterministic(rng):
    P = rng.normal(size=(30, 3))
    hyp = Hyperparameters(1, 1, 0.01)
    np.testing.assert_array_equal(sample_curlfree_prior(P, hyp, 5), sample_curlfree_prior(P, hyp, 5))


def test_sampler_cap(rng):
    with pytest.raises(CapacityError):
        sample_curlfree_prior(rng.normal(size=(10, 3)), Hyperparameters(1, 1, 0.1), 0, cap=29)


def test_sampler_clean_part_differs_by_noise(rng):
    P = rng.normal(size=(400, 3))
    Y, clean = sample_curlfree_prior(P, Hyperparameters(1, 1, 0.01), 3, return_clean=True)
    np.testing.assert_allclose((Y - clean).std(), 0.1, rtol=0.1)


def test_monte_carlo_covariance():
    hyp = Hyperparameters(2.0, 1.0, 0.01)
    P = np.array([[0.0, 0.0, 0.0], [0.7, -0.6, 0.3]])
    draws = np.stack([sample_curlfree_prior(P, hyp, seed).reshape(-1) for seed in range(2000)])
    C = np.cov(draws, rowvar=False)
    auto = curlfree_block(P[0], P[0], hyp) + hyp.noise_variance * np.eye(3)
    cross = curlfree_block(P[0], P[1], hyp)
    assert np.linalg.norm(C[:3, :3] - auto) <= 0.1 * np.linalg.norm(auto)
    assert np.linalg.norm(C[:3, 3:] - cross) <= 0.1 * np.linalg.norm(cross)


def test_grid_sampler_shape_and_determinism(rng):
    grid = build_grid([[0, 4], [0, 4], [0, 1]], (10, 10, 5), padding=1)
    P = rng.uniform([0, 0, 0], [4, 4, 1], size=(50, 3))
    hyp = Hyperparameters(1, 1, 0.01)
    a = sample_grid_prior(grid, P, hyp, 9)
    assert a.shape == (50, 3)
    np.testing.assert_array_equal(a, sample_grid_prior(grid, P, hyp, 9))


def test_paper_defaults():
    import inspect

    defaults = inspect.signature(make_simulation_dataset).parameters
    assert defaults["area_half_width"].default == 20.0
    assert defaults["n_points"].default == 6000
    hyp = defaults["hyp"].default
    assert (hyp.length_scale, hyp.signal_variance, hyp.noise_variance) == (2.0, 1.0, 0.01)
    P = simulation_positions(20.0, 6000, seed=0)
    assert P.shape == (6000, 3)
    assert np.abs(P[:, :2]).max() <= 20 and np.all(P[:, 2] == SIMULATION_Z)


def test_area_one_subset_size():
    data = make_simulation_dataset(20.0, 6000, seed=4, subarea_half_width=10.0)
    assert abs(len(data) - 1500) <= 3 * np.sqrt(6000)
    assert np.abs(data.positions[:, :2]).max() <= 10
    again = make_simulation_dataset(20.0, 6000, seed=4, subarea_half_width=10.0)
    np.testing.assert_array_equal(data.measurements, again.measurements)


def test_split():
    data = TrainingSet(np.arange(30.0).reshape(10, 3), np.arange(30.0).reshape(10, 3))
    train, test = split_train_test(data, 0.8, seed=2)
    assert (len(train), len(test)) == (8, 2)
    merged = np.sort(np.concatenate([train.positions[:, 0], test.positions[:, 0]]))
    np.testing.assert_array_equal(merged, data.positions[:, 0])
    t2, _ = split_train_test(data, 0.8, seed=2)
    np.testing.assert_array_equal(train.positions, t2.positions)
    with pytest.raises(DataError):
        split_train_test(TrainingSet(np.zeros((0, 3)), np.zeros((0, 3))), 0.8)
    with pytest.raises(ConfigError):
        split_train_test(data, 1.0)


def test_rmse():
    a = np.random.default_rng(0).normal(size=(5, 3))
    assert rmse(a, a) == 0
    np.testing.assert_allclose(rmse(a + 0.3, a), 0.3)
    np.testing.assert_allclose(rmse([[0, 0, 0], [1, 1, 1]], np.zeros((2, 3))), np.sqrt(0.5))
    with pytest.raises(DataError):
        rmse(np.zeros((2, 3)), np.zeros((3, 3)))


def test_budget_hand_values():
    g = build_grid([[0, 1]] * 3, (4, 4, 4), padding=0)
    rep = budget_match(1, g, 1)
    assert rep.operations == 771
    assert rep.n_dwn == round(771 ** (1 / 3))
    assert rep.m_bf == round(np.sqrt(771 / 3))
    with pytest.raises(ConfigError):
        budget_match(10, g, 0)


def test_budget_exact_cube():
    # J = 1, N = 2 on a 1x1 grid: O = 3 * 2 + 1 * (1 + 1) = 8
    rep = budget_match(2, InducingGrid((0.0, 0.0), (0.0, 0.0), (1, 1)), 1)
    assert rep.operations == 8 and rep.n_dwn == 2


@settings(max_examples=50)
@given(st.integers(1, 10**5), st.integers(4, 60), st.integers(4, 60), st.integers(4, 8), st.integers(1, 500))
def test_budget_formula(n, m1, m2, m3, J):
    g = InducingGrid((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (m1, m2, m3))
    rep = budget_match(n, g, J)
    ops = J * (3 * n + m1 * m2 * m3 * (m1 + m2 + m3))
    assert rep.operations == ops
    assert abs(rep.n_dwn - ops ** (1 / 3)) <= 0.5 + 1e-9
    assert rep.m_bf == round(np.sqrt(ops / (3 * n)))


def test_budget_rounds_cube_root_not_cube():
    # cbrt(52736) = 37.50039 rounds up, although 37^3 is closer to 52736 than 38^3
    g = InducingGrid((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (8, 35, 4))
    assert budget_match(32, g, 1).n_dwn == 38
    assert budget_match(1, InducingGrid((0.0,) * 3, (1.0,) * 3, (4, 4, 4)), 1).n_dwn == round(771 ** (1 / 3))


# -- files ------------------------------------------------------------------

def test_measurement_round_trip(tmp_path, rng):
    P = rng.normal(size=(20, 3))
    Y = rng.normal(size=(20, 3)) + [5.0, -2.0, 40.0]
    raw = TrainingSet(P, Y)
    path = tmp_path / "m.csv"
    save_measurements(raw, path)
    assert path.read_text().splitlines()[0] == "x,y,z,Bx,By,Bz"
    loaded = load_measurements(path)
    np.testing.assert_allclose(loaded.measurements.mean(axis=0), 0, atol=1e-10 * np.abs(Y).max())
    np.testing.assert_allclose(loaded.measurements + loaded.component_means, Y, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(loaded.positions, P)
    save_measurements(loaded, tmp_path / "again.csv")
    np.testing.assert_allclose(load_measurements(tmp_path / "again.csv", subtract_mean=False).measurements, Y,
                               rtol=1e-12)


@pytest.mark.parametrize("row,line", [("1,2,3,nan,0,0", 3), ("1,2,3,4", 3), ("1,2,x,4,5,6", 3)])
def test_bad_rows_name_line(tmp_path, row, line):
    path = tmp_path / "bad.csv"
    path.write_text("x,y,z,Bx,By,Bz\n0,0,0,1,1,1\n" + row + "\n")
    with pytest.raises(DataError, match=f":{line}:"):
        load_measurements(path)


def test_map_round_trip(tmp_path, rng):
    axes = (np.array([0.0, 0.5, 1.0]), np.array([-1.0, 1.0]), np.array([0.2]))
    mean = rng.normal(size=(6, 3))
    var = rng.uniform(0, 1, size=(6, 3))
    table = MapTable(axes, mean, var)
    path = tmp_path / "map.csv"
    save_map(table, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,z,mean_x,mean_y,mean_z,var_x,var_y,var_z,magnitude"
    assert len(lines) == 7
    back = load_map(path)
    np.testing.assert_array_equal(back.mean, mean)
    np.testing.assert_array_equal(back.variance, var)
    assert back.shape == (3, 2, 1)
    np.testing.assert_allclose(np.loadtxt(path, delimiter=",", skiprows=1)[:, 9], np.linalg.norm(mean, axis=1))

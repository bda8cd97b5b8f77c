import numpy as np
import pytest

from magmap.data import TrainingSet, downsample_baseline, sample_curlfree_prior, simulation_positions
from magmap.errors import CapacityError, ConfigError
from magmap.exact_gp import (_gram, fit_exact, nlml_exact, predict_exact, predict_sor, prior_block,
                             train_hyperparameters)
from magmap.grid import build_grid
from magmap.kernels import Hyperparameters, curlfree_block

HYP = Hyperparameters(1.0, 2.0, 0.05)


def random_set(n, rng, hyp=HYP, box=3.0):
    P = rng.uniform(-box, box, size=(n, 3))
    return TrainingSet(P, sample_curlfree_prior(P, hyp, rng))


def assert_loewner_below(blocks, prior, tol=1e-8):
    for B, Pb in zip(blocks, prior):
        np.testing.assert_allclose(B, B.T, atol=1e-12)
        assert np.linalg.eigvalsh(B).min() >= -tol
        assert np.linalg.eigvalsh(Pb - B).min() >= -tol


def test_empty_model_reverts_to_prior(rng):
    model = fit_exact(TrainingSet(np.zeros((0, 3)), np.zeros((0, 3))), HYP)
    m, v = predict_exact(model, rng.normal(size=(4, 3)))
    np.testing.assert_array_equal(m, 0.0)
    np.testing.assert_allclose(v, np.broadcast_to(prior_block(HYP), (4, 3, 3)))


def test_single_point_shrinkage():
    y = np.array([0.3, -1.2, 0.7])
    p = np.array([0.5, 0.1, -0.2])
    model = fit_exact(TrainingSet(p[None], y[None]), HYP)
    m, _ = predict_exact(model, p[None])
    prior = HYP.signal_variance / HYP.length_scale**2
    np.testing.assert_allclose(m[0], y * prior / (prior + HYP.noise_variance), rtol=1e-7)
    # hand 3x3 solve with the assembled block
    B = curlfree_block(p, p, HYP)
    np.testing.assert_allclose(m[0], B @ np.linalg.solve(B + HYP.noise_variance * np.eye(3), y), rtol=1e-7)


def test_factorization_round_trip(rng):
    train = random_set(50, rng)
    model = fit_exact(train, HYP)
    A = _gram(train, HYP)
    np.testing.assert_allclose(A @ model.alpha, train.targets, rtol=0, atol=1e-8 * np.abs(train.targets).max())
    rel = np.linalg.norm(model.chol @ model.chol.T - A) / np.linalg.norm(A)
    assert rel <= 1e-8


def test_far_query_is_prior(rng):
    train = random_set(30, rng)
    model = fit_exact(train, HYP)
    m, v = predict_exact(model, [[40.0, 0.0, 0.0], [0.0, -35.0, 10.0]])
    assert np.abs(m).max() <= 1e-6 * HYP.signal_std / HYP.length_scale
    np.testing.assert_allclose(v, np.broadcast_to(prior_block(HYP), (2, 3, 3)), atol=1e-10)


def test_noiseless_interpolation(rng):
    hyp = Hyperparameters(1.0, 2.0, 1e-12)
    P = rng.uniform(-2, 2, size=(15, 3))
    Y = rng.normal(size=(15, 3))
    m, _ = predict_exact(fit_exact(TrainingSet(P, Y), hyp), P[:3])
    np.testing.assert_allclose(m, Y[:3], atol=1e-4)


def test_zero_measurements(rng):
    P = rng.uniform(-2, 2, size=(10, 3))
    model = fit_exact(TrainingSet(P, np.zeros((10, 3))), HYP)
    Q = rng.uniform(-2, 2, size=(5, 3))
    m, v = predict_exact(model, Q)
    np.testing.assert_array_equal(m, 0.0)
    _, v2 = predict_exact(fit_exact(TrainingSet(P, rng.normal(size=(10, 3))), HYP), Q)
    np.testing.assert_allclose(v, v2, rtol=1e-12)


def test_variance_blocks_below_prior(rng):
    model = fit_exact(random_set(40, rng), HYP)
    _, v = predict_exact(model, rng.uniform(-3, 3, size=(25, 3)), chunk=7)
    assert_loewner_below(v, np.broadcast_to(prior_block(HYP), v.shape))


def test_capacity_guard(rng):
    with pytest.raises(CapacityError):
        fit_exact(random_set(10, rng), HYP, cap=27)
    with pytest.raises(CapacityError):
        nlml_exact(random_set(10, rng), HYP, cap=27)


# -- NLML ----------------------------------------------------------------------

def test_nlml_permutation_invariant(rng):
    train = random_set(25, rng)
    perm = rng.permutation(25)
    np.testing.assert_allclose(nlml_exact(train, HYP), nlml_exact(train.subset(perm), HYP), rtol=1e-10, atol=1e-8)


def test_nlml_single_point_gaussian():
    y = np.array([0.4, -0.1, 0.9])
    s2 = HYP.signal_variance / HYP.length_scale**2 + HYP.noise_variance + 1e-8 * HYP.signal_variance
    expected = 0.5 * (y @ y) / s2 + 1.5 * np.log(2 * np.pi * s2)
    np.testing.assert_allclose(nlml_exact(TrainingSet(np.zeros((1, 3)), y[None]), HYP), expected, rtol=1e-12)


def test_nlml_scaling_identity(rng):
    train = random_set(12, rng)
    scaled = TrainingSet(train.positions, 2 * train.measurements)
    hyp4 = Hyperparameters(HYP.length_scale, 4 * HYP.signal_variance, 4 * HYP.noise_variance)
    diff = nlml_exact(scaled, hyp4) - nlml_exact(train, HYP)
    np.testing.assert_allclose(diff, 3 * 12 * np.log(2), rtol=1e-9)


def test_training_never_worse(rng):
    train = random_set(30, rng)
    init = Hyperparameters(3.0, 0.5, 0.2)
    best = train_hyperparameters(train, init, max_evals=60)
    assert nlml_exact(train, best) <= nlml_exact(train, init)
    again = train_hyperparameters(train, best, max_evals=40)
    assert nlml_exact(train, again) <= nlml_exact(train, best)


@pytest.mark.slow
def test_training_recovers_length_scale():
    truth = Hyperparameters(2.0, 1.0, 0.01)
    recovered = []
    for seed in range(10):
        pos_seed, field_seed = np.random.SeedSequence(seed).spawn(2)
        P = simulation_positions(10.0, 400, pos_seed)
        train = TrainingSet(P, sample_curlfree_prior(P, truth, field_seed))
        recovered.append(train_hyperparameters(train, Hyperparameters(1.0, 0.5, 0.05)).length_scale)
    recovered = np.array(recovered)
    assert np.all((recovered > 2.0 / 1.5) & (recovered < 2.0 * 1.5)), recovered


# -- SoR -----------------------------------------------------------------------

def test_sor_dense_grid_matches_full_gp(rng):
    hyp = Hyperparameters(1.0, 1.0, 0.05)
    P = rng.uniform([-1, -1, -0.2], [1, 1, 0.2], size=(20, 3))
    train = TrainingSet(P, sample_curlfree_prior(P, hyp, rng))
    grid = build_grid([[-1, 1], [-1, 1], [-0.2, 0.2]], (16, 16, 10), padding=3)
    Q = rng.uniform([-1, -1, -0.2], [1, 1, 0.2], size=(10, 3))
    m_sor, _ = predict_sor(train, grid, hyp, Q)
    m_full, _ = predict_exact(fit_exact(train, hyp), Q)
    assert np.sqrt(np.mean((m_sor - m_full) ** 2)) <= 1e-3


def test_sor_zero_data_and_psd(rng):
    P = rng.uniform(-1, 1, size=(10, 3))
    grid = build_grid([[-1, 1]] * 3, (6, 6, 6), padding=1)
    Q = rng.uniform(-1, 1, size=(8, 3))
    m, v = predict_sor(TrainingSet(P, np.zeros((10, 3))), grid, HYP, Q)
    np.testing.assert_array_equal(m, 0.0)
    _, prior = predict_sor(TrainingSet(np.zeros((0, 3)), np.zeros((0, 3))), grid, HYP, Q)
    assert_loewner_below(v, prior)


# -- downsampling ------------------------------------------------------------------

def test_downsample_contracts(rng):
    train = random_set(20, rng)
    full = downsample_baseline(train, 20, seed=3)
    np.testing.assert_array_equal(np.sort(full.positions, axis=0), np.sort(train.positions, axis=0))
    assert len(downsample_baseline(train, 0, seed=3)) == 0
    a, b = downsample_baseline(train, 7, seed=11), downsample_baseline(train, 7, seed=11)
    np.testing.assert_array_equal(a.positions, b.positions)
    with pytest.raises(ConfigError):
        downsample_baseline(train, 21, seed=0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lirecon.life.models import (GbrSettings, GprSettings, ModelError, ModelSettings, fit_gbr,
                                 fit_gpr, fit_model)
from oracles import gbr_reference


def test_linear_exact_on_linear_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 4))
    y = X @ [3.0, -1.0, 0.5, 2.0] + 7.0
    m = fit_model(X, y, "lr")
    assert np.max(np.abs(m.predict(X) - y)) <= 1e-8
    assert not m.flagged


def test_linear_singular_design_flagged():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(10, 1))
    m = fit_model(np.hstack([x, x]), x[:, 0] * 2.0, "lr")
    assert m.flagged
    assert np.allclose(m.predict(np.hstack([x, x])), x[:, 0] * 2.0, atol=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.floats(-50.0, 50.0))
def test_linear_affine_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)
    Xq = rng.normal(size=(4, 3))
    p1 = fit_model(X, y, "lr").predict(Xq)
    X2, Xq2 = X.copy(), Xq.copy()
    X2[:, 1] = X2[:, 1] * scale + shift
    Xq2[:, 1] = Xq2[:, 1] * scale + shift
    p2 = fit_model(X2, y, "lr").predict(Xq2)
    assert np.allclose(p1, p2, atol=1e-9 * (1 + np.abs(p1).max()))


@pytest.mark.parametrize("n, depth, trees", [(8, 1, 3), (15, 2, 10), (20, 3, 25)])
def test_gbr_matches_reference(n, depth, trees):
    rng = np.random.default_rng(n)
    x = rng.uniform(0, 10, n)
    y = np.sin(x) + 0.1 * rng.normal(size=n)
    m = fit_gbr(x[:, None], y, GbrSettings(n_trees=trees, max_depth=depth, learning_rate=0.3))
    assert np.allclose(m.predict(x[:, None]), gbr_reference(x, y, trees, depth, 0.3), atol=1e-10)


def test_gbr_fits_nonlinear_training_data():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, size=(120, 2))
    y = np.sin(2 * X[:, 0]) * X[:, 1] + X[:, 0] ** 2
    m = fit_model(X, y, "gbr", ModelSettings(gbr=GbrSettings(n_trees=300)))
    rmse = np.sqrt(np.mean((m.predict(X) - y) ** 2))
    assert rmse < 0.05 * y.std()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_gbr_training_loss_non_increasing(seed, depth):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 3))
    y = rng.normal(size=25)
    m = fit_gbr(X, y, GbrSettings(n_trees=20, max_depth=depth))
    assert np.all(np.diff(m.train_loss) <= 1e-12)


def test_gbr_subsample_deterministic_per_seed():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30)
    s = GbrSettings(n_trees=15, subsample=0.7)
    a = fit_gbr(X, y, s, seed=5).predict(X)
    assert np.array_equal(a, fit_gbr(X, y, s, seed=5).predict(X))
    assert not np.array_equal(a, fit_gbr(X, y, s, seed=6).predict(X))
    with pytest.raises(ModelError):
        fit_gbr(X, y, GbrSettings(subsample=0.0))


def test_gpr_interpolates_with_small_noise():
    x = np.linspace(0, 1, 8)[:, None]
    y = np.sin(3 * x[:, 0])
    m = fit_gpr(x, y, GprSettings(length_scales=(1.0,), signal_vars=(1.0,), noise_vars=(1e-8,)))
    assert np.allclose(m.predict(x), y, atol=1e-4)


def test_gpr_large_noise_shrinks_to_mean():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([1.0, 5.0, 3.0])
    m = fit_gpr(X, y, GprSettings(noise_vars=(1e4,)))
    p = m.predict(X)
    assert np.all(np.abs(p - y.mean()) < 0.01 * np.abs(y - y.mean()).max())


def test_gpr_selects_max_marginal_likelihood():
    rng = np.random.default_rng(7)
    X = rng.uniform(0, 5, size=(30, 1))
    y = np.sin(X[:, 0]) + 0.05 * rng.normal(size=30)
    m = fit_gpr(X, y)
    for ell in GprSettings().length_scales:
        alt = fit_gpr(X, y, GprSettings(length_scales=(ell,)))
        assert alt.log_ml <= m.log_ml + 1e-12


@pytest.mark.parametrize("X, y, kind", [
    (np.ones((1, 2)), np.ones(1), "lr"),
    (np.ones((3, 2)), np.array([1.0, np.nan, 2.0]), "lr"),
    (np.ones((3, 2)), np.ones(3), "svm"),
    (np.ones((3, 2)), np.ones(4), "gbr"),
])
def test_fit_model_validation(X, y, kind):
    with pytest.raises(ModelError):
        fit_model(X, y, kind)


@pytest.mark.parametrize("kind", ["lr", "gpr", "gbr"])
def test_fit_model_deterministic(kind):
    rng = np.random.default_rng(8)
    X = rng.normal(size=(20, 4))
    y = X[:, 0] ** 2 + rng.normal(size=20)
    a = fit_model(X, y, kind, seed=1).predict(X)
    assert np.array_equal(a, fit_model(X, y, kind.upper(), seed=1).predict(X))

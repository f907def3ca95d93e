import logging

import numpy as np
import pytest

from core.discrepancy import loss_spec_for_fit
from core.errors import KernelError
from core.kernel import KernelSpec
from core.learner import (Hypothesis, kfold_indices, krr_fit, krr_objective, lambda_grid, norm_bound_check, predict,
                          weighted_mse)


def test_lambda_grid():
    grid = lambda_grid()
    assert len(grid) == 21
    assert grid[0] == 2.0 ** -25 and grid[-1] == 2.0 ** -5


def test_krr_linear_closed_form():
    x = np.array([0.2, 0.5, 0.9, 1.3])
    y = np.array([0.1, -0.4, 0.3, 0.8])
    w = np.array([0.1, 0.2, 0.3, 0.4])
    lam = 0.05
    h = krr_fit(KernelSpec.linear(), x, y, w, lam)
    slope = np.sum(w * x * y) / (lam + np.sum(w * x * x))
    assert np.allclose(h.linear_weights(), [slope])
    assert np.allclose(predict(h, x), slope * x)


def test_krr_is_a_minimizer():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(8, 1))
    y = np.sin(4 * X[:, 0])
    weights = rng.uniform(0.1, 1.0, size=8)
    kernel = KernelSpec.gaussian(0.3)
    h = krr_fit(kernel, X, y, weights, 1e-3)
    best = krr_objective(h, X, y, weights, 1e-3)
    for _ in range(10):
        other = Hypothesis(kernel, X, h.coeffs + 1e-3 * rng.standard_normal(8))
        assert krr_objective(other, X, y, weights, 1e-3) >= best - 1e-12


def test_krr_factors_duplicate_points(caplog):
    X = np.array([[0.3], [0.3], [0.7]])
    y = np.array([0.5, 0.5, -0.2])
    with caplog.at_level(logging.WARNING, logger="core.learner"):
        h = krr_fit(KernelSpec.gaussian(0.5), X, y, np.ones(3), 1e-300)
    assert "Cholesky failed" not in caplog.text
    assert np.all(np.isfinite(h.coeffs))
    assert np.allclose(predict(h, X), y, atol=1e-6)


def test_krr_zero_weight_points_do_not_matter():
    X = np.array([[0.1], [0.4], [0.8]])
    y = np.array([1.0, 2.0, 100.0])
    h = krr_fit(KernelSpec.linear(), X, y, [0.5, 0.5, 0.0], 0.1)
    h_ref = krr_fit(KernelSpec.linear(), X[:2], y[:2], [0.5, 0.5], 0.1)
    assert np.allclose(h.linear_weights(), h_ref.linear_weights())


def test_krr_validation():
    X = np.ones((2, 1))
    with pytest.raises(ValueError):
        krr_fit(KernelSpec.linear(), X, [1.0, 2.0], [0.5, 0.5], 0.0)
    with pytest.raises(ValueError):
        krr_fit(KernelSpec.linear(), X, [1.0, 2.0], [1.5, -0.5], 0.1)
    with pytest.raises(ValueError):
        krr_fit(KernelSpec.linear(), X, [1.0, 2.0], [0.0, 0.0], 0.1)


def test_hypothesis_algebra():
    h = Hypothesis.from_linear([2.0])
    g = Hypothesis(KernelSpec.linear(), [[1.0], [2.0]], [1.0, -1.0], anchor_scale=[0.5, 0.5])
    both = h.plus(g, scale=2.0)
    x = np.array([[0.5], [1.5]])
    assert np.allclose(both.predict(x), predict(h, x) + 2.0 * predict(g, x))
    assert np.isclose(h.norm_squared(), 4.0)
    assert np.isclose(g.norm_squared(), 0.25)
    with pytest.raises(KernelError):
        h.plus(Hypothesis(KernelSpec.gaussian(1.0), [[0.0]], [1.0]))
    with pytest.raises(KernelError):
        Hypothesis(KernelSpec.linear(), [[0.0], [1.0]], [1.0])


def test_weighted_mse():
    h = Hypothesis.from_linear([1.0])
    X = np.array([[0.0], [1.0]])
    assert weighted_mse(h, X, [1.0, 1.0]) == 0.5
    assert weighted_mse(h, X, [1.0, 1.0], [3.0, 1.0]) == 0.75


def test_norm_bound_on_synthetic_fit(small_ds):
    lam = 0.01
    weights = np.full(small_ds.m, 1.0 / small_ds.m)
    h = krr_fit(KernelSpec.linear(), small_ds.source_x, small_ds.source_y, weights, lam)
    loss = loss_spec_for_fit(h, small_ds.source_x, small_ds.source_y)
    R = KernelSpec.linear().r_squared(small_ds.source_x)
    report = norm_bound_check(h, loss.mu, R, lam)
    assert report.ok
    assert report.norm <= report.bound


def test_norm_bound_zero_labels(small_ds):
    weights = np.full(small_ds.m, 1.0 / small_ds.m)
    h = krr_fit(KernelSpec.linear(), small_ds.source_x, np.zeros(small_ds.m), weights, 0.01)
    report = norm_bound_check(h, 2.0, 1.0, 0.01)
    assert report.norm == 0.0 and report.ok


def test_kfold_indices_partition():
    pairs = kfold_indices(seed=7, m=23, folds=10)
    assert len(pairs) == 10
    seen = np.sort(np.concatenate([val for _, val in pairs]))
    assert np.array_equal(seen, np.arange(23))
    for train, val in pairs:
        assert np.intersect1d(train, val).size == 0
        assert train.size + val.size == 23
    again = kfold_indices(seed=7, m=23, folds=10)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(pairs, again))


def test_kfold_rejects_more_folds_than_points():
    assert len(kfold_indices(seed=0, m=4, folds=4)) == 4
    with pytest.raises(ValueError, match="exceeds"):
        kfold_indices(seed=0, m=4, folds=10)
    with pytest.raises(ValueError):
        kfold_indices(seed=0, m=1, folds=2)
    with pytest.raises(ValueError):
        kfold_indices(seed=0, m=5, folds=1)

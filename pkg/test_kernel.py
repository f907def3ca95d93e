import numpy as np
import pytest

from core.data import WeightVector
from core.errors import KernelError
from core.kernel import (KernelSpec, bandwidth_grid, empirical_features, gram, normalized_bundle, psd_jitter,
                         range_basis)


def test_linear_and_gaussian_gram():
    X = np.array([[0.0], [1.0], [2.0]])
    assert np.allclose(gram(KernelSpec.linear(), X, X), X @ X.T)
    G = gram(KernelSpec.gaussian(1.0), X, X)
    assert np.allclose(np.diag(G), 1.0)
    assert np.isclose(G[0, 1], np.exp(-0.5))
    assert np.isclose(G[0, 2], np.exp(-2.0))
    assert np.array_equal(G, G.T)


def test_kernel_spec_validation():
    with pytest.raises(KernelError):
        KernelSpec("polynomial")
    with pytest.raises(KernelError):
        KernelSpec.gaussian(0.0)
    spec = KernelSpec.from_dict({"kind": "gaussian", "bandwidth": 0.5})
    assert spec.to_dict() == {"kind": "gaussian", "bandwidth": 0.5}


def test_gram_dimension_mismatch():
    with pytest.raises(KernelError):
        gram(KernelSpec.linear(), np.ones((2, 2)), np.ones((3, 1)))


def test_bandwidth_grid():
    grid = bandwidth_grid(2)
    assert len(grid) == 11
    assert grid[0] == 2.0 ** -10 * 2 and grid[-1] == 2.0


def test_r_squared():
    X = np.array([[1.0, 2.0], [0.0, 1.0]])
    assert KernelSpec.linear().r_squared(X) == 5.0
    assert KernelSpec.gaussian(0.3).r_squared(X) == 1.0


def test_range_basis_drops_null_space():
    v = np.array([1.0, 2.0, 2.0]) / 3.0
    vals, vecs = range_basis(4.0 * np.outer(v, v))
    assert vals.size == 1
    assert np.isclose(vals[0], 4.0)
    assert np.isclose(abs(vecs[:, 0] @ v), 1.0)


def test_psd_jitter_keeps_symmetry():
    K = np.array([[1.0, 0.5], [0.5, 1.0]])
    J = psd_jitter(K)
    assert np.array_equal(J, J.T)
    assert np.allclose(J - K, 1e-10 * np.eye(2))


def test_empirical_features_reproduce_gram():
    X = np.linspace(0.0, 1.0, 6).reshape(-1, 1)
    kernel = KernelSpec.gaussian(0.4)
    phi = empirical_features(kernel, X)
    assert np.allclose(phi @ phi.T, gram(kernel, X, X), atol=1e-8)


def test_normalized_bundle_entries(small_ds, linear):
    q = WeightVector.normalized(np.arange(1, small_ds.m + 1))
    bundle = normalized_bundle(linear, small_ds, q)
    n = small_ds.n
    K = gram(linear, small_ds.source_x, small_ds.source_x)
    root_q = np.sqrt(q.weights)
    assert np.allclose(bundle.Kt, gram(linear, small_ds.target_x, small_ds.target_x) / n)
    assert np.allclose(bundle.Ks, np.outer(root_q, root_q) * K)
    assert np.allclose(bundle.Kst, gram(linear, small_ds.target_x, small_ds.source_x) * root_q / np.sqrt(n))
    assert np.allclose(bundle.y_norm, root_q * small_ds.source_y)
    assert bundle.m == small_ds.m and bundle.n == n


def test_normalized_bundle_rejects_wrong_weights(small_ds, linear):
    with pytest.raises(KernelError):
        normalized_bundle(linear, small_ds, WeightVector.uniform(small_ds.m + 1))
    with pytest.raises(KernelError):
        normalized_bundle(linear, small_ds, WeightVector(np.full(small_ds.m, 2.0), simplex=False))

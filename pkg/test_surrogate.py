import numpy as np
import pytest

from core.data import Dataset, WeightVector
from core.errors import InfeasibleCenter, UnboundedDirection
from core.kernel import KernelSpec
from core.surrogate import SurrogateBall, SurrogateSpec, center_hypothesis, r_grid, sample_boundary


def _ball(ds, radius, weights=None, p=2.0, kernel=None):
    weights = WeightVector.uniform(ds.m) if weights is None else weights
    return SurrogateBall(weights, radius, kernel or KernelSpec.linear(), ds.source_x, ds.source_y, p)


def test_union_family_radius(small_ds):
    q = WeightVector.normalized(np.arange(1, small_ds.m + 1))
    spec = SurrogateSpec.union_family(small_ds, q, 0.04, KernelSpec.linear())
    assert len(spec.balls) == 2
    assert spec.groups == ((0,), (1,))
    assert all(ball.radius == pytest.approx(0.2) for ball in spec.balls)
    assert spec.balls[0].weights is q
    assert np.allclose(spec.balls[1].weights.weights, 1.0 / small_ds.m)


def test_spec_validation(small_ds):
    ball = _ball(small_ds, 1.0)
    with pytest.raises(ValueError):
        SurrogateSpec([])
    with pytest.raises(ValueError):
        SurrogateSpec([ball, ball], groups=[[0]])
    with pytest.raises(ValueError):
        SurrogateSpec([ball, _ball(small_ds, 1.0, kernel=KernelSpec.gaussian(1.0))])
    with pytest.raises(ValueError):
        _ball(small_ds, -1.0)


def test_center_is_interior(small_ds):
    ball = _ball(small_ds, 0.5)
    h0 = center_hypothesis(ball)
    assert ball.constraint(h0) < 0


def test_center_of_an_empty_ball(small_ds):
    with pytest.raises(InfeasibleCenter):
        center_hypothesis(_ball(small_ds, 0.0))
    # noisy labels cannot be fit to within 1e-6 by a line through the origin
    with pytest.raises(InfeasibleCenter):
        center_hypothesis(_ball(small_ds, 1e-6))


@pytest.mark.parametrize("p", [2.0, 1.0, 3.0])
def test_boundary_samples_are_on_their_ball(small_ds, p):
    balls = [_ball(small_ds, 0.5, p=p), _ball(small_ds, 0.8, WeightVector.normalized(np.arange(1, 13)), p=p)]
    spec = SurrogateSpec(balls)
    centers = [center_hypothesis(b) for b in balls]
    samples = sample_boundary(spec, centers, k=7, seed=3)
    assert len(samples) == 14
    for j, h in enumerate(samples):
        ball = balls[j // 7]
        assert abs(ball.constraint(h)) <= 1e-8 * max(1.0, ball.radius ** p)
        assert ball.contains(h)


def test_gaussian_boundary_samples(small_ds):
    ball = _ball(small_ds, 0.3, kernel=KernelSpec.gaussian(0.25))
    samples = sample_boundary(SurrogateSpec([ball]), [center_hypothesis(ball)], k=5, seed=0)
    assert all(abs(ball.constraint(h)) <= 1e-8 for h in samples)


def test_group_samples_satisfy_every_member(small_ds):
    inner = _ball(small_ds, 1.0)
    outer = _ball(small_ds, 2.0)
    spec = SurrogateSpec([inner, outer], groups=[[0, 1]])
    centers = [center_hypothesis(inner), center_hypothesis(outer)]
    samples = sample_boundary(spec, centers, k=4, seed=1)
    for h in samples:
        assert inner.contains(h) and outer.contains(h)
        assert abs(inner.constraint(h)) <= 1e-8


def test_fixed_directions_are_reproducible(small_ds):
    ball = _ball(small_ds, 0.5)
    center = center_hypothesis(ball)
    directions = np.random.default_rng(0).standard_normal((3, small_ds.m))
    a = sample_boundary(SurrogateSpec([ball]), [center], k=3, seed=1, directions=directions)
    b = sample_boundary(SurrogateSpec([ball]), [center], k=3, seed=2, directions=directions)
    for ha, hb in zip(a, b):
        assert np.array_equal(ha.predict(small_ds.target_x), hb.predict(small_ds.target_x))
    with pytest.raises(ValueError):
        sample_boundary(SurrogateSpec([ball]), [center], k=2, directions=directions)


def test_center_outside_its_group_is_rejected(small_ds):
    big = _ball(small_ds, 5.0)
    tiny = _ball(small_ds, 1e-3)
    spec = SurrogateSpec([big, tiny], groups=[[0, 1]])
    center = center_hypothesis(big)
    with pytest.raises(InfeasibleCenter):
        sample_boundary(spec, [center, center], k=1)


def test_degenerate_directions_raise():
    ds = Dataset(source_x=np.zeros((4, 1)), source_y=[0.1, -0.1, 0.2, 0.0], target_x=[[0.5]])
    ball = _ball(ds, 1.0)
    with pytest.raises(UnboundedDirection):
        sample_boundary(SurrogateSpec([ball]), [center_hypothesis(ball)], k=1)


def test_r_grid(small_ds):
    grid = r_grid(small_ds, 10)
    upper = float(np.mean(small_ds.source_y ** 2))
    assert len(grid) == 10
    assert grid[-1] == pytest.approx(upper)
    assert grid[0] == pytest.approx(upper / 10)
    assert all(a < b for a, b in zip(grid, grid[1:]))
    with pytest.raises(ValueError):
        r_grid(small_ds, 1)
    zero = Dataset(source_x=small_ds.source_x, source_y=np.zeros(small_ds.m), target_x=small_ds.target_x)
    assert r_grid(zero, 5) == []

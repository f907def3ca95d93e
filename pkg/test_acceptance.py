"""
End-to-end properties of the toolkit on randomized and synthetic instances.

Tests marked ``slow`` run the full-scale benchmark; deselect them with
``pytest -m "not slow"``.
"""

import asyncio
import itertools

import numpy as np
import pytest

from core.data import Dataset, WeightVector
from core.discrepancy import HypothesisClassSpec, disc_l2, dm_minimize, mu_admissibility_suite
from core.gdm import gdm_fit, sampled_objective_terms, surrogate_loss, to_normalized_coeffs
from core.kernel import KernelSpec, normalized_bundle
from core.learner import Hypothesis
from core.pipeline import ExperimentConfig, ExperimentPipeline
from core.sdp import exact_objective, exact_objective_terms, outer_solve_alternating
from core.surrogate import SurrogateBall, SurrogateSpec, center_hypothesis, r_grid, sample_boundary

LINEAR = KernelSpec.linear()


def _random_dataset(rng, m, n, d):
    return Dataset(source_x=rng.standard_normal((m, d)), source_y=rng.standard_normal(m),
                   target_x=rng.standard_normal((n, d)))


def test_dual_optimum_matches_the_primal():
    rng = np.random.default_rng(2024)
    for trial in range(50):
        n = int(rng.integers(2, 11))
        k = int(rng.integers(1, 5))
        ds = _random_dataset(rng, m=int(rng.integers(3, 9)), n=n, d=3)
        fit = gdm_fit(ds, LINEAR, 2.0 ** -4, k=k, seed=trial, r=r_grid(ds, 4)[-1], dm_iters=100)
        assert fit.report.optimal
        assert abs(fit.objective - fit.dual_value) <= 1e-5, trial


def test_surrogate_loss_is_the_minimax_constant():
    rng = np.random.default_rng(7)
    x = rng.uniform(0.0, 1.0, size=(6, 1))
    ds = Dataset(source_x=x, source_y=np.zeros(6), target_x=x)
    x2 = float(np.mean(x[:, 0] ** 2))
    for _ in range(100):
        w = rng.uniform(-1.0, 1.0)
        slopes = rng.uniform(-1.0, 1.0, size=int(rng.integers(1, 6)))
        samples = [Hypothesis.from_linear([s]) for s in slopes]
        # hull of the sampled lines is the slope interval, losses on it are (w - s)^2 E[x^2]
        hull = np.linspace(slopes.min(), slopes.max(), 2001)
        losses = (w - hull) ** 2 * x2
        levels = np.arange(0.0, losses.max() + 1e-4, 1e-4)
        worst = np.max(np.abs(levels[:, None] - losses[None, :]), axis=1)
        best = levels[int(np.argmin(worst))]
        h = Hypothesis.from_linear([w])
        max_term, min_term = sampled_objective_terms(h, samples, ds)
        assert surrogate_loss(h, samples, ds) == pytest.approx(0.5 * (max_term + min_term))
        assert abs(best - surrogate_loss(h, samples, ds)) <= 1e-4 + 1e-9


def _simplex_grid(m, step):
    ticks = int(round(1.0 / step))
    points = [c for c in itertools.product(range(ticks + 1), repeat=m - 1) if sum(c) <= ticks]
    grid = np.array([list(c) + [ticks - sum(c)] for c in points], dtype=float)
    return grid / ticks


@pytest.mark.parametrize("m, step", [(2, 1e-4), (3, 2e-3)])
def test_dm_matches_a_simplex_grid(m, step):
    rng = np.random.default_rng(m)
    ds = Dataset(source_x=rng.uniform(-0.3, 0.3, size=(m, 2)), source_y=np.zeros(m),
                 target_x=rng.uniform(-0.3, 0.3, size=(5, 2)))
    hclass = HypothesisClassSpec(LINEAR, 0.5)
    target_moment = ds.target_x.T @ ds.target_x / ds.n
    grid = _simplex_grid(m, step)
    moments = np.einsum("gi,ij,ik->gjk", grid, ds.source_x, ds.source_x) - target_moment
    brute = float(np.min(np.max(np.abs(np.linalg.eigvalsh(moments)), axis=1)))

    result = dm_minimize(ds, hclass, iters=500, seed=0)
    assert result.discrepancy <= brute + 1e-9
    assert brute - result.discrepancy <= 1e-3
    assert disc_l2(result.weights, ds, hclass) == pytest.approx(result.discrepancy, rel=1e-9, abs=1e-12)


def test_discrepancy_matches_a_hypothesis_grid():
    rng = np.random.default_rng(11)
    radius = 0.75
    angles = np.linspace(0.0, 2.0 * np.pi, 721)
    directions = np.column_stack([np.cos(angles), np.sin(angles)])
    for _ in range(10):
        ds = _random_dataset(rng, m=6, n=5, d=2)
        q = WeightVector.normalized(rng.uniform(0.1, 1.0, size=6))
        # w = -w' = radius * u maximizes over pairs on the boundary
        u = 2.0 * radius * directions
        source = np.sum(q.weights[None, :] * (u @ ds.source_x.T) ** 2, axis=1)
        target = np.mean((u @ ds.target_x.T) ** 2, axis=1)
        oracle = float(np.max(np.abs(source - target)))
        value = disc_l2(q, ds, HypothesisClassSpec(LINEAR, radius))
        assert oracle <= value * (1 + 1e-9)
        assert value == pytest.approx(oracle, rel=0.02)


def test_boundary_samples_are_sound():
    rng = np.random.default_rng(3)
    total = 0
    for trial in range(10):
        ds = _random_dataset(rng, m=8, n=4, d=2)
        p = float(rng.choice([1.5, 2.0, 3.0]))
        w0 = WeightVector.normalized(rng.uniform(0.1, 1.0, size=8))
        w1 = WeightVector.normalized(rng.uniform(0.1, 1.0, size=8))

        def ball(weights, scale):
            level = float(np.sum(weights.weights * np.abs(ds.source_y) ** p))
            return SurrogateBall(weights, scale * level ** (1.0 / p), LINEAR, ds.source_x, ds.source_y, p)

        balls = [ball(w0, 1.0), ball(w0, 1.5), ball(w1, 1.0)]
        spec = SurrogateSpec(balls, groups=[[0, 1], [2]])
        centers = [center_hypothesis(b) for b in balls]
        samples = sample_boundary(spec, centers, k=34, seed=trial)
        owners = [0] * 34 + [1] * 34 + [2] * 34
        for h, owner in zip(samples, owners):
            group = [0, 1] if owner < 2 else [2]
            values = [balls[j].constraint(h) for j in group]
            tols = [1e-8 * max(1.0, balls[j].radius ** p) for j in group]
            assert all(v <= t for v, t in zip(values, tols))
            assert any(abs(v) <= t for v, t in zip(values, tols))
            total += 1
    assert total >= 1000


def test_sampled_and_exact_objectives_agree_in_one_dimension():
    rng = np.random.default_rng(5)
    lam = 2.0 ** -4
    for trial in range(5):
        ds = _random_dataset(rng, m=2, n=2, d=1)
        q = WeightVector.normalized(rng.uniform(0.2, 1.0, size=2))
        radius = float(np.sqrt(np.sum(q.weights * ds.source_y ** 2)))
        spec = SurrogateSpec([SurrogateBall(q, radius, LINEAR, ds.source_x, ds.source_y)])
        fit = gdm_fit(ds, LINEAR, lam, spec=spec, k=64, seed=trial)

        bundle = normalized_bundle(LINEAR, ds, q)
        b = to_normalized_coeffs(fit.hypothesis, ds.n)
        # boundary samples of a one-dimensional ball are its two endpoints
        assert exact_objective(bundle, lam, radius, b) == pytest.approx(fit.objective, rel=1e-6, abs=1e-9)
        outer = outer_solve_alternating(bundle, lam, radius, iters=500)
        assert outer.objective >= fit.objective - 1e-5
        assert outer.objective - fit.objective <= 1e-3


def _evenly_spaced(k):
    angles = 2.0 * np.pi * np.arange(k) / k
    return np.column_stack([np.cos(angles), np.sin(angles)])


def test_sampled_objective_converges_to_the_exact_one():
    lam = 2.0 ** -4
    # h(x_i) = w . x_i = w_i / 2, so the ball is the disc |w - 2y| <= sqrt(8) r
    ds = Dataset(source_x=0.5 * np.eye(2), source_y=np.array([0.1, -0.2]),
                 target_x=np.array([[0.6, 0.2], [-0.1, 0.5]]))
    q = WeightVector.uniform(2)
    radius = 0.4 / np.sqrt(8.0)
    spec = SurrogateSpec([SurrogateBall(q, radius, LINEAR, ds.source_x, ds.source_y)])
    bundle = normalized_bundle(LINEAR, ds, q)
    outer = outer_solve_alternating(bundle, lam, radius, iters=500)
    exact = exact_objective_terms(bundle, lam, radius, outer.b)

    gaps, max_terms, min_terms = [], [], []
    for k in (8, 16, 32, 64):
        # evenly spaced directions: each sample set contains the previous one
        fit = gdm_fit(ds, LINEAR, lam, spec=spec, k=k, directions=_evenly_spaced(k))
        assert fit.report.optimal
        gaps.append(abs(fit.objective - outer.objective))
        max_term, min_term = sampled_objective_terms(outer.hypothesis, fit.samples, ds)
        max_terms.append(max_term)
        min_terms.append(min_term)

    assert gaps[-1] <= 1e-3
    assert gaps[-1] <= gaps[0]
    # at a fixed hypothesis the sampled terms close in on the exact ones from both sides
    assert all(later >= earlier - 1e-12 for earlier, later in zip(max_terms, max_terms[1:]))
    assert all(later <= earlier + 1e-8 for earlier, later in zip(min_terms, min_terms[1:]))
    assert max_terms[-1] <= exact.max_term + 1e-9
    assert min_terms[-1] >= exact.min_term - 1e-8
    assert exact.max_term - max_terms[-1] <= 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
def test_admissibility_at_scale(p):
    assert mu_admissibility_suite(p, 2.0, trials=100_000, seed=17).ok


@pytest.mark.slow
def test_synthetic_benchmark_favors_gdm():
    config = ExperimentConfig(trials=10, methods=("dm", "gdm", "target"))
    report = asyncio.run(ExperimentPipeline(config).run())
    assert report.failed_trials == []
    slopes = report.slopes()
    closer = sum(
        abs(g - t) < abs(d - t) for d, g, t in zip(slopes["dm"], slopes["gdm"], slopes["target"])
    )
    assert closer >= 8
    summary = report.summary()
    assert summary["gdm"]["median"] <= summary["dm"]["median"]

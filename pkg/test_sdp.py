import numpy as np
import pytest

from core.data import Dataset, WeightVector
from core.errors import InfeasibleCenter
from core.kernel import KernelSpec, normalized_bundle
from core.optim import psd_check
from core.sdp import (SdpaModel, TrustRegionProblem, build_sdp, candidate_from_coefficients, check_sdp_candidate,
                      dual_function, exact_objective, exact_objective_terms, eta_min, export_sdpa, inner_max_exact,
                      dual_certificate_block, outer_solve_alternating, read_sdpa, write_sdpa)

LAM = 0.05


def _random_problem(seed, m=2, n=2):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, m))
    C = rng.standard_normal((n, n))
    return TrustRegionProblem(
        Ks=A @ A.T + 0.1 * np.eye(m),
        Kst=rng.standard_normal((n, m)),
        Kt=C @ C.T + 0.1 * np.eye(n),
        b=rng.standard_normal(n),
        y_norm=rng.standard_normal(m),
        r=0.5,
    )


def _boundary_oracle(tr, samples=20000):
    """Brute-force max over the ellipse boundary Ks a = y + r u, |u| = 1."""
    theta = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    u = np.vstack([np.cos(theta), np.sin(theta)])
    a = np.linalg.solve(tr.Ks, tr.y_norm[:, None] + tr.r * u)
    Ka = tr.Kst @ a
    values = 0.5 * np.sum(Ka ** 2, axis=0) - (tr.b @ tr.Kt) @ Ka
    return float(values.max())


@pytest.mark.parametrize("seed", range(8))
def test_inner_max_matches_brute_force(seed):
    tr = _random_problem(seed)
    result = inner_max_exact(tr)
    oracle = _boundary_oracle(tr)
    assert result.value == pytest.approx(oracle, rel=1e-5, abs=1e-7)
    assert result.value >= oracle - 1e-9
    assert tr.violation(result.a_star) <= 1e-8
    assert result.primal_value == pytest.approx(tr.primal(result.a_star))
    assert result.gap <= 1e-6 * max(1.0, abs(result.value))
    assert result.eta_star >= eta_min(tr)
    assert dual_function(tr, result.eta_star) == pytest.approx(result.value, rel=1e-8)


def test_inner_max_hard_case():
    tr = TrustRegionProblem(Ks=np.eye(2), Kst=np.diag([2.0, 1.0]), Kt=np.eye(2), b=np.zeros(2),
                            y_norm=np.zeros(2), r=1.0)
    result = inner_max_exact(tr)
    assert result.hard_case
    assert result.value == pytest.approx(2.0)
    assert result.eta_star == pytest.approx(2.0)
    assert np.allclose(np.abs(result.a_star), [1.0, 0.0])


def test_inner_max_empty_ball():
    tr = TrustRegionProblem(Ks=np.diag([1.0, 0.0]), Kst=np.eye(2), Kt=np.eye(2), b=np.zeros(2),
                            y_norm=[0.0, 1.0], r=0.5)
    with pytest.raises(InfeasibleCenter):
        inner_max_exact(tr)


def test_trust_region_shape_checks():
    with pytest.raises(ValueError):
        TrustRegionProblem(Ks=np.eye(2), Kst=np.ones((3, 3)), Kt=np.eye(3), b=np.zeros(3), y_norm=np.zeros(2), r=1.0)
    with pytest.raises(ValueError):
        TrustRegionProblem(Ks=np.eye(2), Kst=np.ones((2, 2)), Kt=np.eye(2), b=np.zeros(2), y_norm=np.zeros(2),
                           r=-1.0)


@pytest.mark.parametrize("seed", range(4))
def test_dual_certificate_block_certifies_the_maximum(seed):
    tr = _random_problem(seed, m=3, n=2)
    result = inner_max_exact(tr)
    block = dual_certificate_block(tr, result.eta_star, result.value)
    assert psd_check(block, tol=1e-7)
    v = np.append(result.a_star, 1.0)
    assert v @ block @ v == pytest.approx(0.0, abs=1e-6 * max(1.0, abs(result.value)))
    shifted = dual_certificate_block(tr, result.eta_star, result.value - 0.1)
    assert v @ shifted @ v == pytest.approx(-0.1, abs=1e-6)
    assert np.linalg.eigvalsh(shifted)[0] < 0


@pytest.fixture
def bundle():
    rng = np.random.default_rng(21)
    ds = Dataset(source_x=rng.standard_normal((4, 5)), source_y=rng.standard_normal(4),
                 target_x=rng.standard_normal((3, 5)))
    q = WeightVector.normalized(rng.uniform(0.5, 1.5, size=4))
    return normalized_bundle(KernelSpec.linear(), ds, q)


def _radius(bundle):
    return 0.5 * float(np.linalg.norm(bundle.y_norm))


def test_exact_objective_gradient_matches_finite_differences(bundle):
    r = _radius(bundle)
    b = np.random.default_rng(3).standard_normal(bundle.n)
    grad = exact_objective_terms(bundle, LAM, r, b).gradient
    eps = 1e-5
    numeric = np.array([
        (exact_objective(bundle, LAM, r, b + eps * e) - exact_objective(bundle, LAM, r, b - eps * e)) / (2 * eps)
        for e in np.eye(bundle.n)
    ])
    assert np.allclose(grad, numeric, rtol=1e-4, atol=1e-6)


def test_exact_objective_terms_are_consistent(bundle):
    r = _radius(bundle)
    b = np.random.default_rng(5).standard_normal(bundle.n)
    terms = exact_objective_terms(bundle, LAM, r, b)
    Ktb = bundle.Kt @ b
    for a in (terms.a_max, terms.a_min):
        residual = bundle.Ks @ a - bundle.y_norm
        assert residual @ residual <= r ** 2 * (1 + 1e-8) + 1e-12
    assert terms.max_term == pytest.approx(float(np.sum((bundle.Kst @ terms.a_max - Ktb) ** 2)), rel=1e-8)
    assert terms.min_term == pytest.approx(float(np.sum((bundle.Kst @ terms.a_min - Ktb) ** 2)), rel=1e-6,
                                           abs=1e-12)
    assert terms.min_term <= terms.max_term + 1e-12


def _rank_one_bundle(seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(source_x=rng.standard_normal((2, 1)), source_y=rng.standard_normal(2),
                 target_x=rng.standard_normal((2, 1)))
    q = WeightVector.normalized(rng.uniform(0.2, 1.0, size=2))
    bundle = normalized_bundle(KernelSpec.linear(), ds, q)
    z = np.sqrt(q.weights) * ds.source_x[:, 0]
    return ds, bundle, z


def _max_over_segment(bundle, z, r, b, samples=20001):
    """Along a = s z / |z|^2 everything depends on s = z'a; the ball is an interval of s."""
    y = bundle.y_norm
    zz, zy = float(z @ z), float(z @ y)
    half = np.sqrt(zy ** 2 - zz * (y @ y - r ** 2))
    s = np.linspace((zy - half) / zz, (zy + half) / zz, samples)
    residual = np.outer(bundle.Kst @ z, s) / zz - (bundle.Kt @ b)[:, None]
    values = np.sum(residual ** 2, axis=0)
    return float(values.max()), float(max(values[0], values[-1]))


@pytest.mark.parametrize("seed", range(6))
def test_exact_objective_with_a_rank_one_ball(seed):
    ds, bundle, z = _rank_one_bundle(seed)
    y = bundle.y_norm
    floor = float(y @ y - (z @ y) ** 2 / (z @ z))
    r = float(np.sqrt(floor + 0.5 * y @ y))
    # the second b puts the target prediction at the center of the interval, so the linear term vanishes
    center = float(z @ y / (z @ z))
    xt = ds.target_x[:, 0]
    centered = xt * center * np.sqrt(ds.n) / float(xt @ xt)
    for b in (np.random.default_rng(seed).standard_normal(2), centered):
        terms = exact_objective_terms(bundle, LAM, r, b)
        grid_max, end_max = _max_over_segment(bundle, z, r, b)
        assert terms.max_term >= grid_max - 1e-12
        assert terms.max_term == pytest.approx(end_max, rel=1e-9, abs=1e-14)
        residual = bundle.Ks @ terms.a_max - y
        assert residual @ residual <= r ** 2 * (1 + 1e-8)


def test_outer_solve_decreases_the_objective(bundle):
    r = _radius(bundle)
    result = outer_solve_alternating(bundle, LAM, r, iters=200)
    assert result.objective <= result.history[0] + 1e-12
    assert result.objective == pytest.approx(exact_objective(bundle, LAM, r, result.b))
    rng = np.random.default_rng(8)
    for _ in range(5):
        other = result.b + 0.1 * rng.standard_normal(bundle.n)
        assert result.objective <= exact_objective(bundle, LAM, r, other) + 1e-7
    assert np.allclose(result.hypothesis.effective_coeffs, result.b / np.sqrt(bundle.n))
    with pytest.raises(ValueError):
        outer_solve_alternating(bundle, 0.0, r)


def test_sdp_candidate_is_feasible_and_weakly_dual(bundle):
    r = _radius(bundle)
    problem = build_sdp(bundle, LAM, r)
    outer = outer_solve_alternating(bundle, LAM, r, iters=200)
    terms = exact_objective_terms(bundle, LAM, r, outer.b)
    cand = candidate_from_coefficients(problem, terms.a_max, terms.eta_star)
    report = check_sdp_candidate(problem, cand)
    assert report.feasible, report.margins
    assert report.objective <= outer.objective + 1e-7
    assert report.objective <= exact_objective(bundle, LAM, r, np.zeros(bundle.n)) + 1e-7


def test_sdp_infeasible_candidate_is_flagged(bundle):
    r = _radius(bundle)
    problem = build_sdp(bundle, LAM, r)
    cand = candidate_from_coefficients(problem, np.full(bundle.m, 100.0))
    report = check_sdp_candidate(problem, cand)
    assert not report.feasible
    assert report.margins["trace"] < 0


def test_sdpa_model_matches_the_blocks(bundle):
    r = _radius(bundle)
    problem = build_sdp(bundle, LAM, r)
    m, n = bundle.m, bundle.n
    assert problem.block_sizes == [m + 1, m + 1, n + 1, -2]
    assert problem.variable_count() == 3 + m + m * (m + 1) // 2

    cand = candidate_from_coefficients(problem, np.linspace(-1.0, 1.0, m), 0.3)
    model = problem.to_sdpa()
    x = problem.vectorize(cand)
    assert x.size == problem.variable_count() == model.c.size
    for dense, sparse in zip(problem.blocks(cand), model.evaluate(x)):
        assert np.allclose(dense, sparse, atol=1e-12)
    assert float(model.c @ x) == pytest.approx(-problem.objective(cand))
    assert all(e[2] <= e[3] for e in model.entries)
    assert all(e[2] >= 1 and e[3] >= 1 for e in model.entries)


def test_sdpa_file_round_trip(tmp_path, bundle):
    problem = build_sdp(bundle, LAM, _radius(bundle))
    path = export_sdpa(problem, tmp_path / "problem.dat-s")
    assert path.read_text().startswith('"')
    model = read_sdpa(path)
    original = problem.to_sdpa()
    assert np.array_equal(model.c, original.c)
    assert list(model.block_sizes) == list(original.block_sizes)
    assert list(model.entries) == list(original.entries)


def test_read_sdpa_accepts_decorated_headers(tmp_path):
    path = tmp_path / "example.dat-s"
    path.write_text('* comment\n"title\n2 = mDIM\n1 = nBLOCK\n{2}\n1.0 2.0\n0 1 1 1 -1.0\n1 1 1 2 0.5\n')
    model = read_sdpa(path)
    assert list(model.block_sizes) == [2]
    assert np.array_equal(model.c, [1.0, 2.0])
    assert model.entries == [(0, 1, 1, 1, -1.0), (1, 1, 1, 2, 0.5)]
    blocks = model.evaluate([2.0, 0.0])
    assert np.allclose(blocks[0], [[1.0, 1.0], [1.0, 0.0]])


def test_write_sdpa_creates_directories(tmp_path):
    model = SdpaModel(c=np.array([1.0]), block_sizes=[1], entries=[(1, 1, 1, 1, 1.0)])
    path = write_sdpa(model, tmp_path / "nested" / "tiny.dat-s")
    assert read_sdpa(path).entries == [(1, 1, 1, 1, 1.0)]


def test_build_sdp_validation(bundle):
    with pytest.raises(ValueError):
        build_sdp(bundle, 0.0, 1.0)
    with pytest.raises(ValueError):
        build_sdp(bundle, LAM, 0.0)

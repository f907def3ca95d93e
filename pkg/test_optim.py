import numpy as np
import pytest

from core.errors import QPError
from core.optim import (QPProblem, QPStatus, kkt_residual, min_norm_ball_lsq, pinv_psd, project_simplex, psd_check,
                        range_projector, solve_qp, spectral_norm)


def test_unconstrained_qp():
    report = solve_qp(QPProblem(P=[[2.0, 0.0], [0.0, 4.0]], c=[-2.0, -4.0]))
    assert report.status == QPStatus.OPTIMAL
    assert np.allclose(report.x, [1.0, 1.0])
    assert np.isclose(report.objective, -3.0)


def test_simplex_constrained_qp():
    # min 1/2 |x - (1, 0)|^2 over the simplex -> (1, 0)
    problem = QPProblem(P=np.eye(2), c=[-1.0, 0.0], Aeq=[[1.0, 1.0]], beq=[1.0], lb=[0.0, 0.0])
    report = solve_qp(problem)
    assert report.optimal
    assert np.allclose(report.x, [1.0, 0.0], atol=1e-9)
    assert report.kkt_residual <= 1e-8


def test_inequality_and_bounds():
    # min (x - 3)^2 with x <= 2 and 0 <= x <= 10
    problem = QPProblem(P=[[2.0]], c=[-6.0], Aineq=[[1.0]], bineq=[2.0], lb=[0.0], ub=[10.0])
    report = solve_qp(problem)
    assert report.optimal
    assert np.isclose(report.x[0], 2.0)
    assert np.isclose(report.ineq_multipliers[0], 2.0)
    assert kkt_residual(problem, report.x, report.eq_multipliers, report.ineq_multipliers) <= 1e-8


def test_infeasible_qp():
    problem = QPProblem(P=np.eye(1), c=[0.0], Aineq=[[1.0], [-1.0]], bineq=[-1.0, -1.0])
    report = solve_qp(problem)
    assert report.status == QPStatus.INFEASIBLE
    assert not report.optimal


def test_inconsistent_equalities():
    problem = QPProblem(P=np.eye(2), c=[0.0, 0.0], Aeq=[[1.0, 1.0], [1.0, 1.0]], beq=[1.0, 2.0])
    assert solve_qp(problem).status == QPStatus.INFEASIBLE


def test_unbounded_qp():
    report = solve_qp(QPProblem(P=[[0.0]], c=[-1.0]))
    assert report.status == QPStatus.UNBOUNDED


def test_operator_splitting_path():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((6, 6))
    P = A @ A.T + np.eye(6)
    c = rng.standard_normal(6)
    problem = QPProblem(P=P, c=c, Aeq=np.ones((1, 6)), beq=[1.0], lb=np.zeros(6))
    exact = solve_qp(problem)
    split = solve_qp(problem, tol=1e-6, max_iter=50_000, active_set_max_vars=0)
    assert split.method == "admm"
    assert split.optimal
    assert abs(split.objective - exact.objective) <= 1e-4 * max(1.0, abs(exact.objective))


def test_qp_shape_validation():
    with pytest.raises(QPError):
        QPProblem(P=[[1.0, 2.0], [0.0, 1.0]], c=[0.0, 0.0])
    with pytest.raises(QPError):
        QPProblem(P=np.eye(2), c=[0.0, 0.0], Aeq=[[1.0, 1.0, 1.0]], beq=[1.0])
    with pytest.raises(QPError):
        QPProblem(P=np.eye(1), c=[0.0], lb=[1.0], ub=[0.0])


@pytest.mark.parametrize("v, expected", [
    ([2.0, 0.0], [1.0, 0.0]),
    ([0.5, 0.5], [0.5, 0.5]),
    ([1.0, 1.0, 1.0], [1 / 3, 1 / 3, 1 / 3]),
    ([-1.0, 0.2, 0.4], [0.0, 0.4, 0.6]),
])
def test_project_simplex(v, expected):
    assert np.allclose(project_simplex(v), expected)


def test_project_simplex_is_a_projection():
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = rng.normal(size=7) * 3
        q = project_simplex(v)
        assert q.min() >= 0 and np.isclose(q.sum(), 1.0)
        # optimality: (v - q)'(p - q) <= 0 for vertices p of the simplex
        for i in range(7):
            p = np.eye(7)[i]
            assert (v - q) @ (p - q) <= 1e-10


def test_spectral_norm():
    value, vec = spectral_norm(np.diag([1.0, -3.0, 2.0]))
    assert np.isclose(value, 3.0)
    assert np.isclose(abs(vec[1]), 1.0, atol=1e-6)
    # +value and -value together fall back to the dense solver
    value, _ = spectral_norm(np.diag([2.0, -2.0, 1.0]))
    assert np.isclose(value, 2.0)


def test_psd_helpers():
    assert psd_check(np.diag([1.0, 0.0]))
    assert not psd_check(np.diag([1.0, -0.1]))
    M = np.diag([4.0, 0.0])
    assert np.allclose(pinv_psd(M), np.diag([0.25, 0.0]))
    assert np.allclose(range_projector(M), np.diag([1.0, 0.0]))


def test_ball_lsq_boundary_and_interior():
    result = min_norm_ball_lsq(np.eye(2), [3.0, 4.0], np.zeros(2), 1.0)
    assert result.on_boundary
    assert np.allclose(result.w, [0.6, 0.8])
    assert np.isclose(result.value, 16.0)

    inside = min_norm_ball_lsq(np.eye(2), [0.3, 0.4], np.zeros(2), 1.0)
    assert not inside.on_boundary
    assert np.allclose(inside.w, [0.3, 0.4])
    assert np.isclose(inside.value, 0.0)

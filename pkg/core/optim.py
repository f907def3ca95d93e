"""
Convex solvers shared by every other module: dense quadratic programs
(primal active set with an operator-splitting fallback), Euclidean simplex
projection, spectral norms, PSD tests, pseudo-inverses and the ball
constrained least-squares problem.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.optimize import brentq, linprog

from core.data import make_rng
from core.errors import QPError
from core.kernel import EIG_CUTOFF, range_basis

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
ACTIVE_SET_MAX_VARS = 400


class QPStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _matrix(values, cols: int, name: str) -> np.ndarray:
    if values is None:
        return np.zeros((0, cols))
    arr = np.atleast_2d(np.asarray(values, dtype=float))
    if arr.size == 0:
        return np.zeros((0, cols))
    if arr.shape[1] != cols:
        raise QPError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    return arr


def _vector(values, size: int, name: str) -> np.ndarray:
    if values is None:
        return np.zeros(size)
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size != size:
        raise QPError(f"{name} has length {arr.size}, expected {size}")
    return arr


@dataclass(frozen=True)
class QPProblem:
    """
    minimize 1/2 x'Px + c'x  subject to  Aeq x = beq,  Aineq x <= bineq,  lb <= x <= ub.
    """

    P: np.ndarray
    c: np.ndarray
    Aeq: Optional[np.ndarray] = None
    beq: Optional[np.ndarray] = None
    Aineq: Optional[np.ndarray] = None
    bineq: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)
        c = np.asarray(self.c, dtype=float).ravel()
        v = c.size
        P = np.asarray(self.P, dtype=float)
        if P.shape != (v, v):
            raise QPError(f"P has shape {P.shape}, expected {(v, v)}")
        scale = max(1.0, float(np.max(np.abs(P)))) if P.size else 1.0
        if P.size and np.max(np.abs(P - P.T)) > 1e-10 * scale:
            raise QPError("P must be symmetric")
        set_("P", 0.5 * (P + P.T))
        set_("c", c)

        Aeq = _matrix(self.Aeq, v, "Aeq")
        set_("Aeq", Aeq)
        set_("beq", _vector(self.beq, Aeq.shape[0], "beq"))
        Aineq = _matrix(self.Aineq, v, "Aineq")
        set_("Aineq", Aineq)
        set_("bineq", _vector(self.bineq, Aineq.shape[0], "bineq"))
        lb = np.full(v, -np.inf) if self.lb is None else _vector(self.lb, v, "lb")
        ub = np.full(v, np.inf) if self.ub is None else _vector(self.ub, v, "ub")
        if np.any(lb > ub):
            raise QPError("lower bounds exceed upper bounds")
        set_("lb", lb)
        set_("ub", ub)

    @property
    def v(self) -> int:
        return self.c.size

    def inequality_rows(self) -> Tuple[np.ndarray, np.ndarray]:
        """All inequalities as G x <= h: general rows, then finite lower, then finite upper bounds."""
        eye = np.eye(self.v)
        low = np.isfinite(self.lb)
        high = np.isfinite(self.ub)
        G = np.vstack([self.Aineq, -eye[low], eye[high]])
        h = np.concatenate([self.bineq, -self.lb[low], self.ub[high]])
        return G, h

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.c @ x)


@dataclass(frozen=True)
class SolveReport:
    x: np.ndarray
    objective: float
    status: QPStatus
    kkt_residual: float
    iterations: int
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    method: str = "active_set"

    @property
    def optimal(self) -> bool:
        return self.status == QPStatus.OPTIMAL


def _problem_scale(problem: QPProblem, G: np.ndarray, h: np.ndarray) -> float:
    parts = [1.0]
    for arr in (problem.P, problem.c, problem.Aeq, problem.beq, G):
        if arr.size:
            parts.append(float(np.max(np.abs(arr))))
    finite_h = h[np.isfinite(h)]
    if finite_h.size:
        parts.append(float(np.max(np.abs(finite_h))))
    return max(parts)


def kkt_residual(
    problem: QPProblem,
    x: np.ndarray,
    eq_multipliers: np.ndarray,
    ineq_multipliers: np.ndarray,
) -> float:
    """Largest scaled violation of stationarity, feasibility, dual sign and complementarity."""
    G, h = problem.inequality_rows()
    scale = _problem_scale(problem, G, h)
    stationarity = problem.P @ x + problem.c + problem.Aeq.T @ eq_multipliers + G.T @ ineq_multipliers
    slack = G @ x - h
    parts = [np.max(np.abs(stationarity)) if stationarity.size else 0.0]
    if problem.Aeq.shape[0]:
        parts.append(np.max(np.abs(problem.Aeq @ x - problem.beq)))
    if G.shape[0]:
        parts.append(max(0.0, float(np.max(slack))))
        parts.append(max(0.0, float(np.max(-ineq_multipliers))))
        parts.append(float(np.max(np.abs(ineq_multipliers * slack))))
    return float(max(parts)) / scale


def _report(problem, x, status, iterations, nu, mu, method) -> SolveReport:
    resid = kkt_residual(problem, x, nu, mu)
    return SolveReport(
        x=x,
        objective=problem.objective(x),
        status=status,
        kkt_residual=resid,
        iterations=iterations,
        eq_multipliers=nu,
        ineq_multipliers=mu,
        method=method,
    )


def _failed(problem: QPProblem, status: QPStatus, n_ineq: int, method: str) -> SolveReport:
    x = np.full(problem.v, np.nan)
    return SolveReport(
        x=x,
        objective=float("nan"),
        status=status,
        kkt_residual=float("inf"),
        iterations=0,
        eq_multipliers=np.zeros(problem.Aeq.shape[0]),
        ineq_multipliers=np.zeros(n_ineq),
        method=method,
    )


def _feasible_point(problem: QPProblem, G: np.ndarray, h: np.ndarray) -> Optional[np.ndarray]:
    """Phase-1 point from a zero-objective linear program, or None if the set is empty."""
    if G.shape[0] == 0 and problem.Aeq.shape[0] == 0:
        return np.zeros(problem.v)
    result = linprog(
        np.zeros(problem.v),
        A_ub=G if G.shape[0] else None,
        b_ub=h if G.shape[0] else None,
        A_eq=problem.Aeq if problem.Aeq.shape[0] else None,
        b_eq=problem.beq if problem.Aeq.shape[0] else None,
        bounds=[(None, None)] * problem.v,
        method="highs",
    )
    if result.status == 2:
        return None
    if result.status != 0 or result.x is None:
        logger.warning(f"Phase-1 linear program ended with status {result.status}: {result.message}")
        return None
    return np.asarray(result.x, dtype=float)


class _RowBasis:
    """Orthonormal basis of a growing set of constraint rows."""

    def __init__(self, size: int):
        self.Q = np.zeros((size, 0))

    def try_add(self, row: np.ndarray) -> bool:
        norm = np.linalg.norm(row)
        if norm == 0:
            return False
        resid = row - self.Q @ (self.Q.T @ row)
        rnorm = np.linalg.norm(resid)
        if rnorm <= 1e-10 * norm:
            return False
        self.Q = np.column_stack([self.Q, resid / rnorm])
        return True


def _solve_eqp(P: np.ndarray, g: np.ndarray, A: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    """
    Equality-constrained step: minimize 1/2 p'Pp + g'p subject to A p = 0.

    Returns:
        (p, multipliers, consistent); consistent is False when the step
        problem is unbounded below
    """
    v = P.shape[0]
    k = A.shape[0]
    kkt = np.block([[P, A.T], [A, np.zeros((k, k))]])
    rhs = np.concatenate([-g, np.zeros(k)])
    bound = 1e-9 * max(1.0, float(np.max(np.abs(rhs))) if rhs.size else 1.0) * max(1.0, float(np.max(np.abs(kkt))))
    try:
        sol = np.linalg.solve(kkt, rhs)
        if np.all(np.isfinite(sol)) and np.max(np.abs(kkt @ sol - rhs)) <= bound:
            return sol[:v], sol[v:], True
    except np.linalg.LinAlgError:
        pass
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    consistent = np.max(np.abs(kkt @ sol - rhs)) <= bound
    return sol[:v], sol[v:], bool(consistent)


def _descent_ray(P: np.ndarray, g: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Direction in null(A) and null(P) along which the objective decreases linearly."""
    Z = linalg.null_space(np.vstack([A, P])) if A.size else linalg.null_space(P)
    if Z.size == 0:
        return np.zeros_like(g)
    return -Z @ (Z.T @ g)


def _active_set(
    problem: QPProblem,
    x0: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    tol: float,
    max_iter: int,
) -> SolveReport:
    """Primal active-set method for convex QPs started from a feasible point."""
    P, c = problem.P, problem.c
    Aeq = problem.Aeq
    scale = _problem_scale(problem, G, h)
    act_tol = 1e-9 * scale
    mult_tol = 1e-2 * tol * scale

    basis = _RowBasis(problem.v)
    eq_rows = [i for i in range(Aeq.shape[0]) if basis.try_add(Aeq[i])]
    x = x0.copy()
    working: List[int] = []
    if G.shape[0]:
        slack = G @ x - h
        for i in range(G.shape[0]):
            if slack[i] >= -act_tol and basis.try_add(G[i]):
                working.append(i)

    for iteration in range(1, max_iter + 1):
        A_w = np.vstack([Aeq[eq_rows], G[working]]) if (eq_rows or working) else np.zeros((0, problem.v))
        g = P @ x + c
        p, multipliers, consistent = _solve_eqp(P, g, A_w)
        ray = False
        if not consistent:
            ray_dir = _descent_ray(P, g, A_w)
            if np.linalg.norm(ray_dir) > 1e-12 * max(1.0, np.linalg.norm(g)):
                p = ray_dir
                ray = True

        step_tol = 1e-12 * max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
        if not ray and (p.size == 0 or np.max(np.abs(p)) <= step_tol):
            mu_w = multipliers[len(eq_rows):]
            if mu_w.size == 0 or mu_w.min() >= -mult_tol:
                nu = np.zeros(Aeq.shape[0])
                nu[eq_rows] = multipliers[: len(eq_rows)]
                mu = np.zeros(G.shape[0])
                mu[working] = np.maximum(mu_w, 0.0)
                report = _report(problem, x, QPStatus.OPTIMAL, iteration, nu, mu, "active_set")
                if report.kkt_residual > tol:
                    logger.debug(f"Active set converged with residual {report.kkt_residual:.3e} above tol")
                    return replace(report, status=QPStatus.MAX_ITER)
                return report
            drop = int(np.argmin(mu_w))
            logger.debug(f"Active set iter {iteration}: releasing constraint {working[drop]}")
            del working[drop]
            basis = _RowBasis(problem.v)
            for i in eq_rows:
                basis.try_add(Aeq[i])
            for i in working:
                basis.try_add(G[i])
            continue

        alpha = np.inf if ray else 1.0
        blocking = None
        if G.shape[0]:
            Gp = G @ p
            slack = h - G @ x
            in_working = np.zeros(G.shape[0], dtype=bool)
            in_working[working] = True
            for i in np.flatnonzero((Gp > 1e-14 * scale) & ~in_working):
                step = max(slack[i], 0.0) / Gp[i]
                if step < alpha:
                    alpha, blocking = step, int(i)
        if not np.isfinite(alpha):
            logger.info("Quadratic program is unbounded below")
            return _failed(problem, QPStatus.UNBOUNDED, G.shape[0], "active_set")
        x = x + alpha * p
        if blocking is not None:
            working.append(blocking)
            working.sort()
            basis.try_add(G[blocking])

    logger.warning(f"Active set hit max_iter={max_iter}")
    return _report(problem, x, QPStatus.MAX_ITER, max_iter, np.zeros(Aeq.shape[0]), np.zeros(G.shape[0]), "active_set")


def _admm(
    problem: QPProblem,
    G: np.ndarray,
    h: np.ndarray,
    tol: float,
    max_iter: int,
    x0: np.ndarray,
) -> SolveReport:
    """Operator-splitting iteration on l <= A x <= u with a dense cached factorization."""
    e = problem.Aeq.shape[0]
    A = np.vstack([problem.Aeq, G])
    lower = np.concatenate([problem.beq, np.full(G.shape[0], -np.inf)])
    upper = np.concatenate([problem.beq, h])

    sigma = 1e-6
    alpha = 1.6
    rho = np.full(A.shape[0], 0.1)
    rho[:e] = 1e3 * 0.1
    factor = linalg.cho_factor(problem.P + sigma * np.eye(problem.v) + A.T @ (rho[:, None] * A))

    x = x0.copy()
    z = np.clip(A @ x, lower, upper)
    y = np.zeros(A.shape[0])
    for iteration in range(1, max_iter + 1):
        rhs = sigma * x - problem.c + A.T @ (rho * z - y)
        x_tilde = linalg.cho_solve(factor, rhs)
        z_tilde = A @ x_tilde
        x = alpha * x_tilde + (1 - alpha) * x
        z_relaxed = alpha * z_tilde + (1 - alpha) * z
        z_next = np.clip(z_relaxed + y / rho, lower, upper)
        y = y + rho * (z_relaxed - z_next)
        z = z_next

        if np.max(np.abs(x)) > 1e12:
            logger.info("Operator splitting iterates diverged; treating problem as unbounded")
            return _failed(problem, QPStatus.UNBOUNDED, G.shape[0], "admm")
        if iteration % 10 == 0:
            nu = y[:e]
            mu = np.maximum(y[e:], 0.0)
            if kkt_residual(problem, x, nu, mu) <= tol:
                return _report(problem, x, QPStatus.OPTIMAL, iteration, nu, mu, "admm")

    logger.warning(f"Operator splitting hit max_iter={max_iter}")
    return _report(problem, x, QPStatus.MAX_ITER, max_iter, y[:e], np.maximum(y[e:], 0.0), "admm")


def solve_qp(
    problem: QPProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    active_set_max_vars: int = ACTIVE_SET_MAX_VARS,
) -> SolveReport:
    """
    Solve a convex quadratic program.

    Small problems go through a primal active-set method (ties broken by
    lowest constraint index); larger ones, or active-set runs that hit
    ``max_iter``, go through operator splitting.

    Args:
        problem: the program; P must be PSD up to rounding
        tol: scaled KKT tolerance required for an OPTIMAL status
        max_iter: iteration cap for each method
        active_set_max_vars: largest variable count handled by the active set

    Returns:
        SolveReport; status is INFEASIBLE for empty feasible sets and
        UNBOUNDED when the objective has no lower bound
    """
    G, h = problem.inequality_rows()
    if problem.Aeq.shape[0]:
        x_ls = np.linalg.lstsq(problem.Aeq, problem.beq, rcond=None)[0]
        mismatch = np.max(np.abs(problem.Aeq @ x_ls - problem.beq))
        if mismatch > np.sqrt(tol) * max(1.0, float(np.max(np.abs(problem.beq)))):
            logger.info(f"Equality constraints are inconsistent (residual {mismatch:.3e})")
            return _failed(problem, QPStatus.INFEASIBLE, G.shape[0], "phase1")

    x0 = _feasible_point(problem, G, h)
    if x0 is None:
        logger.info("Quadratic program has an empty feasible set")
        return _failed(problem, QPStatus.INFEASIBLE, G.shape[0], "phase1")

    if problem.v <= active_set_max_vars:
        report = _active_set(problem, x0, G, h, tol, max_iter)
        if report.status != QPStatus.MAX_ITER:
            return report
        logger.warning("Falling back to operator splitting after active-set stall")
    return _admm(problem, G, h, tol, max_iter, x0)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {q >= 0, sum(q) = 1} by sorting."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cannot project an empty vector onto the simplex")
    a = -np.sort(-v)
    thresholds = (np.cumsum(a) - 1.0) / np.arange(1, v.size + 1)
    k = np.flatnonzero(a > thresholds)[-1]
    return np.maximum(v - thresholds[k], 0.0)


def spectral_norm(
    M: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 500,
    start: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """
    Largest absolute eigenvalue of a symmetric matrix and a unit eigenvector.

    Power iteration from ``start`` (a fixed seeded vector by default); when
    it stalls, which happens when +value and -value are both eigenvalues or
    the gap is tiny, a dense eigensolve takes over.
    """
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    k = M.shape[0]
    if k == 0:
        return 0.0, np.zeros(0)
    if k <= 2:
        return _dense_top(M)

    v = make_rng(0).standard_normal(k) if start is None else np.asarray(start, dtype=float).copy()
    norm = np.linalg.norm(v)
    if norm == 0:
        v = make_rng(0).standard_normal(k)
        norm = np.linalg.norm(v)
    v /= norm
    for _ in range(max_iter):
        w = M @ v
        wnorm = np.linalg.norm(w)
        if wnorm == 0:
            return 0.0, v
        theta = float(v @ w)
        if np.linalg.norm(w - theta * v) <= tol * max(1.0, abs(theta)):
            return abs(theta), v
        v = w / wnorm
    logger.debug(f"Power iteration stalled after {max_iter} steps; using dense eigensolver")
    return _dense_top(M)


def _dense_top(M: np.ndarray) -> Tuple[float, np.ndarray]:
    vals, vecs = linalg.eigh(M)
    i = int(np.argmax(np.abs(vals)))
    return float(abs(vals[i])), vecs[:, i]


def psd_check(M: np.ndarray, tol: float = 1e-8) -> bool:
    """True iff the smallest eigenvalue is at least -tol * max(1, |trace| / k)."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return True
    M = 0.5 * (M + M.T)
    k = M.shape[0]
    smallest = float(linalg.eigvalsh(M)[0])
    return smallest >= -tol * max(1.0, abs(float(np.trace(M))) / k)


def pinv_psd(M: np.ndarray, cutoff: float = EIG_CUTOFF) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix with a relative eigenvalue cutoff."""
    vals, vecs = range_basis(M, cutoff)
    return (vecs / vals) @ vecs.T


def range_projector(M: np.ndarray, cutoff: float = EIG_CUTOFF) -> np.ndarray:
    """Orthogonal projector onto the numerical range of a PSD matrix (M M^+)."""
    _, vecs = range_basis(M, cutoff)
    return vecs @ vecs.T


@dataclass(frozen=True)
class BallLsqResult:
    w: np.ndarray
    multiplier: float
    value: float
    on_boundary: bool


def min_norm_ball_lsq(A: np.ndarray, t: np.ndarray, center: np.ndarray, radius: float) -> BallLsqResult:
    """
    Minimize |A w - t|^2 subject to |w - center| <= radius.

    The interior case returns the minimum-norm least-squares point; the
    boundary case solves the secular equation |w(eta) - center| = radius for
    the multiplier eta of (A'A + eta I) w = A't + eta center.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    center = np.asarray(center, dtype=float).ravel()
    if radius <= 0:
        w = center.copy()
        return BallLsqResult(w, float("inf"), float(np.sum((A @ w - t) ** 2)), True)

    target = t - A @ center
    U, sv, Vt = linalg.svd(A, full_matrices=False)
    keep = sv > 1e-12 * (sv[0] if sv.size else 0.0)
    U, sv, Vt = U[:, keep], sv[keep], Vt[keep]
    beta = U.T @ target
    if sv.size == 0:
        w = center.copy()
        return BallLsqResult(w, 0.0, float(np.sum((A @ w - t) ** 2)), False)

    free = beta / sv
    if np.linalg.norm(free) <= radius:
        w = center + Vt.T @ free
        return BallLsqResult(w, 0.0, float(np.sum((A @ w - t) ** 2)), False)

    weighted = sv * beta

    def excess(eta: float) -> float:
        return float(np.linalg.norm(weighted / (sv ** 2 + eta))) - radius

    upper = float(np.linalg.norm(weighted)) / radius
    eta = brentq(excess, 0.0, upper, xtol=1e-15 * max(1.0, upper), rtol=1e-14, maxiter=500)
    w = center + Vt.T @ (weighted / (sv ** 2 + eta))
    return BallLsqResult(w, float(eta), float(np.sum((A @ w - t) ** 2)), True)

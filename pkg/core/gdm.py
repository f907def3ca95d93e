"""
Generalized discrepancy minimization with sampled surrogate sets.

For a finite sample {h_1, ..., h_k} of H'' the learner minimizes

    lam |h|^2 + 1/2 (max_j L_P(h, h_j) + min_{h' in conv(h_j)} L_P(h, h')),

through the dual quadratic program in (alpha, gamma, beta). The primal
solution is anchored on the target points.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from core.data import Dataset, WeightVector
from core.discrepancy import DEFAULT_DM_ITERS, HypothesisClassSpec, dm_minimize
from core.errors import EmptyValidation, InfeasibleCenter, SolverStatusError
from core.kernel import EIG_CUTOFF, GramBundle, KernelSpec, normalized_bundle
from core.learner import Hypothesis, predict, weighted_mse
from core.optim import (ACTIVE_SET_MAX_VARS, DEFAULT_MAX_ITER, DEFAULT_TOL, QPProblem, QPStatus, SolveReport,
                        solve_qp)
from core.surrogate import DEFAULT_SAMPLES, SurrogateSpec, center_hypothesis, sample_boundary

logger = logging.getLogger(__name__)


def _target_predictions(samples: Sequence[Hypothesis], X: np.ndarray) -> np.ndarray:
    """n x k matrix whose column j holds h_j on the target sample."""
    return np.column_stack([predict(h, X) for h in samples])


def sampled_objective_terms(h: Hypothesis, samples: Sequence[Hypothesis], ds: Dataset) -> Tuple[float, float]:
    """
    (max_j L_P(h, h_j), min over the hull of L_P(h, h')) on the target sample.

    The hull term is the simplex QP min_mu (1/n) |v - Y mu|^2.
    """
    if not samples:
        raise ValueError("surrogate samples must be nonempty")
    X = ds.target_x
    n = X.shape[0]
    v = predict(h, X)
    Y = _target_predictions(samples, X)
    diffs = v[:, None] - Y
    max_term = float(np.max(np.mean(diffs ** 2, axis=0)))
    if Y.shape[1] == 1:
        return max_term, max_term

    k = Y.shape[1]
    problem = QPProblem(
        P=(2.0 / n) * (Y.T @ Y),
        c=-(2.0 / n) * (Y.T @ v),
        Aeq=np.ones((1, k)),
        beq=[1.0],
        lb=np.zeros(k),
    )
    report = solve_qp(problem)
    if report.status in (QPStatus.INFEASIBLE, QPStatus.UNBOUNDED):
        raise SolverStatusError(f"hull projection failed with status {report.status.value}", report.status.value)
    mu = np.maximum(report.x, 0.0)
    mu /= mu.sum()
    min_term = float(np.mean((v - Y @ mu) ** 2))
    return max_term, min(min_term, max_term)


def surrogate_loss(h: Hypothesis, samples: Sequence[Hypothesis], ds: Dataset) -> float:
    """1/2 (max term + hull min term); the loss minimizing the worst-case gap to L_P(h, H'')."""
    max_term, min_term = sampled_objective_terms(h, samples, ds)
    return 0.5 * (max_term + min_term)


def gdm_objective(h: Hypothesis, samples: Sequence[Hypothesis], ds: Dataset, lam: float) -> float:
    return lam * h.norm_squared() + surrogate_loss(h, samples, ds)


@dataclass(frozen=True)
class GdmDual:
    """
    Data of the dual program.

    Y[i, j] = n^(-1/2) h_j(x'_i) projected onto range(Kt); y_prime[j] = |Y e_j|^2.
    With ``basis`` set, gamma = basis @ g and the program is written in g.
    """

    Y: np.ndarray
    y_prime: np.ndarray
    lam: float
    Kt: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    basis: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.Kt.shape[0]

    @property
    def k(self) -> int:
        return self.Y.shape[1]

    @property
    def gamma_size(self) -> int:
        return self.n if self.basis is None else self.basis.shape[1]

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        """(alpha, gamma, beta) from a dual point, gamma in R^n."""
        x = np.asarray(x, dtype=float)
        alpha = x[: self.k]
        g = x[self.k: self.k + self.gamma_size]
        gamma = g if self.basis is None else self.basis @ g
        return alpha, gamma, float(x[-1])

    def _shrink(self, w: np.ndarray) -> np.ndarray:
        """Kt (lam I + Kt/2)^(-1) w."""
        V, s = self.eigvecs, self.eigvals
        return V @ ((s / (self.lam + 0.5 * s)) * (V.T @ w))

    def coefficients(self, alpha: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """(lam I + Kt/2)^(-1) (Y alpha + gamma/2)."""
        V, s = self.eigvecs, self.eigvals
        w = self.Y @ alpha + 0.5 * gamma
        return V @ ((V.T @ w) / (self.lam + 0.5 * s))

    def objective(self, x: np.ndarray) -> float:
        """Value of the maximization objective at a dual point."""
        alpha, gamma, beta = self.split(x)
        w = self.Y @ alpha + 0.5 * gamma
        projected = self.eigvecs[:, self._range] @ (self.eigvecs[:, self._range].T @ gamma)
        return float(-w @ self._shrink(w) - 0.5 * gamma @ projected + alpha @ self.y_prime - beta)

    @property
    def _range(self) -> np.ndarray:
        top = self.eigvals[-1] if self.eigvals.size else 0.0
        return self.eigvals > EIG_CUTOFF * top if top > 0 else np.zeros(self.eigvals.size, dtype=bool)


def assemble_dual(
    bundle: GramBundle,
    samples: Sequence[Hypothesis],
    lam: float,
    compress: bool = False,
) -> Tuple[GdmDual, QPProblem]:
    """
    Dual of the sampled objective as a minimization QP.

    The maximization

        -(Y a + g/2)' M (Y a + g/2) - 1/2 g' Kt Kt^+ g + a' y' - beta,
        M = Kt (lam I + Kt/2)^(-1),
        subject to  1'a = 1/2,  beta >= -(Y'g)_j,  a >= 0,

    is emitted with negated objective. Variables are (alpha, gamma, beta);
    with ``compress`` gamma is restricted to range(Kt) and written in an
    orthonormal basis of it.

    For the linear kernel the optimum equals the sampled primal objective.
    For the Gaussian kernel surrogate samples are projected onto range(Kt)
    before they enter the QP, so only weak duality holds: the dual value is
    a lower bound on the primal objective.

    Raises:
        ValueError: for an empty sample list or lam <= 0
    """
    if not samples:
        raise ValueError("the dual needs at least one surrogate sample")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    Kt = bundle.Kt
    n = bundle.n
    eigvals, eigvecs = linalg.eigh(0.5 * (Kt + Kt.T))
    eigvals = np.maximum(eigvals, 0.0)
    top = eigvals[-1] if eigvals.size else 0.0
    in_range = eigvals > EIG_CUTOFF * top if top > 0 else np.zeros(n, dtype=bool)
    U = eigvecs[:, in_range]

    Y_raw = _target_predictions(samples, bundle.target_x) / np.sqrt(n)
    if Y_raw.shape[0] != n:
        raise ValueError(f"sample predictions have {Y_raw.shape[0]} rows, expected {n}")
    Y = U @ (U.T @ Y_raw)
    y_prime = np.einsum("ij,ij->j", Y, Y)
    k = Y.shape[1]

    basis = U if compress else None
    dual = GdmDual(Y=Y, y_prime=y_prime, lam=float(lam), Kt=Kt, eigvals=eigvals, eigvecs=eigvecs, basis=basis)
    r = dual.gamma_size
    v = k + r + 1

    M = (eigvecs * (eigvals / (lam + 0.5 * eigvals))) @ eigvecs.T
    gamma_map = 0.5 * U if compress else 0.5 * np.eye(n)
    T = np.hstack([Y, gamma_map, np.zeros((n, 1))])
    P = 2.0 * T.T @ M @ T
    if compress:
        P[k: k + r, k: k + r] += np.eye(r)
    else:
        P[k: k + r, k: k + r] += U @ U.T
    c = np.concatenate([-y_prime, np.zeros(r), [1.0]])

    Aeq = np.concatenate([np.ones(k), np.zeros(r + 1)]).reshape(1, -1)
    coupling = Y.T @ U if compress else Y.T
    beta_rows = np.hstack([np.zeros((k, k)), -coupling, -np.ones((k, 1))])
    alpha_rows = np.hstack([-np.eye(k), np.zeros((k, r + 1))])
    problem = QPProblem(
        P=0.5 * (P + P.T),
        c=c,
        Aeq=Aeq,
        beq=[0.5],
        Aineq=np.vstack([beta_rows, alpha_rows]),
        bineq=np.zeros(2 * k),
    )
    logger.debug(f"Assembled dual QP: k={k}, gamma dim={r}, variables={v}")
    return dual, problem


def recover_hypothesis(
    dual: GdmDual,
    solution: SolveReport,
    target_points: np.ndarray,
    kernel: KernelSpec,
    require_optimal: bool = True,
) -> Hypothesis:
    """
    h = n^(-1/2) sum_i a_i K(x'_i, .) with a = (lam I + Kt/2)^(-1) (Y alpha + gamma/2).

    Raises:
        SolverStatusError: if the solve did not reach optimality (or, with
            ``require_optimal`` off, ended infeasible or unbounded)
    """
    usable = solution.optimal or (not require_optimal and solution.status == QPStatus.MAX_ITER)
    if not usable:
        raise SolverStatusError(f"cannot recover a hypothesis from a {solution.status.value} solve",
                                solution.status.value)
    alpha, gamma, _ = dual.split(solution.x)
    a = dual.coefficients(alpha, gamma)
    return Hypothesis(kernel, target_points, a, anchor_scale=np.full(dual.n, 1.0 / np.sqrt(dual.n)))


def to_normalized_coeffs(h: Hypothesis, n: int) -> np.ndarray:
    """b with h = n^(-1/2) sum_i b_i K(x'_i, .); h must be anchored on the n target points."""
    if h.coeffs.size != n:
        raise ValueError(f"hypothesis has {h.coeffs.size} anchors, expected the {n} target points")
    return np.sqrt(n) * h.effective_coeffs


@dataclass(frozen=True)
class GdmFit:
    hypothesis: Hypothesis
    dual: GdmDual
    report: SolveReport
    samples: List[Hypothesis]
    q_min: WeightVector
    objective: float
    dual_value: float
    skipped_balls: List[int] = field(default_factory=list)


def _feasible_spec(spec: SurrogateSpec) -> Tuple[SurrogateSpec, List[Hypothesis], List[int]]:
    """Drop every group containing a ball without an interior point."""
    centers = {}
    skipped = []
    for i, ball in enumerate(spec.balls):
        try:
            centers[i] = center_hypothesis(ball)
        except InfeasibleCenter as e:
            logger.warning(f"Skipping surrogate ball {i}: {e}")
            skipped.append(i)
    kept_groups = [g for g in spec.groups if all(i in centers for i in g)]
    if not kept_groups:
        raise InfeasibleCenter("no surrogate ball has an interior point")
    order = [i for g in kept_groups for i in g]
    position = {old: new for new, old in enumerate(order)}
    dropped = sorted(set(range(len(spec.balls))) - set(order))
    reduced = SurrogateSpec([spec.balls[i] for i in order], [[position[i] for i in g] for g in kept_groups])
    return reduced, [centers[i] for i in order], dropped


def gdm_fit(
    ds: Dataset,
    kernel: KernelSpec,
    lam: float,
    spec: Optional[SurrogateSpec] = None,
    k: int = DEFAULT_SAMPLES,
    seed: int = 0,
    r: Optional[float] = None,
    q_min: Optional[WeightVector] = None,
    hclass_radius: float = 1.0,
    dm_iters: int = DEFAULT_DM_ITERS,
    compress: bool = True,
    qp_tol: float = DEFAULT_TOL,
    qp_max_iter: int = DEFAULT_MAX_ITER,
    active_set_max_vars: int = ACTIVE_SET_MAX_VARS,
    directions: Optional[np.ndarray] = None,
) -> GdmFit:
    """
    Fit GDM end to end.

    Without ``spec`` the surrogate family is the union of the q_min ball and
    the uniform-source ball at loss level ``r``; q_min comes from DM unless
    given. Balls without an interior point are skipped with a warning.

    Args:
        ds: dataset; its source sample defines the balls
        kernel: kernel of the hypothesis space
        lam: ridge parameter
        spec: explicit surrogate family
        k: boundary samples per ball
        seed: seeds DM and the boundary directions
        r: loss level of the default family
        q_min: precomputed DM weights
        hclass_radius: Lambda used by DM
        dm_iters: DM iterations
        compress: solve the dual in range(Kt) coordinates
        qp_tol: QP tolerance
        qp_max_iter: QP iteration cap
        active_set_max_vars: largest dual size solved by the active set before ADMM
        directions: optional (k, m) sample directions shared by every ball; evenly
            spaced directions give nested sample sets as k doubles

    Returns:
        GdmFit
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if q_min is None:
        if spec is not None:
            q_min = spec.balls[0].weights
        else:
            hclass = HypothesisClassSpec(kernel, hclass_radius)
            q_min = dm_minimize(ds, hclass, iters=dm_iters, seed=seed).weights
    if spec is None:
        if r is None:
            raise ValueError("either a surrogate spec or a loss level r is required")
        spec = SurrogateSpec.union_family(ds, q_min, r, kernel)

    reduced, centers, skipped = _feasible_spec(spec)
    samples = sample_boundary(reduced, centers, k=k, seed=seed, directions=directions)

    bundle = normalized_bundle(kernel, ds, q_min if len(q_min) == ds.m else WeightVector.uniform(ds.m))
    dual, problem = assemble_dual(bundle, samples, lam, compress=compress)
    report = solve_qp(problem, tol=qp_tol, max_iter=qp_max_iter, active_set_max_vars=active_set_max_vars)
    if report.status == QPStatus.MAX_ITER:
        logger.warning(f"Dual QP stopped at max_iter (KKT residual {report.kkt_residual:.3e}); using the last iterate")
    h = recover_hypothesis(dual, report, ds.target_x, kernel, require_optimal=False)
    objective = gdm_objective(h, samples, ds, lam)
    dual_value = -report.objective
    logger.debug(f"GDM fit: primal={objective:.6g}, dual={dual_value:.6g}, samples={len(samples)}")
    return GdmFit(h, dual, report, samples, q_min, objective, dual_value, skipped)


@dataclass(frozen=True)
class ValidationResult:
    r_best: float
    h_best: Hypothesis
    table: List[Tuple[float, float]]


def validate_r(
    ds: Dataset,
    kernel: KernelSpec,
    lam: float,
    grid: Sequence[float],
    k: int = DEFAULT_SAMPLES,
    seed: int = 0,
    q_min: Optional[WeightVector] = None,
    **fit_options,
) -> ValidationResult:
    """
    Fit GDM for every r in ``grid`` and keep the one with the lowest MSE on T'.

    Grid point i uses seed + i. Ties go to the smaller r; fits that fail
    score inf.

    Raises:
        EmptyValidation: when there are no labeled target points
    """
    if ds.s == 0:
        raise EmptyValidation("validating r needs labeled target points")
    if not grid:
        raise ValueError("r grid must be nonempty")
    if q_min is None:
        hclass = HypothesisClassSpec(kernel, fit_options.pop("hclass_radius", 1.0))
        q_min = dm_minimize(ds, hclass, iters=fit_options.pop("dm_iters", DEFAULT_DM_ITERS), seed=seed).weights

    table: List[Tuple[float, float]] = []
    fits = {}
    for i, r in enumerate(grid):
        try:
            fit = gdm_fit(ds, kernel, lam, k=k, seed=seed + i, r=r, q_min=q_min, **fit_options)
        except (InfeasibleCenter, SolverStatusError) as e:
            logger.warning(f"GDM fit failed for r={r:g}: {e}")
            table.append((float(r), float("inf")))
            continue
        mse = weighted_mse(fit.hypothesis, ds.target_labeled_x, ds.target_labeled_y)
        table.append((float(r), mse))
        fits[i] = fit

    if not fits:
        raise InfeasibleCenter("no r in the grid produced a GDM fit")
    best = min(fits, key=lambda i: (table[i][1], table[i][0]))
    logger.info(f"Selected r={table[best][0]:g} (validation MSE {table[best][1]:.6g})")
    return ValidationResult(table[best][0], fits[best].hypothesis, table)

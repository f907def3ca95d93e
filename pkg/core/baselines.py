"""
Comparison methods: training on the uniform source distribution, frustratingly
easy feature augmentation (FE), kernel mean matching (KMM), discrepancy
minimization (DM) and the oracle fit on labeled target data.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from core.data import Dataset, WeightVector, merge_augmented
from core.discrepancy import DEFAULT_DM_ITERS, HypothesisClassSpec, augmented_dm
from core.errors import DatasetError, SolverStatusError
from core.kernel import KernelSpec, as_points, gram
from core.learner import Hypothesis, krr_fit, solve_krr_coefficients
from core.optim import QPProblem, QPStatus, solve_qp

logger = logging.getLogger(__name__)

KMM_DEFAULT_B = 1000.0


class Method(str, Enum):
    UNIFORM = "uniform"
    FE = "fe"
    KMM = "kmm"
    DM = "dm"
    GDM = "gdm"
    TARGET = "target"

    @classmethod
    def parse(cls, name: str) -> "Method":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"Unknown method '{name}'; expected one of {[m.value for m in cls]}") from None


class Domain(str, Enum):
    SOURCE = "source"
    TARGET = "target"


def kmm_default_epsilon(m: int) -> float:
    """sqrt(m) / (sqrt(m) - 1); 1 for a single source point."""
    if m <= 1:
        return 1.0
    root = np.sqrt(m)
    return float(root / (root - 1.0))


@dataclass(frozen=True)
class KmmConfig:
    """
    Kernel mean matching settings.

    ``epsilon`` None means the sample-size default; ``kernel`` None means the
    kernel of the regression.
    """

    B: float = KMM_DEFAULT_B
    epsilon: Optional[float] = None
    kernel: Optional[KernelSpec] = None

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError(f"KMM weight cap B must be positive, got {self.B}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError(f"KMM slack epsilon must be >= 0, got {self.epsilon}")

    def epsilon_for(self, m: int) -> float:
        return kmm_default_epsilon(m) if self.epsilon is None else float(self.epsilon)


@dataclass(frozen=True)
class TrainingSet:
    """Points, labels and simplex weights a ridge baseline is trained on."""

    points: np.ndarray
    labels: np.ndarray
    weights: WeightVector
    domains: np.ndarray

    @property
    def size(self) -> int:
        return self.points.shape[0]


def fe_map(x, domain: Domain) -> np.ndarray:
    """Source x -> (x, x, 0); target x -> (x, 0, x)."""
    x = np.asarray(x, dtype=float).ravel()
    zero = np.zeros_like(x)
    if Domain(domain) == Domain.SOURCE:
        return np.concatenate([x, x, zero])
    return np.concatenate([x, zero, x])


def fe_augment(X, domain: Domain) -> np.ndarray:
    """Row-wise ``fe_map``."""
    X = as_points(X)
    zero = np.zeros_like(X)
    if Domain(domain) == Domain.SOURCE:
        return np.hstack([X, X, zero])
    return np.hstack([X, zero, X])


def fe_gram(kernel: KernelSpec, X, x_domains, Z, z_domains) -> np.ndarray:
    """
    K_FE(x, z) = K(x, z) * (1 + [same domain]).

    For the linear kernel this is the inner product of the augmented features.
    """
    same = np.asarray(x_domains)[:, None] == np.asarray(z_domains)[None, :]
    return gram(kernel, X, Z) * (1.0 + same)


def fe_hypothesis(kernel: KernelSpec, train: TrainingSet, lam: float) -> Hypothesis:
    """
    Ridge fit with the FE kernel, returned as a predictor for target points.

    Evaluated at a target point, K_FE(x_i, .) is K(x_i, .) for source anchors
    and 2 K(x_i, .) for target anchors, which becomes the anchor scale.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    G = fe_gram(kernel, train.points, train.domains, train.points, train.domains)
    coeffs = solve_krr_coefficients(G, train.labels, train.weights.weights, lam)
    scale = np.where(train.domains == Domain.TARGET.value, 2.0, 1.0)
    return Hypothesis(kernel, train.points, coeffs, anchor_scale=scale)


def _kmm_problem(K_src: np.ndarray, kappa: np.ndarray, B: float, eps: float) -> QPProblem:
    m = kappa.size
    ones = np.ones((1, m))
    if eps == 0.0:
        return QPProblem(P=K_src, c=-kappa, Aeq=ones, beq=[float(m)], lb=np.zeros(m), ub=np.full(m, B))
    rows = [ones]
    bounds = [m * (1.0 + eps)]
    # the lower sum constraint is vacuous once eps >= 1
    if 1.0 - eps > 0:
        rows.append(-ones)
        bounds.append(-m * (1.0 - eps))
    return QPProblem(
        P=K_src, c=-kappa, Aineq=np.vstack(rows), bineq=bounds, lb=np.zeros(m), ub=np.full(m, B),
    )


def kmm_weights(ds: Dataset, cfg: KmmConfig, kernel: Optional[KernelSpec] = None) -> np.ndarray:
    """
    Kernel mean matching weights beta over the source sample.

    Solves min 1/2 b'K b - kappa'b over 0 <= b_i <= B, |sum(b)/m - 1| <= eps,
    with kappa_i = (m/n) sum_j K(x_i, x'_j) so that the objective is m^2/2
    times the squared mean-embedding residual up to a constant.

    Raises:
        SolverStatusError: when the program is infeasible
    """
    kern = cfg.kernel or kernel or KernelSpec.linear()
    m, n = ds.m, ds.n
    K_src = gram(kern, ds.source_x, ds.source_x)
    kappa = (m / n) * gram(kern, ds.source_x, ds.target_x).sum(axis=1)
    eps = cfg.epsilon_for(m)
    report = solve_qp(_kmm_problem(K_src, kappa, cfg.B, eps))
    if report.status in (QPStatus.INFEASIBLE, QPStatus.UNBOUNDED):
        raise SolverStatusError(f"KMM program ended with status {report.status.value}", report.status.value)
    if report.status == QPStatus.MAX_ITER:
        logger.warning(f"KMM solve stopped at max_iter (KKT residual {report.kkt_residual:.3e})")
    beta = np.clip(report.x, 0.0, cfg.B)
    logger.debug(f"KMM weights: sum={beta.sum():.6g}, max={beta.max():.6g}, eps={eps:.4g}")
    return beta


def mean_embedding_residual(ds: Dataset, kernel: KernelSpec, beta) -> float:
    """|(1/m) sum_i beta_i phi(x_i) - (1/n) sum_j phi(x'_j)|^2 via the kernel trick."""
    beta = np.asarray(beta, dtype=float).ravel()
    m, n = ds.m, ds.n
    ss = beta @ gram(kernel, ds.source_x, ds.source_x) @ beta / m ** 2
    st = beta @ gram(kernel, ds.source_x, ds.target_x).sum(axis=1) / (m * n)
    tt = gram(kernel, ds.target_x, ds.target_x).sum() / n ** 2
    return float(max(ss - 2.0 * st + tt, 0.0))


def _with_labeled_target(ds: Dataset, source_weights: np.ndarray) -> TrainingSet:
    """
    Append T' to a source weighting: S keeps mass m/(m+s) in the given
    proportions and each point of T' gets 1/(m+s).
    """
    points, labels, _ = merge_augmented(ds)
    total = ds.m + ds.s
    src = np.asarray(source_weights, dtype=float)
    src = src / src.sum() * (ds.m / total)
    weights = np.concatenate([src, np.full(ds.s, 1.0 / total)])
    domains = np.array([Domain.SOURCE.value] * ds.m + [Domain.TARGET.value] * ds.s)
    return TrainingSet(points, labels, WeightVector.normalized(weights), domains)


def training_set(
    method: Method,
    ds: Dataset,
    kernel: KernelSpec,
    kmm: Optional[KmmConfig] = None,
    hclass_radius: float = 1.0,
    dm_iters: int = DEFAULT_DM_ITERS,
    seed: int = 0,
    q_min: Optional[WeightVector] = None,
) -> TrainingSet:
    """
    The weighted training sample of a baseline; labeled target points are
    appended whenever s > 0.

    Raises:
        DatasetError: TARGET without oracle target labels
        ValueError: for GDM, which is not a reweighting of the training set
    """
    method = Method(method)
    if method == Method.TARGET:
        if not ds.has_oracle:
            raise DatasetError("training on the target needs oracle target labels")
        domains = np.full(ds.n, Domain.TARGET.value)
        return TrainingSet(ds.target_x, ds.target_oracle_y, WeightVector.uniform(ds.n), domains)
    if method in (Method.UNIFORM, Method.FE):
        return _with_labeled_target(ds, np.ones(ds.m))
    if method == Method.KMM:
        beta = kmm_weights(ds, kmm or KmmConfig(), kernel)
        if beta.sum() <= 0:
            logger.warning("KMM returned all-zero weights; falling back to uniform")
            beta = np.ones(ds.m)
        return _with_labeled_target(ds, beta)
    if method == Method.DM:
        hclass = HypothesisClassSpec(kernel, hclass_radius)
        if ds.s == 0:
            q = q_min if q_min is not None else augmented_dm(ds, hclass, iters=dm_iters, seed=seed).weights
            return TrainingSet(ds.source_x, ds.source_y, q, np.full(ds.m, Domain.SOURCE.value))
        q = augmented_dm(ds, hclass, q_min=q_min, iters=dm_iters, seed=seed).weights
        points, labels, _ = merge_augmented(ds)
        domains = np.array([Domain.SOURCE.value] * ds.m + [Domain.TARGET.value] * ds.s)
        return TrainingSet(points, labels, q, domains)
    raise ValueError(f"{method.value} is not a baseline; fit it with core.gdm.gdm_fit")


def fit_training_set(method: Method, kernel: KernelSpec, train: TrainingSet, lam: float) -> Hypothesis:
    if Method(method) == Method.FE:
        return fe_hypothesis(kernel, train, lam)
    return krr_fit(kernel, train.points, train.labels, train.weights.weights, lam)


def fit_baseline(
    method: Method,
    ds: Dataset,
    kernel: KernelSpec,
    lam: float,
    kmm: Optional[KmmConfig] = None,
    hclass_radius: float = 1.0,
    dm_iters: int = DEFAULT_DM_ITERS,
    seed: int = 0,
    q_min: Optional[WeightVector] = None,
) -> Hypothesis:
    """
    Fit one of the comparison methods.

    Args:
        method: UNIFORM, FE, KMM, DM or TARGET
        ds: dataset
        kernel: regression kernel
        lam: ridge parameter
        kmm: KMM settings
        hclass_radius: Lambda used by DM
        dm_iters: DM iterations
        seed: seeds DM
        q_min: precomputed DM weights over S

    Returns:
        Hypothesis
    """
    train = training_set(method, ds, kernel, kmm=kmm, hclass_radius=hclass_radius,
                         dm_iters=dm_iters, seed=seed, q_min=q_min)
    h = fit_training_set(method, kernel, train, lam)
    logger.debug(f"Fitted {Method(method).value} on {train.size} rows (lambda={lam:g}, kernel={kernel.describe()})")
    return h

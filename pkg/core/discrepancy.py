"""
Discrepancy between the reweighted source and the target sample, the DM
reweighting, finite-grid estimators of the generalized and local
discrepancies, the eta_H and d_inf diagnostics and the admissibility checks
for L_p losses.

Throughout, the target sample plays the role of P-hat and the reweighted
source sample the role of q.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.optimize import linprog

from core.data import Dataset, WeightVector, make_rng
from core.errors import KernelError, SolverStatusError
from core.kernel import KernelSpec, empirical_features, gram, range_basis
from core.learner import Hypothesis, predict
from core.optim import project_simplex, spectral_norm

logger = logging.getLogger(__name__)

DEFAULT_DM_ITERS = 2000
POLISH_ROUNDS = 50
POLISH_GAP = 1e-9
ETA_CUT_ROUNDS = 100


@dataclass(frozen=True)
class HypothesisClassSpec:
    """H = {h : |h|_K <= radius}."""

    kernel: KernelSpec
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"hypothesis class radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class LossSpec:
    """L_p loss bounded by M, admissible with constant mu = p M^(p-1)."""

    p: float
    M: float
    mu: float

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"loss exponent must be >= 1, got {self.p}")
        if not self.M > 0:
            raise ValueError(f"loss bound must be positive, got {self.M}")
        expected = self.p * self.M ** (self.p - 1)
        if not np.isclose(self.mu, expected, rtol=1e-12, atol=0.0):
            raise ValueError(f"mu must equal p * M^(p-1) = {expected}, got {self.mu}")

    @classmethod
    def from_bound(cls, p: float, M: float) -> "LossSpec":
        return cls(float(p), float(M), float(p) * float(M) ** (float(p) - 1))

    def loss(self, a, b) -> np.ndarray:
        return np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** self.p


def loss_spec_for_fit(h: Hypothesis, points, labels, p: float = 2.0) -> LossSpec:
    """LossSpec whose bound M covers every |h(x) - y| and |y| on the sample."""
    labels = np.asarray(labels, dtype=float)
    residual = np.abs(predict(h, points) - labels)
    M = max(float(np.max(residual, initial=0.0)), float(np.max(np.abs(labels), initial=0.0)), 1e-12)
    return LossSpec.from_bound(p, M)


def _features(kernel: KernelSpec, ds: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Source and target rows of a finite feature map reproducing the kernel on S and T."""
    if kernel.is_linear:
        return np.array(ds.source_x, dtype=float), np.array(ds.target_x, dtype=float)
    phi = empirical_features(kernel, np.vstack([ds.source_x, ds.target_x]))
    return phi[: ds.m], phi[ds.m:]


def _check_simplex(q: WeightVector, m: int) -> np.ndarray:
    if not q.simplex:
        raise ValueError("discrepancy needs a weight vector on the simplex")
    if len(q) != m:
        raise ValueError(f"weight vector has length {len(q)}, source sample has {m} points")
    return q.weights


def _moment_gap(Fs: np.ndarray, q: np.ndarray, target_moment: np.ndarray) -> np.ndarray:
    M = (Fs * q[:, None]).T @ Fs - target_moment
    return 0.5 * (M + M.T)


def disc_l2(q: WeightVector, ds: Dataset, hclass: HypothesisClassSpec) -> float:
    """
    Discrepancy under the squared loss: 4 Lambda^2 |M(q)|_2 with
    M(q) = sum_i q_i phi(x_i) phi(x_i)' - (1/n) sum_j phi(x'_j) phi(x'_j)'.

    For h = <w, phi> the squared-loss gap is (w - w')' M(q) (w - w'), and
    w - w' ranges over the ball of radius 2 Lambda.
    """
    weights = _check_simplex(q, ds.m)
    Fs, Ft = _features(hclass.kernel, ds)
    M = _moment_gap(Fs, weights, Ft.T @ Ft / ds.n)
    if M.size == 0:
        return 0.0
    value = float(np.max(np.abs(linalg.eigvalsh(M))))
    return 4.0 * hclass.radius ** 2 * value


@dataclass(frozen=True)
class DmResult:
    weights: WeightVector
    discrepancy: float
    iterations: int
    converged: bool


def _kelley_polish(
    Fs: np.ndarray,
    target_moment: np.ndarray,
    q_best: np.ndarray,
    best: float,
) -> Tuple[np.ndarray, float, float]:
    """
    Cutting-plane LP over the simplex for min_q |M(q)|_2.

    Each unit vector u gives the cuts t >= +-(sum_i q_i (phi_i . u)^2 - u' M0 u).
    Returns the best point found, its value and the final LP lower bound.
    """
    m = Fs.shape[0]
    _, vecs = linalg.eigh(_moment_gap(Fs, q_best, target_moment))
    cuts = [vecs[:, i] for i in range(vecs.shape[1])]
    lower = 0.0
    A_eq = np.append(np.ones(m), 0.0).reshape(1, -1)
    cost = np.append(np.zeros(m), 1.0)
    bounds = [(0.0, None)] * m + [(0.0, None)]

    for _ in range(POLISH_ROUNDS):
        U = np.array(cuts)
        proj = (Fs @ U.T) ** 2
        offsets = np.einsum("ki,ij,kj->k", U, target_moment, U)
        rows = np.vstack([
            np.hstack([proj.T, -np.ones((len(cuts), 1))]),
            np.hstack([-proj.T, -np.ones((len(cuts), 1))]),
        ])
        rhs = np.concatenate([offsets, -offsets])
        result = linprog(cost, A_ub=rows, b_ub=rhs, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs")
        if result.status != 0:
            logger.warning(f"DM cutting-plane LP stopped with status {result.status}: {result.message}")
            break
        q = project_simplex(result.x[:m])
        lower = max(lower, float(result.x[m]))
        vals, vecs = linalg.eigh(_moment_gap(Fs, q, target_moment))
        value = float(max(abs(vals[0]), abs(vals[-1])))
        if value < best:
            best, q_best = value, q
        if best - lower <= POLISH_GAP * max(1.0, best):
            break
        cuts.append(vecs[:, 0])
        cuts.append(vecs[:, -1])
    return q_best, best, lower


def dm_minimize(
    ds: Dataset,
    hclass: HypothesisClassSpec,
    iters: int = DEFAULT_DM_ITERS,
    seed: int = 0,
    init: Optional[WeightVector] = None,
    polish: bool = True,
) -> DmResult:
    """
    q_min = argmin over the simplex of disc_l2(q).

    Projected subgradient with step c / sqrt(t), c = 1 / (4 Lambda^2 max_i |phi_i|^2),
    followed by an optional cutting-plane polish. The returned weights are
    never worse than ``init`` (uniform by default).

    Args:
        ds: dataset
        hclass: kernel and norm bound Lambda
        iters: subgradient iterations
        seed: seeds the power-iteration start vector
        init: starting weights
        polish: run the LP polish after the subgradient phase

    Returns:
        DmResult; ``converged`` is False when neither the step size nor the
        polish gap reached tolerance
    """
    Fs, Ft = _features(hclass.kernel, ds)
    target_moment = Ft.T @ Ft / ds.n
    scale = 4.0 * hclass.radius ** 2
    q = WeightVector.uniform(ds.m).weights if init is None else _check_simplex(init, ds.m).copy()

    if Fs.shape[1] == 0:
        return DmResult(WeightVector(q), 0.0, 0, True)

    norms = np.einsum("ij,ij->i", Fs, Fs)
    step_scale = 1.0 / (scale * max(float(np.max(norms)), 1e-300))
    start = make_rng(seed).standard_normal(Fs.shape[1])

    q_best = q.copy()
    best = spectral_norm(_moment_gap(Fs, q, target_moment), start=start)[0]
    converged = False
    t = 0
    for t in range(1, iters + 1):
        M = _moment_gap(Fs, q, target_moment)
        value, u = spectral_norm(M, start=start)
        if value < best:
            best, q_best = value, q.copy()
        if value <= 1e-14:
            converged = True
            break
        sign = 1.0 if float(u @ M @ u) >= 0 else -1.0
        grad = scale * sign * (Fs @ u) ** 2
        q_next = project_simplex(q - step_scale / np.sqrt(t) * grad)
        if np.linalg.norm(q_next - q) <= 1e-12:
            converged = True
            q = q_next
            break
        q = q_next
        start = u
    logger.debug(f"DM subgradient phase: {t} iterations, disc={scale * best:.6g}")

    if polish:
        q_best, best, lower = _kelley_polish(Fs, target_moment, q_best, best)
        converged = best - lower <= POLISH_GAP * max(1.0, best)
        logger.debug(f"DM polish: value={best:.6g}, lower bound={lower:.6g}")

    final = _check_simplex(init, ds.m) if init is not None else WeightVector.uniform(ds.m).weights
    final_value = float(np.max(np.abs(linalg.eigvalsh(_moment_gap(Fs, final, target_moment)))))
    if final_value <= best:
        q_best, best = final, final_value
    return DmResult(WeightVector.normalized(q_best), scale * best, t, converged)


def augmented_dm(
    ds: Dataset,
    hclass: HypothesisClassSpec,
    q_min: Optional[WeightVector] = None,
    iters: int = DEFAULT_DM_ITERS,
    seed: int = 0,
) -> DmResult:
    """
    DM over S followed by T', warm-started from q_min padded with zeros.

    Without labeled target points this is plain DM on S.
    """
    if ds.s == 0:
        return dm_minimize(ds, hclass, iters=iters, seed=seed, init=q_min)
    init = None
    if q_min is not None:
        init = WeightVector(np.concatenate([_check_simplex(q_min, ds.m), np.zeros(ds.s)]))
    return dm_minimize(ds.augmented(), hclass, iters=iters, seed=seed, init=init)


def _target_loss(h: Hypothesis, g: Hypothesis, X: np.ndarray, p: float) -> float:
    return float(np.mean(np.abs(predict(h, X) - predict(g, X)) ** p))


def generalized_disc_lower_bound(
    h_grid: Sequence[Hypothesis],
    surrogate_samples: Sequence[Hypothesis],
    reweight_loss: Callable[[Hypothesis], float],
    ds: Dataset,
    p: float = 2.0,
) -> float:
    """
    max over the grids of |L_P(h, h'') - reweight_loss(h)|.

    The maximum runs over finite subsets of H and H'', so the value is a
    lower bound of the generalized discrepancy.
    """
    if not h_grid or not surrogate_samples:
        raise ValueError("hypothesis grid and surrogate samples must be nonempty")
    X = ds.target_x
    best = 0.0
    for h in h_grid:
        reference = float(reweight_loss(h))
        for g in surrogate_samples:
            best = max(best, abs(_target_loss(h, g, X, p) - reference))
    return best


def local_disc_lower_bound(
    h_grid: Sequence[Hypothesis],
    surrogate_samples: Sequence[Hypothesis],
    q: WeightVector,
    ds: Dataset,
    p: float = 2.0,
) -> float:
    """Grid estimate (from below) of max_{h, h''} |L_P(h, h'') - L_q(h, h'')|."""
    if not h_grid or not surrogate_samples:
        raise ValueError("hypothesis grid and surrogate samples must be nonempty")
    weights = _check_simplex(q, ds.m)
    target_preds = [predict(g, ds.target_x) for g in surrogate_samples]
    source_preds = [predict(g, ds.source_x) for g in surrogate_samples]
    best = 0.0
    for h in h_grid:
        ht = predict(h, ds.target_x)
        hs = predict(h, ds.source_x)
        for gt, gs in zip(target_preds, source_preds):
            gap = np.mean(np.abs(ht - gt) ** p) - np.sum(weights * np.abs(hs - gs) ** p)
            best = max(best, abs(float(gap)))
    return best


def _require_oracle(ds: Dataset) -> np.ndarray:
    if not ds.has_oracle:
        raise ValueError("target labels are required (synthetic oracle mode)")
    return ds.target_oracle_y


@dataclass(frozen=True)
class EtaResult:
    """
    Norm-constrained Chebyshev fit behind eta_H.

    ``value`` is attained by the feasible hypothesis ``h0``; ``lower`` is the
    cutting-plane LP bound, so the true minimum lies in [lower, value].
    ``source_deviation`` is max over the source sample of |y - h0(x)|.
    """

    value: float
    lower: float
    h0: Hypothesis
    source_deviation: float


def _chebyshev_value(Fs, Ft, ys, yt, w) -> Tuple[float, float]:
    source_dev = float(np.max(np.abs(ys - Fs @ w)))
    target_dev = float(np.max(np.abs(yt - Ft @ w)))
    return source_dev + target_dev, source_dev


def eta_H_solution(ds: Dataset, hclass: HypothesisClassSpec) -> EtaResult:
    """
    min over |w| <= Lambda of max_T |f_P - h0| + max_S |f_Q - h0|.

    The LP in (w, t1, t2) is solved unconstrained first; while |w| exceeds
    Lambda the cut w_hat' w <= Lambda is added. Rescaling the LP solution
    onto the ball gives the feasible upper value.
    """
    yt = _require_oracle(ds)
    ys = ds.source_y
    Fs, Ft = _features(hclass.kernel, ds)
    dim = Fs.shape[1]
    Lam = hclass.radius

    # |y - F w| <= t  as  F w - t <= y  and  -F w - t <= -y
    def block(F, y, col):
        slack = np.zeros((F.shape[0], 2))
        slack[:, col] = -1.0
        return np.vstack([np.hstack([F, slack]), np.hstack([-F, slack])]), np.concatenate([y, -y])

    A_t, b_t = block(Ft, yt, 0)
    A_s, b_s = block(Fs, ys, 1)
    A_ub = np.vstack([A_t, A_s])
    b_ub = np.concatenate([b_t, b_s])
    cost = np.concatenate([np.zeros(dim), [1.0, 1.0]])
    bounds = [(None, None)] * dim + [(0.0, None), (0.0, None)]

    lower = 0.0
    w = np.zeros(dim)
    for _ in range(ETA_CUT_ROUNDS):
        result = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if result.status != 0:
            raise SolverStatusError(f"eta_H LP failed: {result.message}", status=str(result.status))
        w = result.x[:dim]
        lower = float(result.fun)
        norm = float(np.linalg.norm(w))
        if norm <= Lam * (1.0 + 1e-9):
            break
        cut = np.concatenate([w / norm, [0.0, 0.0]])
        A_ub = np.vstack([A_ub, cut])
        b_ub = np.append(b_ub, Lam)
    else:
        logger.warning(f"eta_H cutting planes hit {ETA_CUT_ROUNDS} rounds; reporting the projected value")

    norm = float(np.linalg.norm(w))
    if norm > Lam:
        w = w * (Lam / norm)
    value, source_dev = _chebyshev_value(Fs, Ft, ys, yt, w)
    # zero hypothesis is always feasible
    zero_value, zero_dev = _chebyshev_value(Fs, Ft, ys, yt, np.zeros(dim))
    if zero_value < value:
        w, value, source_dev = np.zeros(dim), zero_value, zero_dev
    return EtaResult(value=value, lower=min(lower, value), h0=_feature_hypothesis(hclass.kernel, ds, w),
                     source_deviation=source_dev)


def _feature_hypothesis(kernel: KernelSpec, ds: Dataset, w: np.ndarray) -> Hypothesis:
    """Hypothesis x -> <w, phi(x)> for the feature map used by _features."""
    if kernel.is_linear:
        return Hypothesis.from_linear(w)
    points = np.vstack([ds.source_x, ds.target_x])
    vals, vecs = range_basis(gram(kernel, points, points))
    # phi = V sqrt(s) on the anchors, so <w, phi(x)> = sum_i c_i K(x_i, x) with c = V w / sqrt(s)
    coeffs = vecs @ (w / np.sqrt(vals))
    return Hypothesis(kernel, points, coeffs)


def eta_H(ds_with_target_labels: Dataset, hclass: HypothesisClassSpec) -> float:
    return eta_H_solution(ds_with_target_labels, hclass).value


def d_inf(ds_with_target_labels: Dataset, surrogate_samples: Sequence[Hypothesis]) -> float:
    """
    min over the samples of max over the target sample of |h0(x) - f_P(x)|.

    A finite minimization inside the infimum, hence an upper bound of d_inf.
    """
    yt = _require_oracle(ds_with_target_labels)
    if not surrogate_samples:
        raise ValueError("surrogate samples must be nonempty")
    X = ds_with_target_labels.target_x
    return min(float(np.max(np.abs(predict(h, X) - yt))) for h in surrogate_samples)


@dataclass(frozen=True)
class AdmissibilityReport:
    p: float
    M: float
    trials: int
    triangle_violations: int
    lipschitz_violations: int
    distribution_violations: int

    @property
    def ok(self) -> bool:
        return self.triangle_violations == 0 and self.lipschitz_violations == 0 and self.distribution_violations == 0


def _exceeds(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return lhs > rhs + 1e-12 * np.maximum(1.0, np.abs(rhs))


def mu_admissibility_suite(p: float, M: float, trials: int, seed: int, support: int = 8) -> AdmissibilityReport:
    """
    Randomized check of the L_p loss properties with mu = p M^(p-1):

      relaxed triangle inequality L(x, z) <= 2^(p-1) (L(x, y) + L(y, z));
      pointwise Lipschitz bound |L(a, y) - L(b, y)| <= mu |a - b|;
      |L_D(h, h') - L_D(h'', h')| <= mu L_D(h, h'')^(1/p) on random finite D.

    Values are drawn from [0, min(M, M^(1/p))] so that every pairwise loss
    and every absolute difference stays within M.
    """
    spec = LossSpec.from_bound(p, M)
    rng = make_rng(seed)
    top = min(M, M ** (1.0 / p))

    x, y, z = rng.uniform(0.0, top, size=(3, trials))
    triangle = _exceeds(spec.loss(x, z), 2.0 ** (p - 1) * (spec.loss(x, y) + spec.loss(y, z)))

    a, b, t = rng.uniform(0.0, top, size=(3, trials))
    lipschitz = _exceeds(np.abs(spec.loss(a, t) - spec.loss(b, t)), spec.mu * np.abs(a - b))

    h, h1, h2 = rng.uniform(0.0, top, size=(3, trials, support))
    weights = rng.uniform(0.0, 1.0, size=(trials, support)) + 1e-12
    weights /= weights.sum(axis=1, keepdims=True)
    lhs = np.abs(np.sum(weights * (spec.loss(h, h1) - spec.loss(h2, h1)), axis=1))
    rhs = spec.mu * np.sum(weights * spec.loss(h, h2), axis=1) ** (1.0 / p)
    distribution = _exceeds(lhs, rhs)

    report = AdmissibilityReport(
        p=float(p),
        M=float(M),
        trials=int(trials),
        triangle_violations=int(np.count_nonzero(triangle)),
        lipschitz_violations=int(np.count_nonzero(lipschitz)),
        distribution_violations=int(np.count_nonzero(distribution)),
    )
    if not report.ok:
        logger.warning(f"Admissibility violations for p={p}, M={M}: {report}")
    return report


@dataclass(frozen=True)
class BoundComparison:
    lhs: float
    rhs: float
    slack: float
    holds: bool
    eta: float
    d_inf: float
    local_disc: float


def bound_comparison(
    ds: Dataset,
    hclass: HypothesisClassSpec,
    h_grid: Sequence[Hypothesis],
    surrogate_samples: Sequence[Hypothesis],
    q: WeightVector,
    loss: LossSpec,
    tol: float = 1e-9,
) -> BoundComparison:
    """
    Compare mu d_inf + max |L_P(h, h'') - L_q(h, f_Q)| with mu eta_H + disc_H''(P, q).

    Every term is a finite-grid estimate with one-sided error, so the result
    is a diagnostic: failures are reported through ``holds``, never raised.
    ``surrogate_samples`` should come from {h'' : L_q(h'', f_Q) <= r^p} with
    r = EtaResult.source_deviation.
    """
    try:
        eta = eta_H(ds, hclass)
        dist = d_inf(ds, surrogate_samples)
        weights = _check_simplex(q, ds.m)
        gap = 0.0
        for h in h_grid:
            source_loss = float(np.sum(weights * loss.loss(predict(h, ds.source_x), ds.source_y)))
            for g in surrogate_samples:
                gap = max(gap, abs(_target_loss(h, g, ds.target_x, loss.p) - source_loss))
        local = local_disc_lower_bound(h_grid, surrogate_samples, q, ds, loss.p)
    except (ValueError, KernelError, SolverStatusError) as e:
        logger.warning(f"Bound comparison could not be evaluated: {e}")
        nan = float("nan")
        return BoundComparison(nan, nan, nan, False, nan, nan, nan)

    lhs = loss.mu * dist + gap
    rhs = loss.mu * eta + local
    slack = rhs - lhs
    return BoundComparison(lhs, rhs, slack, slack >= -tol * max(1.0, abs(rhs)), eta, dist, local)

"""
Weighted kernel ridge regression, the base learner of every method, plus
hypothesis evaluation and the regularized-norm bound diagnostic.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from core.data import make_rng
from core.errors import KernelError
from core.kernel import KernelSpec, as_points, gram, psd_jitter

logger = logging.getLogger(__name__)


def lambda_grid() -> List[float]:
    """lambda in {2^-25, ..., 2^-5}."""
    return [float(2.0 ** e) for e in range(-25, -4)]


@dataclass(frozen=True)
class Hypothesis:
    """
    Kernel expansion h(x) = sum_i coeffs_i * scale_i * K(anchors_i, x).

    ``anchor_scale`` carries per-anchor multipliers such as the n^(-1/2) or
    q_i^(1/2) factors of the normalized parameterization; None means 1.
    """

    kernel: KernelSpec
    anchors: np.ndarray
    coeffs: np.ndarray
    anchor_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float, copy=True)
        if anchors.ndim == 1:
            anchors = anchors.reshape(-1, 1)
        coeffs = np.array(self.coeffs, dtype=float, copy=True).ravel()
        if anchors.shape[0] != coeffs.size:
            raise KernelError(f"{anchors.shape[0]} anchors but {coeffs.size} coefficients")
        for arr in (anchors, coeffs):
            arr.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "coeffs", coeffs)
        if self.anchor_scale is not None:
            scale = np.array(self.anchor_scale, dtype=float, copy=True).ravel()
            if scale.size != coeffs.size:
                raise KernelError("anchor_scale must match the number of anchors")
            scale.setflags(write=False)
            object.__setattr__(self, "anchor_scale", scale)

    @classmethod
    def zero(cls, kernel: KernelSpec, dim: int) -> "Hypothesis":
        return cls(kernel, np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def from_linear(cls, w) -> "Hypothesis":
        """Linear-kernel hypothesis x -> <w, x>."""
        w = np.asarray(w, dtype=float).ravel()
        return cls(KernelSpec.linear(), w.reshape(1, -1), np.ones(1))

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def effective_coeffs(self) -> np.ndarray:
        if self.anchor_scale is None:
            return self.coeffs
        return self.coeffs * self.anchor_scale

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def norm_squared(self) -> float:
        """RKHS norm squared c' G c over the anchor Gram matrix."""
        c = self.effective_coeffs
        if c.size == 0:
            return 0.0
        G = gram(self.kernel, self.anchors, self.anchors)
        return max(float(c @ G @ c), 0.0)

    def linear_weights(self) -> np.ndarray:
        """Weight vector w with h(x) = <w, x>; linear kernels only."""
        if not self.kernel.is_linear:
            raise KernelError("linear weights exist only for the linear kernel")
        return self.effective_coeffs @ self.anchors

    def plus(self, other: "Hypothesis", scale: float = 1.0) -> "Hypothesis":
        """The hypothesis self + scale * other."""
        if other.kernel != self.kernel:
            raise KernelError("cannot add hypotheses with different kernels")
        if self.anchors.shape == other.anchors.shape and np.array_equal(self.anchors, other.anchors):
            return Hypothesis(self.kernel, self.anchors, self.effective_coeffs + scale * other.effective_coeffs)
        return Hypothesis(
            self.kernel,
            np.vstack([self.anchors, other.anchors]),
            np.concatenate([self.effective_coeffs, scale * other.effective_coeffs]),
        )


def predict(h: Hypothesis, X) -> np.ndarray:
    """Entry j is sum_i coeffs_i * scale_i * K(anchors_i, X_j)."""
    X = as_points(X)
    if h.coeffs.size == 0:
        return np.zeros(X.shape[0])
    if X.shape[1] != h.dim:
        raise KernelError(f"dimension mismatch: hypothesis has d={h.dim}, points have d={X.shape[1]}")
    return h.effective_coeffs @ gram(h.kernel, h.anchors, X)


def solve_krr_coefficients(G: np.ndarray, labels: np.ndarray, weights: np.ndarray, lam: float) -> np.ndarray:
    """
    Coefficients minimizing lam c'Gc + sum_i w_i ((Gc)_i - y_i)^2.

    With c = W^(1/2) u the stationarity condition becomes the symmetric
    positive definite system (W^(1/2) G W^(1/2) + lam I) u = W^(1/2) y, with G
    carrying the psd_jitter diagonal.
    """
    root_w = np.sqrt(weights)
    system = root_w[:, None] * psd_jitter(G) * root_w[None, :]
    system = 0.5 * (system + system.T) + lam * np.eye(G.shape[0])
    rhs = root_w * labels
    try:
        u = linalg.cho_solve(linalg.cho_factor(system), rhs)
    except linalg.LinAlgError:
        logger.warning("Cholesky failed on the ridge system; using least squares")
        u = np.linalg.lstsq(system, rhs, rcond=None)[0]
    return root_w * u


def krr_fit(kernel: KernelSpec, points, labels, weights, lam: float) -> Hypothesis:
    """
    Exact minimizer of lam |h|_K^2 + sum_i weights_i (h(x_i) - y_i)^2.

    Anchors are the training points.

    Raises:
        ValueError: for lam <= 0, negative weights or all-zero weights
    """
    points = as_points(points)
    labels = np.asarray(labels, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if labels.size != points.shape[0] or weights.size != points.shape[0]:
        raise ValueError("points, labels and weights must have the same length")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be nonnegative with at least one positive entry")
    G = gram(kernel, points, points)
    coeffs = solve_krr_coefficients(G, labels, weights, lam)
    return Hypothesis(kernel, points, coeffs)


def krr_objective(h: Hypothesis, points, labels, weights, lam: float) -> float:
    residual = predict(h, points) - np.asarray(labels, dtype=float)
    return float(lam * h.norm_squared() + np.sum(np.asarray(weights, dtype=float) * residual ** 2))


def weighted_mse(h: Hypothesis, points, labels, weights=None) -> float:
    residual = predict(h, points) - np.asarray(labels, dtype=float)
    if weights is None:
        return float(np.mean(residual ** 2))
    weights = np.asarray(weights, dtype=float)
    return float(np.sum(weights * residual ** 2) / np.sum(weights))


@dataclass(frozen=True)
class NormBoundReport:
    norm: float
    bound: float
    ok: bool


def norm_bound_check(h: Hypothesis, mu: float, R: float, lam: float) -> NormBoundReport:
    """
    Compare |h|_K with sqrt(mu R / lam) for a ridge solution on simplex weights.

    R is the kernel bound sup K(x, x) and mu the admissibility constant of
    the loss.
    """
    norm = float(np.sqrt(h.norm_squared()))
    bound = float(np.sqrt(mu * R / lam))
    return NormBoundReport(norm=norm, bound=bound, ok=norm <= bound + 1e-8)


def kfold_indices(seed: int, m: int, folds: int = 10) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    (train, validation) index pairs; a pure function of (seed, m, folds).

    Raises:
        ValueError: when folds < 2 or folds > m, which would leave a fold empty
    """
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if folds > m:
        raise ValueError(f"folds ({folds}) exceeds the sample size ({m})")
    order = make_rng(seed).permutation(m)
    splits = np.array_split(order, folds)
    pairs = []
    for k, val in enumerate(splits):
        train = np.concatenate([splits[j] for j in range(folds) if j != k])
        pairs.append((np.sort(train), np.sort(val)))
    return pairs

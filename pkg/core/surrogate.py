"""
Surrogate hypothesis sets H'' (unions of weighted L_p balls around the
source labels) and sampling of their boundaries.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from core.data import Dataset, WeightVector, make_rng
from core.errors import InfeasibleCenter, UnboundedDirection
from core.kernel import KernelSpec, as_points, gram
from core.learner import Hypothesis, krr_fit, predict

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 20
DEFAULT_CENTER_RIDGE = 1e-6
MAX_RESAMPLES = 100
MEMBERSHIP_TOL = 1e-8


@dataclass(frozen=True)
class SurrogateBall:
    """
    {h : sum_i weights_i |h(x_i) - y_i|^p <= radius^p} over the source sample.
    """

    weights: WeightVector
    radius: float
    kernel: KernelSpec
    source_x: np.ndarray
    source_y: np.ndarray
    p: float = 2.0

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"ball radius must be >= 0, got {self.radius}")
        if self.p < 1:
            raise ValueError(f"ball exponent must be >= 1, got {self.p}")
        x = as_points(self.source_x)
        y = np.asarray(self.source_y, dtype=float).ravel()
        if x.shape[0] != y.size or len(self.weights) != y.size:
            raise ValueError("ball weights, points and labels must have the same length")
        object.__setattr__(self, "source_x", x)
        object.__setattr__(self, "source_y", y)

    def residual_loss(self, h: Hypothesis) -> float:
        return float(np.sum(self.weights.weights * np.abs(predict(h, self.source_x) - self.source_y) ** self.p))

    def constraint(self, h: Hypothesis) -> float:
        """g(h); h is a member iff g(h) <= 0."""
        return self.residual_loss(h) - self.radius ** self.p

    def contains(self, h: Hypothesis, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.constraint(h) <= tol


@dataclass(frozen=True)
class SurrogateSpec:
    """
    A family of balls sharing kernel and source sample.

    ``groups`` partitions the ball indices; boundary points are sampled so
    that they satisfy every constraint of their group. By default each ball
    is its own group.
    """

    balls: Sequence[SurrogateBall]
    groups: Optional[Sequence[Sequence[int]]] = None

    def __post_init__(self):
        balls = tuple(self.balls)
        if not balls:
            raise ValueError("surrogate family needs at least one ball")
        first = balls[0]
        for ball in balls[1:]:
            if ball.kernel != first.kernel:
                raise ValueError("all balls must share the same kernel")
            if ball.source_x.shape != first.source_x.shape or not np.array_equal(ball.source_x, first.source_x):
                raise ValueError("all balls must share the same source sample")
        groups = [[i] for i in range(len(balls))] if self.groups is None else [list(g) for g in self.groups]
        flat = sorted(i for g in groups for i in g)
        if flat != list(range(len(balls))):
            raise ValueError(f"groups {groups} do not partition {len(balls)} balls")
        object.__setattr__(self, "balls", balls)
        object.__setattr__(self, "groups", tuple(tuple(g) for g in groups))

    @classmethod
    def union_family(cls, ds: Dataset, q_min: WeightVector, r_loss: float, kernel: KernelSpec,
                     p: float = 2.0) -> "SurrogateSpec":
        """
        {L_qmin(h, f_Q) <= r} union {L_Q(h, f_Q) <= r}, one group per ball.

        ``r_loss`` is a loss level; the balls get radius r_loss^(1/p).
        """
        radius = float(r_loss) ** (1.0 / p)
        balls = [
            SurrogateBall(q_min, radius, kernel, ds.source_x, ds.source_y, p),
            SurrogateBall(WeightVector.uniform(ds.m), radius, kernel, ds.source_x, ds.source_y, p),
        ]
        return cls(balls)

    @property
    def kernel(self) -> KernelSpec:
        return self.balls[0].kernel

    @property
    def source_x(self) -> np.ndarray:
        return self.balls[0].source_x


def center_hypothesis(ball: SurrogateBall, lam_center: float = DEFAULT_CENTER_RIDGE) -> Hypothesis:
    """
    Interior point of ``ball``: the weighted ridge fit on the ball's weights.

    Falls back to the zero hypothesis when the fit is not interior but zero is.

    Raises:
        InfeasibleCenter: when neither candidate satisfies g(h0) < 0
    """
    if ball.radius <= 0:
        raise InfeasibleCenter("a ball of radius 0 has no interior point")
    h0 = krr_fit(ball.kernel, ball.source_x, ball.source_y, ball.weights.weights, lam_center)
    g0 = ball.constraint(h0)
    if g0 < 0:
        return h0
    zero = Hypothesis(ball.kernel, ball.source_x, np.zeros(ball.source_x.shape[0]))
    if ball.constraint(zero) < 0:
        logger.debug("Ridge center not interior; using the zero hypothesis")
        return zero
    raise InfeasibleCenter(
        f"ridge residual {ball.residual_loss(h0):.6g} >= radius^p {ball.radius ** ball.p:.6g}"
    )


def _positive_root(weights: np.ndarray, e: np.ndarray, d: np.ndarray, radius: float, p: float) -> float:
    """
    Smallest lambda > 0 with sum_i w_i |e_i + lambda d_i|^p = radius^p, given
    the left side is below radius^p at lambda = 0. inf when d vanishes on
    the support of w.
    """
    A = float(np.sum(weights * np.abs(d) ** p))
    if A <= 0.0:
        return float("inf")
    if p == 2.0:
        B = 2.0 * float(np.sum(weights * e * d))
        C = float(np.sum(weights * e * e)) - radius ** 2
        root = np.sqrt(max(B * B - 4.0 * A * C, 0.0))
        if B >= 0:
            return 2.0 * C / (-B - root)
        return (-B + root) / (2.0 * A)

    def g(lam: float) -> float:
        return float(np.sum(weights * np.abs(e + lam * d) ** p)) - radius ** p

    hi = 1.0
    for _ in range(200):
        if g(hi) > 0:
            break
        hi *= 2.0
    else:
        return float("inf")
    return brentq(g, 0.0, hi, xtol=1e-14 * hi, rtol=1e-15, maxiter=500)


def sample_boundary(
    spec: SurrogateSpec,
    h0_per_ball: Sequence[Hypothesis],
    k: int = DEFAULT_SAMPLES,
    seed: int = 0,
    directions: Optional[np.ndarray] = None,
) -> List[Hypothesis]:
    """
    k boundary hypotheses per ball: h = h0 + lambda* h_hat.

    h_hat has standard-normal coefficients over the source anchors that
    carry weight in the ball group (unit norm), and lambda* is the smallest positive root over the constraints of
    the ball's group, so every sample satisfies all of them with one active.

    Args:
        spec: surrogate family
        h0_per_ball: interior point of each ball
        k: samples per ball
        seed: seeds the direction stream
        directions: optional (k, m) coefficient matrix used for every ball
            instead of random draws

    Returns:
        k samples for ball 0, then k for ball 1, and so on

    Raises:
        InfeasibleCenter: if a center violates a constraint of its group
        UnboundedDirection: if 100 redraws in a row never leave the group
    """
    if len(h0_per_ball) != len(spec.balls):
        raise ValueError(f"need one center per ball, got {len(h0_per_ball)} for {len(spec.balls)}")
    X = spec.source_x
    m = X.shape[0]
    G = gram(spec.kernel, X, X)
    rng = make_rng(seed)
    group_of = {i: group for group in spec.groups for i in group}
    if directions is not None:
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        if directions.shape != (k, m):
            raise ValueError(f"directions must have shape {(k, m)}, got {directions.shape}")

    samples: List[Hypothesis] = []
    for j, h0 in enumerate(h0_per_ball):
        members = [spec.balls[i] for i in group_of[j]]
        support = np.any([b.weights.weights > 0 for b in members], axis=0)
        base = predict(h0, X)
        residuals = [base - b.source_y for b in members]
        for b, e in zip(members, residuals):
            if float(np.sum(b.weights.weights * np.abs(e) ** b.p)) - b.radius ** b.p >= 0:
                raise InfeasibleCenter(f"center of ball {j} is not interior to every ball of its group")

        for s in range(k):
            for attempt in range(MAX_RESAMPLES):
                if directions is not None and attempt == 0:
                    c = directions[s].copy()
                else:
                    c = rng.standard_normal(m)
                c = np.where(support, c, 0.0)
                norm = np.linalg.norm(c)
                if norm == 0:
                    continue
                c /= norm
                d = G @ c
                lam = min(_positive_root(b.weights.weights, e, d, b.radius, b.p) for b, e in zip(members, residuals))
                if np.isfinite(lam):
                    break
            else:
                raise UnboundedDirection(f"no direction left ball group {group_of[j]} after {MAX_RESAMPLES} draws")
            samples.append(h0.plus(Hypothesis(spec.kernel, X, c), lam))
    logger.debug(f"Sampled {len(samples)} boundary hypotheses from {len(spec.balls)} balls")
    return samples


def r_grid(ds: Dataset, count: int) -> List[float]:
    """``count`` evenly spaced loss levels in (0, mean(y^2)]."""
    if count < 2:
        raise ValueError(f"r grid needs at least 2 points, got {count}")
    upper = float(np.mean(ds.source_y ** 2))
    if upper == 0.0:
        logger.warning("All source labels are zero; the r grid is empty")
        return []
    return [float(v) for v in np.linspace(upper / count, upper, count)]

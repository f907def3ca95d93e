"""
Exact inner maximization for a single weighted ball H'' and the conic
formulation of the full max/min problem.

With the normalized matrices of core.kernel and h = n^(-1/2) sum_i b_i K(x'_i, .),
the objective over b is

    F(b) = lam b'Kt b + 1/2 (max_a |Kst a - Kt b|^2 + min_a |Kst a - Kt b|^2),
    both over the ball |Ks a - y|^2 <= r^2.

The max term is a trust-region problem solved through its one-dimensional
dual; the min term is a ball-constrained least-squares problem. The
semidefinite program equivalent to min_b F(b) is built, checked at candidate
points and exported in sparse SDPA format for external solvers.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.optimize import brentq, minimize, minimize_scalar

from core.errors import DegenerateDirection, InfeasibleCenter
from core.kernel import GramBundle, range_basis
from core.learner import Hypothesis
from core.optim import min_norm_ball_lsq, pinv_psd, psd_check

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
OUTER_ITERS = 200
SQRT_EPS = float(np.sqrt(np.finfo(float).eps))


@dataclass(frozen=True)
class TrustRegionProblem:
    """
    max_a 1/2 |Kst a|^2 - b'Kt Kst a  subject to  |Ks a - y_norm|^2 <= r^2.
    """

    Ks: np.ndarray
    Kst: np.ndarray
    Kt: np.ndarray
    b: np.ndarray
    y_norm: np.ndarray
    r: float

    def __post_init__(self):
        Ks = np.asarray(self.Ks, dtype=float)
        Kt = np.asarray(self.Kt, dtype=float)
        Kst = np.atleast_2d(np.asarray(self.Kst, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        y = np.asarray(self.y_norm, dtype=float).ravel()
        m, n = Ks.shape[0], Kt.shape[0]
        if Ks.shape != (m, m) or Kt.shape != (n, n) or Kst.shape != (n, m):
            raise ValueError(f"inconsistent shapes Ks={Ks.shape}, Kt={Kt.shape}, Kst={Kst.shape}")
        if b.size != n or y.size != m:
            raise ValueError("b must have n entries and y_norm m entries")
        if self.r < 0:
            raise ValueError(f"radius must be >= 0, got {self.r}")
        object.__setattr__(self, "Ks", 0.5 * (Ks + Ks.T))
        object.__setattr__(self, "Kt", 0.5 * (Kt + Kt.T))
        object.__setattr__(self, "Kst", Kst)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "y_norm", y)

    @classmethod
    def from_bundle(cls, bundle: GramBundle, b, r: float) -> "TrustRegionProblem":
        return cls(bundle.Ks, bundle.Kst, bundle.Kt, b, bundle.y_norm, r)

    def primal(self, a) -> float:
        a = np.asarray(a, dtype=float)
        Ka = self.Kst @ a
        return float(0.5 * Ka @ Ka - self.b @ self.Kt @ Ka)

    def violation(self, a) -> float:
        """|Ks a - y|^2 - r^2; feasible iff <= 0."""
        res = self.Ks @ np.asarray(a, dtype=float) - self.y_norm
        return float(res @ res - self.r ** 2)


@dataclass(frozen=True)
class _Reduced:
    """
    The ball problem restricted to range(Ks).

    With a = V diag(1/s) w the constraint reads |w - y_r|^2 <= rho^2 and
    Kst a = B w. C = B'B / 2 has eigenpairs (c, Q).
    """

    V: np.ndarray
    s: np.ndarray
    B: np.ndarray
    y_r: np.ndarray
    rho2: float
    c: np.ndarray
    Q: np.ndarray
    y_gap: float

    def to_coefficients(self, w: np.ndarray) -> np.ndarray:
        return self.V @ (w / self.s)


def _reduce(Ks: np.ndarray, Kst: np.ndarray, y: np.ndarray, r: float) -> _Reduced:
    s, V = range_basis(Ks)
    B = Kst @ (V / s) if s.size else np.zeros((Kst.shape[0], 0))
    y_r = V.T @ y
    y_null = float(y @ y - y_r @ y_r)
    rho2 = r ** 2 - max(y_null, 0.0)
    C = 0.5 * (B.T @ B)
    c, Q = linalg.eigh(0.5 * (C + C.T)) if s.size else (np.zeros(0), np.zeros((0, 0)))
    return _Reduced(V, s, B, y_r, rho2, c, Q, float(y @ y - r ** 2))


@dataclass(frozen=True)
class TrustRegionResult:
    value: float
    eta_star: float
    a_star: np.ndarray
    hard_case: bool
    primal_value: float
    gap: float


def _phi(red: _Reduced, e: np.ndarray, eta: float, top_mask: Optional[np.ndarray] = None,
         denom: Optional[np.ndarray] = None) -> float:
    """1/4 v'(eta I - C)^+ v - eta (|y|^2 - r^2), v = 2 eta y_r - e; ``denom`` overrides eta - c."""
    v = red.Q.T @ (2.0 * eta * red.y_r - e)
    if denom is None:
        denom = eta - red.c
    keep = denom > 0 if top_mask is None else ~top_mask
    return float(0.25 * np.sum(v[keep] ** 2 / denom[keep]) - eta * red.y_gap)


def dual_function(tr: TrustRegionProblem, eta: float) -> float:
    """The one-dimensional dual at eta (meaningful for eta above the top eigenvalue of C)."""
    red = _reduce(tr.Ks, tr.Kst, tr.y_norm, tr.r)
    e = red.B.T @ (tr.Kt @ tr.b)
    return _phi(red, e, eta)


def eta_min(tr: TrustRegionProblem) -> float:
    """Smallest eta with eta Ks^2 - 1/2 Kst'Kst PSD on range(Ks)."""
    red = _reduce(tr.Ks, tr.Kst, tr.y_norm, tr.r)
    return float(max(red.c[-1], 0.0)) if red.c.size else 0.0


def _solve_reduced(red: _Reduced, e: np.ndarray, tol: float = DEFAULT_TOL) -> TrustRegionResult:
    scale = max(1.0, abs(red.y_gap) + abs(red.rho2))
    if red.rho2 < -tol * scale:
        raise InfeasibleCenter(f"the ball is empty: r^2 is below the residual outside range(Ks) by {-red.rho2:.3e}")
    rho2 = max(red.rho2, 0.0)
    rho = float(np.sqrt(rho2))

    if red.s.size == 0 or rho == 0.0:
        w = red.y_r.copy()
        value = float(0.5 * np.sum((red.B @ w) ** 2) - e @ w)
        return TrustRegionResult(value, float("inf"), red.to_coefficients(w), False, value, 0.0)

    # work in delta = eta - c_max so that eta - c keeps full precision near the top eigenvalue
    c, Q = red.c, red.Q
    g = Q.T @ (e - red.B.T @ (red.B @ red.y_r))
    c_max = float(c[-1])
    top = (c_max - c) <= 1e-10 * max(abs(c_max), 1e-300)
    gaps = np.where(top, 0.0, c_max - c)
    top_norm = float(np.linalg.norm(g[top]))
    g_norm = float(np.linalg.norm(g))
    g_scale = max(float(np.linalg.norm(e)), 2.0 * abs(c_max) * (float(np.linalg.norm(red.y_r)) + rho), 1e-300)

    def psi(delta: float) -> float:
        """|u|^2 at eta = c_max + delta."""
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = g ** 2 / (4.0 * (delta + gaps) ** 2)
        return float(np.sum(np.where(g == 0.0, 0.0, terms)))

    hard_case = False
    if top_norm <= SQRT_EPS * g_scale:
        rest = ~top
        psi_rest = float(np.sum(g[rest] ** 2 / (4.0 * gaps[rest] ** 2))) if np.any(rest) else 0.0
        if psi_rest <= rho2:
            hard_case = True
            delta = 0.0
            u = np.zeros_like(g)
            u[rest] = -g[rest] / (2.0 * gaps[rest])
            if top_norm > 0:
                direction = -g[top] / top_norm
            else:
                direction = np.zeros(int(np.count_nonzero(top)))
                direction[0] = 1.0
            u[top] = np.sqrt(max(rho2 - float(u @ u), 0.0)) * direction
            logger.debug(f"Trust-region hard case at eta={c_max:.6g}")

    if not hard_case:
        # psi(lo) >= 4 rho^2 from the top block alone; psi(hi) <= rho^2 / 4
        lo = 0.25 * top_norm / rho if top_norm > 0 else 0.0
        hi = g_norm / rho
        while psi(hi) >= rho2:
            hi *= 2.0
        delta = brentq(lambda t: psi(t) - rho2, lo, hi, xtol=1e-15 * (lo if lo > 0 else hi), maxiter=1000)
        u = -g / (2.0 * (delta + gaps))
        u *= rho / float(np.linalg.norm(u))

    denom = delta + gaps
    eta = c_max + delta
    w = red.y_r + Q @ u
    primal = float(0.5 * np.sum((red.B @ w) ** 2) - e @ w)
    dual = _phi(red, e, eta, top if hard_case else None, denom)
    return TrustRegionResult(dual, float(eta), red.to_coefficients(w), hard_case, primal, abs(primal - dual))


def _check_gap(result: TrustRegionResult, tol: float) -> TrustRegionResult:
    scale = max(1.0, abs(result.primal_value))
    if result.gap > np.sqrt(tol) * scale:
        raise DegenerateDirection(f"trust-region duality gap {result.gap:.3e} at eta={result.eta_star:.6g}")
    return result


def inner_max_exact(tr: TrustRegionProblem, tol: float = DEFAULT_TOL) -> TrustRegionResult:
    """
    Exact max of 1/2 |Kst a|^2 - b'Kt Kst a over the ball |Ks a - y|^2 <= r^2.

    The dual phi(eta) is minimized over eta above the top eigenvalue of
    C = 1/2 B'B through the secular equation |w(eta) - y_r| = rho; in the
    hard case the minimizer sits at that eigenvalue and the top
    eigenvector completes w to the boundary.

    Raises:
        InfeasibleCenter: if the ball is empty
        DegenerateDirection: if the zero-gap check fails beyond ``tol``
    """
    red = _reduce(tr.Ks, tr.Kst, tr.y_norm, tr.r)
    e = red.B.T @ (tr.Kt @ tr.b)
    return _check_gap(_solve_reduced(red, e, tol), tol)


def dual_certificate_block(tr: TrustRegionProblem, eta: float, gamma: float) -> np.ndarray:
    """
    The (m+1) x (m+1) matrix of the semidefinite dual of the ball problem:

        [ -1/2 Kst'Kst + eta Ks^2          1/2 Kst'Kt b - eta Ks y ]
        [ (1/2 Kst'Kt b - eta Ks y)'     eta (|y|^2 - r^2) + gamma ]
    """
    m = tr.Ks.shape[0]
    top = -0.5 * tr.Kst.T @ tr.Kst + eta * tr.Ks @ tr.Ks
    col = 0.5 * tr.Kst.T @ (tr.Kt @ tr.b) - eta * tr.Ks @ tr.y_norm
    block = np.zeros((m + 1, m + 1))
    block[:m, :m] = top
    block[:m, m] = col
    block[m, :m] = col
    block[m, m] = eta * (tr.y_norm @ tr.y_norm - tr.r ** 2) + gamma
    return 0.5 * (block + block.T)


@dataclass(frozen=True)
class ExactObjectiveTerms:
    value: float
    max_term: float
    min_term: float
    a_max: np.ndarray
    a_min: np.ndarray
    gradient: np.ndarray
    eta_star: float


def _terms(bundle: GramBundle, red: _Reduced, lam: float, b: np.ndarray, tol: float) -> ExactObjectiveTerms:
    Kt = bundle.Kt
    Ktb = Kt @ b
    e = red.B.T @ Ktb
    inner = _check_gap(_solve_reduced(red, e, tol), tol)
    max_term = 2.0 * inner.primal_value + float(Ktb @ Ktb)
    a_max = inner.a_star

    if red.s.size:
        lsq = min_norm_ball_lsq(red.B, Ktb, red.y_r, float(np.sqrt(max(red.rho2, 0.0))))
        a_min = red.to_coefficients(lsq.w)
        min_term = lsq.value
    else:
        a_min = np.zeros(red.V.shape[0])
        min_term = float(Ktb @ Ktb)

    value = float(lam * b @ Ktb + 0.5 * (max_term + min_term))
    gradient = 2.0 * lam * Ktb - Kt @ (bundle.Kst @ a_max - Ktb) - Kt @ (bundle.Kst @ a_min - Ktb)
    return ExactObjectiveTerms(value, max_term, min_term, a_max, a_min, gradient, inner.eta_star)


def exact_objective_terms(bundle: GramBundle, lam: float, r: float, b, tol: float = DEFAULT_TOL) -> ExactObjectiveTerms:
    """F(b) with both inner solutions and a subgradient."""
    red = _reduce(bundle.Ks, bundle.Kst, bundle.y_norm, r)
    return _terms(bundle, red, lam, np.asarray(b, dtype=float).ravel(), tol)


def exact_objective(bundle: GramBundle, lam: float, r: float, b, tol: float = DEFAULT_TOL) -> float:
    """F(b) evaluated exactly: trust-region dual for the max, ball least squares for the min."""
    return exact_objective_terms(bundle, lam, r, b, tol).value


@dataclass(frozen=True)
class OuterResult:
    b: np.ndarray
    objective: float
    iterations: int
    converged: bool
    hypothesis: Hypothesis
    history: List[float] = field(default_factory=list)


def outer_solve_alternating(
    bundle: GramBundle,
    lam: float,
    r: float,
    iters: int = OUTER_ITERS,
    b0: Optional[np.ndarray] = None,
    tol: float = 1e-10,
) -> OuterResult:
    """
    Minimize F(b) by alternating exact inner solves with quasi-Newton steps on b.

    F is convex; each evaluation solves the max and min problems at the
    current b and returns the Danskin subgradient. The best point seen is
    returned and ``history`` holds F at the accepted iterates.

    Raises:
        ValueError: for lam <= 0 or r <= 0
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    red = _reduce(bundle.Ks, bundle.Kst, bundle.y_norm, r)
    n = bundle.n
    start = np.zeros(n) if b0 is None else np.asarray(b0, dtype=float).ravel()
    best = {"b": start.copy(), "value": np.inf}

    def evaluate(b: np.ndarray) -> Tuple[float, np.ndarray]:
        terms = _terms(bundle, red, lam, b, DEFAULT_TOL)
        if terms.value < best["value"]:
            best["b"], best["value"] = b.copy(), terms.value
        return terms.value, terms.gradient

    history = [evaluate(start)[0]]

    def record(b: np.ndarray) -> None:
        history.append(evaluate(b)[0])

    result = minimize(
        evaluate,
        start,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": iters, "gtol": tol, "ftol": 1e-15},
    )
    if not result.success:
        logger.debug(f"Outer solve stopped: {result.message}")
    h = Hypothesis(bundle.kernel, bundle.target_x, best["b"], anchor_scale=np.full(n, 1.0 / np.sqrt(n)))
    return OuterResult(best["b"], float(best["value"]), int(result.nit), bool(result.success), h, history)


@dataclass(frozen=True)
class SdpCandidate:
    alpha: float
    beta: float
    nu: float
    Z: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class SdpCandidateReport:
    feasible: bool
    objective: float
    margins: Dict[str, float]


@dataclass(frozen=True)
class SDPProblem:
    """
    maximize 1/2 Tr(Kst'Kst Z) - beta - alpha over (alpha, beta, nu, Z, z) with

      block 1: [[nu Ks^2 + 1/2 Kst'Kst - 1/4 Kt~, nu Ks y + 1/4 Kt~ z], [., alpha + nu (|y|^2 - r^2)]] >= 0
      block 2: [[Z, z], [z', 1]] >= 0
      block 3: [[lam Kt + Kt^2, 1/2 Kt Kst z], [., beta]] >= 0
      Tr(Ks^2 Z) - 2 y'Ks z + |y|^2 <= r^2,  nu >= 0,

    where Kt~ = Kst'Kt (lam Kt + Kt^2)^+ Kt Kst.
    """

    Ks: np.ndarray
    Kst: np.ndarray
    Kt: np.ndarray
    y: np.ndarray
    lam: float
    r: float
    K_tilde: np.ndarray

    @property
    def m(self) -> int:
        return self.Ks.shape[0]

    @property
    def n(self) -> int:
        return self.Kt.shape[0]

    @property
    def block_sizes(self) -> List[int]:
        return [self.m + 1, self.m + 1, self.n + 1, -2]

    def objective(self, cand: SdpCandidate) -> float:
        return float(0.5 * np.sum((self.Kst.T @ self.Kst) * cand.Z) - cand.beta - cand.alpha)

    def _check_shapes(self, cand: SdpCandidate) -> None:
        if np.shape(cand.Z) != (self.m, self.m) or np.size(cand.z) != self.m:
            raise ValueError(f"candidate must have Z of shape {(self.m, self.m)} and z of length {self.m}")

    def blocks(self, cand: SdpCandidate) -> List[np.ndarray]:
        """The four constraint blocks at a candidate; the last is diag(trace slack, nu)."""
        self._check_shapes(cand)
        m, n = self.m, self.n
        Z = np.asarray(cand.Z, dtype=float)
        z = np.asarray(cand.z, dtype=float).ravel()
        Ks2 = self.Ks @ self.Ks
        y = self.y

        first = np.zeros((m + 1, m + 1))
        first[:m, :m] = cand.nu * Ks2 + 0.5 * self.Kst.T @ self.Kst - 0.25 * self.K_tilde
        col = cand.nu * self.Ks @ y + 0.25 * self.K_tilde @ z
        first[:m, m] = col
        first[m, :m] = col
        first[m, m] = cand.alpha + cand.nu * (y @ y - self.r ** 2)

        second = np.zeros((m + 1, m + 1))
        second[:m, :m] = Z
        second[:m, m] = z
        second[m, :m] = z
        second[m, m] = 1.0

        third = np.zeros((n + 1, n + 1))
        third[:n, :n] = self.lam * self.Kt + self.Kt @ self.Kt
        col = 0.5 * self.Kt @ self.Kst @ z
        third[:n, n] = col
        third[n, :n] = col
        third[n, n] = cand.beta

        trace_slack = self.r ** 2 - (float(np.sum(Ks2 * Z)) - 2.0 * float(y @ self.Ks @ z) + float(y @ y))
        return [0.5 * (B + B.T) for B in (first, second, third)] + [np.diag([trace_slack, cand.nu])]

    def variable_count(self) -> int:
        m = self.m
        return 3 + m + m * (m + 1) // 2

    def vectorize(self, cand: SdpCandidate) -> np.ndarray:
        """(alpha, beta, nu, z, upper triangle of Z row by row)."""
        self._check_shapes(cand)
        iu = np.triu_indices(self.m)
        return np.concatenate([[cand.alpha, cand.beta, cand.nu], np.ravel(cand.z), np.asarray(cand.Z)[iu]])

    def to_sdpa(self) -> "SdpaModel":
        """
        SDPA model: minimize c'x subject to sum_i F_i x_i - F_0 >= 0 over the
        variables of ``vectorize``. Only upper-triangle nonzeros are listed.
        """
        m, n = self.m, self.n
        y = self.y
        Ks2 = self.Ks @ self.Ks
        G = self.Kst.T @ self.Kst
        Kty = self.Ks @ y
        KtKst = self.Kt @ self.Kst
        iu = list(zip(*np.triu_indices(m)))
        idx_alpha, idx_beta, idx_nu = 1, 2, 3
        idx_z = [4 + i for i in range(m)]
        idx_Z = {pair: 4 + m + k for k, pair in enumerate(iu)}

        c = np.zeros(self.variable_count())
        c[idx_alpha - 1] = 1.0
        c[idx_beta - 1] = 1.0
        for (i, j), col in idx_Z.items():
            c[col - 1] = -0.5 * G[i, j] if i == j else -G[i, j]

        entries: List[Tuple[int, int, int, int, float]] = []

        def add(mat: int, blk: int, i: int, j: int, value: float) -> None:
            if value != 0.0:
                a, b = (i, j) if i <= j else (j, i)
                entries.append((mat, blk, a + 1, b + 1, float(value)))

        # block 1
        const1 = 0.5 * G - 0.25 * self.K_tilde
        for i in range(m):
            for j in range(i, m):
                add(0, 1, i, j, -const1[i, j])
                add(idx_nu, 1, i, j, Ks2[i, j])
            add(idx_nu, 1, i, m, Kty[i])
        add(idx_nu, 1, m, m, float(y @ y) - self.r ** 2)
        add(idx_alpha, 1, m, m, 1.0)
        for k in range(m):
            for i in range(m):
                add(idx_z[k], 1, i, m, 0.25 * self.K_tilde[i, k])

        # block 2
        add(0, 2, m, m, -1.0)
        for k in range(m):
            add(idx_z[k], 2, k, m, 1.0)
        for (i, j), col in idx_Z.items():
            add(col, 2, i, j, 1.0)

        # block 3
        const3 = self.lam * self.Kt + self.Kt @ self.Kt
        for i in range(n):
            for j in range(i, n):
                add(0, 3, i, j, -const3[i, j])
        add(idx_beta, 3, n, n, 1.0)
        for k in range(m):
            for i in range(n):
                add(idx_z[k], 3, i, n, 0.5 * KtKst[i, k])

        # block 4: trace slack and nu
        add(0, 4, 0, 0, -(self.r ** 2 - float(y @ y)))
        for (i, j), col in idx_Z.items():
            add(col, 4, 0, 0, -Ks2[i, j] if i == j else -2.0 * Ks2[i, j])
        for k in range(m):
            add(idx_z[k], 4, 0, 0, 2.0 * Kty[k])
        add(idx_nu, 4, 1, 1, 1.0)

        entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
        return SdpaModel(c=c, block_sizes=self.block_sizes, entries=entries)


def build_sdp(bundle: GramBundle, lam: float, r: float) -> SDPProblem:
    """
    Assemble the conic program equivalent to min_b F(b).

    Kt~ is computed on the eigenbasis of Kt: Kt (lam Kt + Kt^2)^+ Kt equals
    diag(s / (lam + s)) on range(Kt).
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    s, V = range_basis(bundle.Kt)
    middle = (V * (s / (lam + s))) @ V.T if s.size else np.zeros_like(bundle.Kt)
    K_tilde = bundle.Kst.T @ middle @ bundle.Kst
    K_tilde = 0.5 * (K_tilde + K_tilde.T)
    return SDPProblem(bundle.Ks, bundle.Kst, bundle.Kt, bundle.y_norm, float(lam), float(r), K_tilde)


def check_sdp_candidate(problem: SDPProblem, cand: SdpCandidate, tol: float = 1e-8) -> SdpCandidateReport:
    """
    Feasibility of a candidate with named margins: smallest eigenvalue of each
    PSD block, the trace slack and nu itself.
    """
    first, second, third, last = problem.blocks(cand)
    margins = {
        "block1": float(linalg.eigvalsh(first)[0]),
        "block2": float(linalg.eigvalsh(second)[0]),
        "block3": float(linalg.eigvalsh(third)[0]),
        "trace": float(last[0, 0]),
        "nu": float(cand.nu),
    }
    feasible = (
        psd_check(first, tol)
        and psd_check(second, tol)
        and psd_check(third, tol)
        and margins["trace"] >= -tol * max(1.0, problem.r ** 2)
        and cand.nu >= 0
    )
    return SdpCandidateReport(bool(feasible), problem.objective(cand), margins)


def _alpha_for(problem: SDPProblem, z: np.ndarray, nu: float) -> float:
    """Smallest alpha making block 1 PSD for the given z and nu."""
    A1 = nu * problem.Ks @ problem.Ks + 0.5 * problem.Kst.T @ problem.Kst - 0.25 * problem.K_tilde
    s_vec = nu * problem.Ks @ problem.y + 0.25 * problem.K_tilde @ z
    need = float(s_vec @ pinv_psd(A1) @ s_vec) if np.any(A1) else 0.0
    return need - nu * float(problem.y @ problem.y - problem.r ** 2)


def candidate_from_coefficients(problem: SDPProblem, a, nu: Optional[float] = None) -> SdpCandidate:
    """
    Candidate with Z = aa', z = a and the smallest alpha, beta making the
    PSD blocks hold; nu is the given multiplier or the best in a 1-D search.
    """
    a = np.asarray(a, dtype=float).ravel()
    beta = 0.25 * float(a @ problem.K_tilde @ a)
    options = [0.0] if nu is None or not np.isfinite(nu) else [0.0, float(max(nu, 0.0))]
    upper = max(1.0, 10.0 * max(options))
    search = minimize_scalar(lambda t: _alpha_for(problem, a, t), bounds=(0.0, upper), method="bounded")
    options.append(float(search.x))
    best_nu = min(options, key=lambda t: _alpha_for(problem, a, t))
    alpha = _alpha_for(problem, a, best_nu)
    pad = 1e-9 * max(1.0, abs(alpha))
    return SdpCandidate(alpha + pad, beta + 1e-9 * max(1.0, beta), best_nu, np.outer(a, a), a)


@dataclass(frozen=True)
class SdpaModel:
    """
    Sparse SDPA data: cost vector, signed block sizes (negative for diagonal
    blocks) and (matno, blkno, i, j, value) entries with 1-based indices,
    i <= j; matno 0 is F_0.
    """

    c: np.ndarray
    block_sizes: Sequence[int]
    entries: Sequence[Tuple[int, int, int, int, float]]

    def evaluate(self, x) -> List[np.ndarray]:
        """sum_i F_i x_i - F_0 as dense blocks."""
        x = np.asarray(x, dtype=float).ravel()
        blocks = [np.zeros((abs(s), abs(s))) for s in self.block_sizes]
        for mat, blk, i, j, value in self.entries:
            weight = -1.0 if mat == 0 else x[mat - 1]
            B = blocks[blk - 1]
            B[i - 1, j - 1] += weight * value
            if i != j:
                B[j - 1, i - 1] += weight * value
        return blocks


def write_sdpa(model: SdpaModel, path) -> Path:
    """Write sparse SDPA; floats use repr so reading back is bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f'"generalized discrepancy SDP: {len(model.c)} variables, {len(model.entries)} nonzeros',
        str(len(model.c)),
        str(len(model.block_sizes)),
        " ".join(str(int(s)) for s in model.block_sizes),
        " ".join(repr(float(v)) for v in model.c),
    ]
    lines.extend(f"{mat} {blk} {i} {j} {repr(float(v))}" for mat, blk, i, j, v in model.entries)
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote SDPA file {path} ({len(model.entries)} nonzeros)")
    return path


def read_sdpa(path) -> SdpaModel:
    """Read a sparse SDPA file written by write_sdpa or any standard writer."""
    raw = [line.strip() for line in Path(path).read_text().splitlines()]
    start = 0
    while start < len(raw) and raw[start][:1] in ('"', "*"):
        start += 1
    header = raw[start:start + 4]
    if len(header) < 4:
        raise ValueError(f"{path}: truncated SDPA header")
    header = [line.translate(str.maketrans("{}(),", "     ")) for line in header]
    count = int(header[0].split()[0])
    nblocks = int(header[1].split()[0])
    sizes = [int(tok) for tok in header[2].split()][:nblocks]
    c = np.array([float(tok) for tok in header[3].split()][:count])
    entries = []
    for line in raw[start + 4:]:
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise ValueError(f"{path}: malformed entry line '{line}'")
        entries.append((int(tokens[0]), int(tokens[1]), int(tokens[2]), int(tokens[3]), float(tokens[4])))
    return SdpaModel(c=c, block_sizes=sizes, entries=entries)


def export_sdpa(problem: SDPProblem, path) -> Path:
    return write_sdpa(problem.to_sdpa(), path)

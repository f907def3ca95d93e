"""
Kernel functions, Gram matrices and the normalized kernel matrices used by
the exact max/min formulation.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from core.data import Dataset, WeightVector
from core.errors import KernelError

logger = logging.getLogger(__name__)

LINEAR = "linear"
GAUSSIAN = "gaussian"

EIG_CUTOFF = 1e-10
PSD_TOL = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """Linear kernel <x, z> or Gaussian kernel exp(-|x - z|^2 / (2 sigma^2))."""

    kind: str = LINEAR
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (LINEAR, GAUSSIAN):
            raise KernelError(f"Unknown kernel kind: {self.kind}")
        if self.kind == GAUSSIAN:
            if self.bandwidth is None or not self.bandwidth > 0:
                raise KernelError(f"Gaussian kernel needs a positive bandwidth, got {self.bandwidth}")

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(LINEAR)

    @classmethod
    def gaussian(cls, sigma: float) -> "KernelSpec":
        return cls(GAUSSIAN, float(sigma))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KernelSpec":
        return cls(data.get("kind", LINEAR), data.get("bandwidth"))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "bandwidth": self.bandwidth}

    @property
    def is_linear(self) -> bool:
        return self.kind == LINEAR

    def __call__(self, X, Z) -> np.ndarray:
        return gram(self, X, Z)

    def r_squared(self, X: np.ndarray) -> float:
        """sup K(x, x): 1 for Gaussian kernels, max |x|^2 over ``X`` for linear ones."""
        if self.kind == GAUSSIAN:
            return 1.0
        X = as_points(X)
        return float(np.max(np.einsum("ij,ij->i", X, X))) if X.size else 0.0

    def describe(self) -> str:
        return "linear" if self.is_linear else f"gaussian(sigma={self.bandwidth:g})"


def as_points(X) -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise KernelError(f"points must be a 2-D array, got shape {arr.shape}")
    return arr


def gram(kernel: KernelSpec, X, Z) -> np.ndarray:
    """
    Gram matrix with entry (i, j) = K(X_i, Z_j).

    Raises:
        KernelError: when the point sets differ in dimension
    """
    same = X is Z
    X = as_points(X)
    Z = X if same else as_points(Z)
    if X.shape[1] != Z.shape[1] and X.size and Z.size:
        raise KernelError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    if X.shape[0] == 0 or Z.shape[0] == 0:
        return np.zeros((X.shape[0], Z.shape[0]))

    if kernel.kind == LINEAR:
        G = X @ Z.T
    else:
        sq = cdist(X, Z, "sqeuclidean")
        G = np.exp(-sq / (2.0 * kernel.bandwidth ** 2))

    if same or (X.shape == Z.shape and np.array_equal(X, Z)):
        G = 0.5 * (G + G.T)
    return G


def bandwidth_grid(d: int) -> List[float]:
    """sigma in {k * d : k = 2^-10, ..., 1}."""
    return [float(2.0 ** e * d) for e in range(-10, 1)]


def psd_jitter(K: np.ndarray) -> np.ndarray:
    """Symmetrize and add 1e-10 * trace / n to the diagonal."""
    K = 0.5 * (K + K.T)
    size = K.shape[0]
    if size == 0:
        return K
    eps = EIG_CUTOFF * max(np.trace(K), 0.0) / size
    return K + eps * np.eye(size)


def range_basis(K: np.ndarray, cutoff: float = EIG_CUTOFF) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenpairs of a symmetric PSD matrix above ``cutoff`` times the largest eigenvalue.

    Returns:
        (values, vectors) with vectors spanning the numerical range of K
    """
    K = 0.5 * (K + K.T)
    if K.size == 0:
        return np.zeros(0), np.zeros((K.shape[0], 0))
    vals, vecs = linalg.eigh(K)
    top = vals[-1] if vals.size else 0.0
    if top <= 0:
        return np.zeros(0), np.zeros((K.shape[0], 0))
    keep = vals > cutoff * top
    return vals[keep], vecs[:, keep]


def empirical_features(kernel: KernelSpec, points: np.ndarray) -> np.ndarray:
    """
    Kernel-PCA feature map over ``points``: rows phi_i with phi_i . phi_j = K(x_i, x_j).

    Linear kernels return the raw points.
    """
    points = as_points(points)
    if kernel.is_linear:
        return points.copy()
    vals, vecs = range_basis(gram(kernel, points, points))
    return vecs * np.sqrt(vals)


@dataclass(frozen=True)
class GramBundle:
    """
    Normalized kernel matrices for a source weighting q:

        Kt[i, j]  = K(x'_i, x'_j) / n
        Ks[i, j]  = q_i^(1/2) q_j^(1/2) K(x_i, x_j)
        Kst[i, j] = n^(-1/2) q_j^(1/2) K(x'_i, x_j)
        y_norm[i] = q_i^(1/2) y_i
    """

    Kt: np.ndarray
    Ks: np.ndarray
    Kst: np.ndarray
    y_norm: np.ndarray
    q: WeightVector
    kernel: KernelSpec
    source_x: np.ndarray
    target_x: np.ndarray

    @property
    def m(self) -> int:
        return self.Ks.shape[0]

    @property
    def n(self) -> int:
        return self.Kt.shape[0]


def normalized_bundle(kernel: KernelSpec, ds: Dataset, q: WeightVector) -> GramBundle:
    """
    Build the normalized matrices for dataset ``ds`` and source weights ``q``.

    Raises:
        KernelError: if q is not a distribution over the source sample
    """
    if len(q) != ds.m:
        raise KernelError(f"weight vector has length {len(q)}, source sample has {ds.m} points")
    if not q.simplex:
        raise KernelError("normalized matrices need simplex weights")
    n = ds.n
    root_q = np.sqrt(q.weights)
    Kt = gram(kernel, ds.target_x, ds.target_x) / n
    Ks = root_q[:, None] * gram(kernel, ds.source_x, ds.source_x) * root_q[None, :]
    Ks = 0.5 * (Ks + Ks.T)
    Kst = gram(kernel, ds.target_x, ds.source_x) * root_q[None, :] / np.sqrt(n)
    y_norm = root_q * ds.source_y
    return GramBundle(Kt, Ks, Kst, y_norm, q, kernel, ds.source_x, ds.target_x)

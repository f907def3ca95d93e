"""
Samples for adaptation: the labeled source sample, the unlabeled target
sample and the optional small labeled target sample, plus CSV ingestion and
the synthetic shift benchmark.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from core.errors import DatasetError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SIMPLEX_TOL = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator used everywhere in the package."""
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != ndim:
        raise DatasetError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WeightVector:
    """Weights over the source sample; a distribution when ``simplex`` is set."""

    weights: np.ndarray
    simplex: bool = True

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True).ravel()
        if not np.all(np.isfinite(w)):
            raise DatasetError("weights must be finite")
        if self.simplex:
            if w.size == 0:
                raise DatasetError("a simplex weight vector cannot be empty")
            if np.any(w < 0):
                raise DatasetError(f"simplex weights must be nonnegative, min is {w.min()}")
            if abs(w.sum() - 1.0) > max(SIMPLEX_TOL, 4 * np.finfo(float).eps * w.size):
                raise DatasetError(f"simplex weights must sum to 1, sum is {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, size: int) -> "WeightVector":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def normalized(cls, values) -> "WeightVector":
        """Clip to nonnegative and rescale onto the simplex."""
        w = np.clip(np.asarray(values, dtype=float).ravel(), 0.0, None)
        total = w.sum()
        if total <= 0:
            raise DatasetError("cannot normalize an all-zero weight vector")
        w = w / total
        # one more pass so the float sum lands on 1 within rounding
        return cls(w / w.sum())

    def __len__(self) -> int:
        return self.weights.size


def _cubic(x: np.ndarray) -> np.ndarray:
    return -x + x ** 3


@dataclass(frozen=True)
class SyntheticOracle:
    """Labeling function of the synthetic task (shared by source and target)."""

    noise_std: float = 0.1
    label_fn: Callable[[np.ndarray], np.ndarray] = _cubic

    def __post_init__(self):
        if self.noise_std < 0:
            raise DatasetError(f"noise_std must be nonnegative, got {self.noise_std}")

    def f(self, x: np.ndarray) -> np.ndarray:
        """Noiseless labels for an (k, 1) or (k,) array of inputs."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        return self.label_fn(x)

    def label(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        clean = self.f(x)
        return clean + rng.normal(0.0, self.noise_std, size=clean.shape)


@dataclass(frozen=True)
class Dataset:
    """
    Source sample S (m labeled points), target sample T (n unlabeled points)
    and labeled target sample T' (s points, possibly empty).

    ``target_oracle_y`` holds labels for T in synthetic oracle mode only;
    adaptation methods never read it. ``test_x``/``test_y`` form an optional
    held-out labeled target sample used for evaluation.
    """

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    target_labeled_x: Optional[np.ndarray] = None
    target_labeled_y: Optional[np.ndarray] = None
    target_oracle_y: Optional[np.ndarray] = None
    test_x: Optional[np.ndarray] = None
    test_y: Optional[np.ndarray] = None

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)
        sx = _frozen(self.source_x, 2, "source_x")
        sy = _frozen(self.source_y, 1, "source_y")
        tx = _frozen(self.target_x, 2, "target_x")
        if sx.shape[0] < 1:
            raise DatasetError("source sample must contain at least one point")
        if tx.shape[0] < 1:
            raise DatasetError("target sample must contain at least one point")
        d = sx.shape[1]
        if tx.shape[1] != d:
            raise DatasetError(f"target must have d={d} columns, got {tx.shape[1]}")
        if sy.shape[0] != sx.shape[0]:
            raise DatasetError(f"source has {sx.shape[0]} points but {sy.shape[0]} labels")

        if self.target_labeled_x is None or len(self.target_labeled_x) == 0:
            lx = np.zeros((0, d))
            ly = np.zeros(0)
            lx.setflags(write=False)
            ly.setflags(write=False)
        else:
            lx = _frozen(self.target_labeled_x, 2, "target_labeled_x")
            ly = _frozen(self.target_labeled_y, 1, "target_labeled_y")
            if lx.shape[1] != d:
                raise DatasetError(f"labeled target must have d={d} feature columns, got {lx.shape[1]}")
            if ly.shape[0] != lx.shape[0]:
                raise DatasetError("labeled target points and labels differ in count")

        for name, arr in (("source", sx), ("target", tx), ("labeled target", lx)):
            if not np.all(np.isfinite(arr)):
                raise DatasetError(f"{name} features must be finite")
        if not np.all(np.isfinite(sy)) or not np.all(np.isfinite(ly)):
            raise DatasetError("labels must be finite reals")

        set_("source_x", sx)
        set_("source_y", sy)
        set_("target_x", tx)
        set_("target_labeled_x", lx)
        set_("target_labeled_y", ly)

        if self.target_oracle_y is not None:
            oy = _frozen(self.target_oracle_y, 1, "target_oracle_y")
            if oy.shape[0] != tx.shape[0]:
                raise DatasetError("target oracle labels must match the target sample size")
            set_("target_oracle_y", oy)
        if self.test_x is not None:
            ex = _frozen(self.test_x, 2, "test_x")
            ey = _frozen(self.test_y, 1, "test_y")
            if ex.shape[1] != d or ey.shape[0] != ex.shape[0]:
                raise DatasetError("test sample has inconsistent shape")
            set_("test_x", ex)
            set_("test_y", ey)

    @property
    def m(self) -> int:
        return self.source_x.shape[0]

    @property
    def n(self) -> int:
        return self.target_x.shape[0]

    @property
    def s(self) -> int:
        return self.target_labeled_x.shape[0]

    @property
    def dim(self) -> int:
        return self.source_x.shape[1]

    @property
    def has_oracle(self) -> bool:
        return self.target_oracle_y is not None

    def augmented(self) -> "Dataset":
        """Dataset whose source sample is S followed by T'."""
        if self.s == 0:
            return self
        return Dataset(
            source_x=np.vstack([self.source_x, self.target_labeled_x]),
            source_y=np.concatenate([self.source_y, self.target_labeled_y]),
            target_x=self.target_x,
            target_labeled_x=self.target_labeled_x,
            target_labeled_y=self.target_labeled_y,
            target_oracle_y=self.target_oracle_y,
            test_x=self.test_x,
            test_y=self.test_y,
        )


def merge_augmented(ds: Dataset) -> Tuple[np.ndarray, np.ndarray, WeightVector]:
    """
    Empirical distribution of S combined with T'.

    (m/(m+s)) * uniform(S) + (s/(m+s)) * uniform(T') puts weight 1/(m+s) on
    each of the m+s points.

    Returns:
        (points, labels, weights) with S first and T' after it
    """
    points = np.vstack([ds.source_x, ds.target_labeled_x])
    labels = np.concatenate([ds.source_y, ds.target_labeled_y])
    return points, labels, WeightVector.uniform(ds.m + ds.s)


def _read_rows(path: Path, skip_header: bool) -> List[List[float]]:
    path = Path(path)
    if not path.exists():
        raise DatasetError("file not found", file=path)
    rows: List[List[float]] = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for index, raw in enumerate(reader):
            if skip_header and index == 0:
                continue
            if not raw or all(not cell.strip() for cell in raw):
                continue
            try:
                values = [float(cell) for cell in raw]
            except ValueError:
                raise DatasetError(f"non-numeric cell in {raw!r}", file=path, row=index)
            if not all(np.isfinite(values)):
                raise DatasetError("non-finite value", file=path, row=index)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DatasetError(f"expected {width} columns, got {len(values)}", file=path, row=index)
            rows.append(values)
    if not rows:
        raise DatasetError("empty file", file=path)
    return rows


def load_labeled_sample(path: PathLike, dim: int, skip_header: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rows of d features followed by the label.

    Raises:
        DatasetError: when a row does not have d+1 columns
    """
    rows = np.array(_read_rows(Path(path), skip_header))
    if rows.shape[1] != dim + 1:
        raise DatasetError(f"labeled rows must have d+1={dim + 1} columns, got {rows.shape[1]}", file=Path(path))
    return rows[:, :dim], rows[:, dim]


def load_dataset(
    source_path: PathLike,
    target_path: PathLike,
    target_labeled_path: Optional[PathLike] = None,
    skip_header: bool = False,
) -> Dataset:
    """
    Load a dataset from comma-separated files without headers.

    Source and labeled-target rows hold d features followed by the label;
    target rows hold d features.

    Raises:
        DatasetError: on missing/empty files, non-numeric cells or column
            count mismatches, with file and row index
    """
    source = np.array(_read_rows(Path(source_path), skip_header))
    if source.shape[1] < 2:
        raise DatasetError("source rows need at least one feature and a label", file=Path(source_path))
    d = source.shape[1] - 1
    target = np.array(_read_rows(Path(target_path), skip_header))
    if target.shape[1] != d:
        raise DatasetError(f"target must have d={d} columns, got {target.shape[1]}", file=Path(target_path))

    labeled_x = labeled_y = None
    if target_labeled_path is not None:
        labeled_x, labeled_y = load_labeled_sample(target_labeled_path, d, skip_header)

    ds = Dataset(source[:, :d], source[:, d], target, labeled_x, labeled_y)
    logger.info(f"Loaded dataset m={ds.m} n={ds.n} s={ds.s} d={ds.dim}")
    return ds


def _write_rows(path: Path, rows: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def write_dataset(
    ds: Dataset,
    source_path: PathLike,
    target_path: PathLike,
    target_labeled_path: Optional[PathLike] = None,
    test_path: Optional[PathLike] = None,
) -> None:
    """Write a dataset in the format ``load_dataset`` reads; floats reload bit-exact."""
    _write_rows(Path(source_path), np.column_stack([ds.source_x, ds.source_y]))
    _write_rows(Path(target_path), ds.target_x)
    if target_labeled_path is not None and ds.s > 0:
        _write_rows(Path(target_labeled_path), np.column_stack([ds.target_labeled_x, ds.target_labeled_y]))
    if test_path is not None and ds.test_x is not None:
        _write_rows(Path(test_path), np.column_stack([ds.test_x, ds.test_y]))


def gen_synthetic(
    seed: int,
    m: int,
    n: int,
    s: int = 0,
    test_size: int = 0,
    oracle: Optional[SyntheticOracle] = None,
) -> Tuple[Dataset, SyntheticOracle]:
    """
    Generate the one-dimensional shift benchmark.

    Source inputs are uniform on [0.2, 1], target inputs uniform on
    [0, 0.25]; every label is -x + x^3 plus independent N(0, 0.1) noise.
    Labels for the unlabeled target sample are kept as oracle labels.

    Args:
        seed: PCG64 seed; identical seeds give bit-identical datasets
        m: source sample size
        n: unlabeled target sample size
        s: labeled target sample size
        test_size: held-out labeled target sample size (0 for none)
        oracle: labeling function, the cubic map by default

    Returns:
        (dataset, oracle)
    """
    if m < 1 or n < 1:
        raise DatasetError(f"m and n must be at least 1, got m={m} n={n}")
    if s < 0 or test_size < 0:
        raise DatasetError("s and test_size must be nonnegative")
    oracle = oracle or SyntheticOracle()
    rng = make_rng(seed)

    source_x = rng.uniform(0.2, 1.0, size=(m, 1))
    source_y = oracle.label(source_x, rng)
    target_x = rng.uniform(0.0, 0.25, size=(n, 1))
    target_y = oracle.label(target_x, rng)
    labeled_x = rng.uniform(0.0, 0.25, size=(s, 1))
    labeled_y = oracle.label(labeled_x, rng)
    test_x = test_y = None
    if test_size:
        test_x = rng.uniform(0.0, 0.25, size=(test_size, 1))
        test_y = oracle.label(test_x, rng)

    ds = Dataset(
        source_x=source_x,
        source_y=source_y,
        target_x=target_x,
        target_labeled_x=labeled_x if s else None,
        target_labeled_y=labeled_y if s else None,
        target_oracle_y=target_y,
        test_x=test_x,
        test_y=test_y,
    )
    logger.debug(f"Generated synthetic dataset seed={seed} m={m} n={n} s={s}")
    return ds, oracle

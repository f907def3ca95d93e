"""
Experiment harness: configuration, cross-validation, trials, the results
report and the objective profile of one-dimensional linear hypotheses.
"""

import asyncio
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.baselines import KmmConfig, Method, TrainingSet, fit_training_set, training_set
from core.data import Dataset, SyntheticOracle, WeightVector, gen_synthetic, load_dataset, load_labeled_sample
from core.discrepancy import DEFAULT_DM_ITERS, HypothesisClassSpec, dm_minimize
from core.errors import ConfigError, DatasetError, KernelError
from core.gdm import gdm_fit, surrogate_loss, validate_r
from core.kernel import GAUSSIAN, LINEAR, KernelSpec, bandwidth_grid
from core.learner import Hypothesis, kfold_indices, lambda_grid, predict, weighted_mse
from core.run_ledger import RunLedger
from core.surrogate import DEFAULT_SAMPLES, SurrogateSpec, center_hypothesis, r_grid, sample_boundary
from utils.helpers import canonical_json, config_hash, write_json
from utils.logger import bind_run, get_logger

logger = get_logger(__name__)

PROFILE_COLUMNS = ("w", "source_objective", "target_objective", "dm_objective", "gdm_objective")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment: the data, the hyperparameter grids and the methods.

    Without ``source_path`` every trial draws a fresh synthetic dataset; with
    it every trial uses the same files and only the seeds change.
    """

    seed: int = 0
    trials: int = 10
    methods: Tuple[str, ...] = ("uniform", "dm", "gdm", "target")
    m: int = 200
    n: int = 200
    s: int = 0
    test_size: int = 1000
    noise_std: float = 0.1
    source_path: Optional[str] = None
    target_path: Optional[str] = None
    target_labeled_path: Optional[str] = None
    test_path: Optional[str] = None
    kernel: str = LINEAR
    bandwidths: Optional[Tuple[float, ...]] = None
    lambdas: Optional[Tuple[float, ...]] = None
    folds: int = 10
    r_grid_size: int = 10
    gdm_r: Optional[float] = None
    boundary_samples: int = DEFAULT_SAMPLES
    hclass_radius: float = 1.0
    dm_iters: int = DEFAULT_DM_ITERS
    kmm_B: float = 1000.0
    kmm_epsilon: Optional[float] = None
    kmm_bandwidth: Optional[float] = None
    normalize_by_target: bool = False
    include_timings: bool = False
    output_dir: str = "results"

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)
        set_("methods", tuple(str(mth).lower() for mth in self.methods))
        for name in ("bandwidths", "lambdas"):
            value = getattr(self, name)
            if value is not None:
                set_(name, tuple(float(v) for v in value))
        self.validate()

    def validate(self) -> None:
        """Raises ConfigError for an unusable configuration."""
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        for name in self.methods:
            try:
                Method.parse(name)
            except ValueError as e:
                raise ConfigError(str(e))
        if self.kernel not in (LINEAR, GAUSSIAN):
            raise ConfigError(f"kernel must be '{LINEAR}' or '{GAUSSIAN}', got '{self.kernel}'")
        for name in ("bandwidths", "lambdas"):
            value = getattr(self, name)
            if value is not None and (not value or any(not v > 0 for v in value)):
                raise ConfigError(f"{name} must be a nonempty list of positive numbers")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.r_grid_size < 2:
            raise ConfigError(f"r_grid_size must be >= 2, got {self.r_grid_size}")
        if self.gdm_r is not None and not self.gdm_r > 0:
            raise ConfigError(f"gdm_r must be positive, got {self.gdm_r}")
        if self.boundary_samples < 1:
            raise ConfigError(f"boundary_samples must be >= 1, got {self.boundary_samples}")
        if not self.hclass_radius > 0:
            raise ConfigError(f"hclass_radius must be positive, got {self.hclass_radius}")
        if self.source_path is None:
            if self.m < 1 or self.n < 1 or self.s < 0 or self.test_size < 1:
                raise ConfigError("synthetic data needs m, n, test_size >= 1 and s >= 0")
        elif self.target_path is None:
            raise ConfigError("target_path is required together with source_path")
        try:
            KmmConfig(self.kmm_B, self.kmm_epsilon)
        except ValueError as e:
            raise ConfigError(str(e))

    @classmethod
    def from_dict(cls, data: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        """Build from a mapping; ``defaults`` fill the keys ``data`` leaves out."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {unknown}")
        try:
            return cls(**{**(defaults or {}), **data})
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid configuration: {e}")

    @classmethod
    def from_json(cls, path: Path, defaults: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Configuration file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Configuration file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Configuration file {path} must hold a JSON object")
        return cls.from_dict(data, defaults)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with every non-None override applied."""
        updates = {k: v for k, v in overrides.items() if v is not None}
        unknown = sorted(set(updates) - {f.name for f in fields(self)})
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {unknown}")
        return replace(self, **updates)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for name in ("methods", "bandwidths", "lambdas"):
            if data[name] is not None:
                data[name] = list(data[name])
        return data

    @property
    def method_list(self) -> List[Method]:
        return [Method.parse(name) for name in self.methods]

    @property
    def synthetic(self) -> bool:
        return self.source_path is None

    def kernel_grid(self, dim: int) -> List[KernelSpec]:
        if self.kernel == LINEAR:
            return [KernelSpec.linear()]
        return [KernelSpec.gaussian(s) for s in (self.bandwidths or bandwidth_grid(dim))]

    def lambda_values(self) -> List[float]:
        return list(self.lambdas) if self.lambdas else lambda_grid()

    def kmm_config(self) -> KmmConfig:
        kernel = KernelSpec.gaussian(self.kmm_bandwidth) if self.kmm_bandwidth else None
        return KmmConfig(self.kmm_B, self.kmm_epsilon, kernel)


def trial_seed(seed: int, trial: int) -> int:
    """Seed of one trial, derived from (config seed, trial index) only."""
    return int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1)[0])


def load_trial_data(config: ExperimentConfig, seed: int) -> Tuple[Dataset, np.ndarray, np.ndarray]:
    """
    (dataset, evaluation points, evaluation labels) of one trial.

    Loaded datasets are evaluated on ``test_path`` when given, otherwise on
    the labeled target sample.

    Raises:
        DatasetError: when a loaded dataset has nothing to evaluate on
    """
    if config.synthetic:
        ds, _ = gen_synthetic(seed, config.m, config.n, config.s, config.test_size,
                              SyntheticOracle(noise_std=config.noise_std))
        return ds, ds.test_x, ds.test_y
    ds = load_dataset(config.source_path, config.target_path, config.target_labeled_path)
    if config.test_path is not None:
        test_x, test_y = load_labeled_sample(config.test_path, ds.dim)
        return ds, test_x, test_y
    if ds.s == 0:
        raise DatasetError("no test_path and no labeled target sample to evaluate on")
    logger.warning("No test sample configured; evaluating on the labeled target sample")
    return ds, ds.target_labeled_x, ds.target_labeled_y


@dataclass(frozen=True)
class CvResult:
    kernel: KernelSpec
    lam: float
    loss: float
    train: TrainingSet


def _subset(train: TrainingSet, idx: np.ndarray) -> TrainingSet:
    return TrainingSet(train.points[idx], train.labels[idx], WeightVector.normalized(train.weights.weights[idx]),
                       train.domains[idx])


def cv_loss(method: Method, kernel: KernelSpec, train: TrainingSet, lam: float, seed: int,
            folds: int = 10) -> float:
    """
    k-fold validation loss of a weighted training set.

    Validation residuals carry the training weights, so reweighting methods
    are scored by their importance-weighted loss. Folds whose training part
    has zero weight score inf. Samples smaller than ``folds`` use one fold per
    point; fewer than two points score inf.
    """
    folds = min(folds, train.size)
    if folds < 2:
        return float("inf")
    numerator = 0.0
    denominator = 0.0
    for tr, va in kfold_indices(seed, train.size, folds):
        w_va = train.weights.weights[va]
        if w_va.sum() <= 0:
            continue
        if train.weights.weights[tr].sum() <= 0:
            return float("inf")
        h = fit_training_set(method, kernel, _subset(train, tr), lam)
        residual = predict(h, train.points[va]) - train.labels[va]
        numerator += float(np.sum(w_va * residual ** 2))
        denominator += float(w_va.sum())
    return numerator / denominator if denominator > 0 else float("inf")


def cross_validate(
    method: Method,
    ds: Dataset,
    kernels: Sequence[KernelSpec],
    lambdas: Sequence[float],
    seed: int,
    folds: int = 10,
    kmm: Optional[KmmConfig] = None,
    hclass_radius: float = 1.0,
    dm_iters: int = DEFAULT_DM_ITERS,
    q_min_by_kernel: Optional[Dict[KernelSpec, WeightVector]] = None,
) -> CvResult:
    """
    Pick (kernel, lambda) for a baseline by k-fold cross-validation.

    The method's weights are computed once per kernel on the full training
    set; ties go to the earlier grid entry.
    """
    if not kernels or not lambdas:
        raise ConfigError("kernel and lambda grids must be nonempty")
    best: Optional[CvResult] = None
    for kernel in kernels:
        q_min = (q_min_by_kernel or {}).get(kernel)
        train = training_set(method, ds, kernel, kmm=kmm, hclass_radius=hclass_radius,
                             dm_iters=dm_iters, seed=seed, q_min=q_min)
        for lam in lambdas:
            loss = cv_loss(method, kernel, train, lam, seed, folds)
            if best is None or loss < best.loss:
                best = CvResult(kernel, float(lam), loss, train)
    logger.debug(f"CV for {method.value}: kernel={best.kernel.describe()}, lambda={best.lam:g}, loss={best.loss:.6g}")
    return best


@dataclass
class MethodResult:
    method: str
    status: str
    mse: Optional[float] = None
    lam: Optional[float] = None
    bandwidth: Optional[float] = None
    r: Optional[float] = None
    slope: Optional[float] = None
    error: Optional[str] = None
    wall_time: float = 0.0

    def to_dict(self, include_timings: bool = False) -> Dict[str, Any]:
        data = asdict(self)
        if not include_timings:
            data.pop("wall_time")
        return data


@dataclass
class TrialResult:
    trial: int
    seed: int
    status: str = "ok"
    error: Optional[str] = None
    methods: Dict[str, MethodResult] = field(default_factory=dict)

    def to_dict(self, include_timings: bool = False) -> Dict[str, Any]:
        return {
            "trial": self.trial,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "methods": {name: res.to_dict(include_timings) for name, res in self.methods.items()},
        }


class TrialRunner:
    """Fits every configured method on one trial's data."""

    def __init__(self, config: ExperimentConfig, trial: int):
        self.config = config
        self.trial = trial
        self.seed = trial_seed(config.seed, trial)
        self.logger = get_logger(__name__)
        self._cv: Dict[Method, CvResult] = {}
        self._q_min: Dict[KernelSpec, WeightVector] = {}

    def q_min(self, ds: Dataset, kernel: KernelSpec) -> WeightVector:
        """DM weights over S for ``kernel``, computed once per trial."""
        if kernel not in self._q_min:
            hclass = HypothesisClassSpec(kernel, self.config.hclass_radius)
            self._q_min[kernel] = dm_minimize(ds, hclass, iters=self.config.dm_iters, seed=self.seed).weights
        return self._q_min[kernel]

    def cross_validated(self, method: Method, ds: Dataset) -> CvResult:
        if method not in self._cv:
            kernels = self.config.kernel_grid(ds.dim)
            if method == Method.DM:
                for kernel in kernels:
                    self.q_min(ds, kernel)
            self._cv[method] = cross_validate(
                method, ds, kernels, self.config.lambda_values(), self.seed,
                folds=self.config.folds,
                kmm=self.config.kmm_config(),
                hclass_radius=self.config.hclass_radius,
                dm_iters=self.config.dm_iters,
                q_min_by_kernel=self._q_min,
            )
        return self._cv[method]

    def fit_gdm(self, ds: Dataset) -> Tuple[Hypothesis, KernelSpec, float, float]:
        """GDM with DM's kernel and lambda; r validated on T' when s > 0."""
        dm = self.cross_validated(Method.DM, ds)
        kernel, lam = dm.kernel, dm.lam
        q_min = self.q_min(ds, kernel)
        options = dict(hclass_radius=self.config.hclass_radius, dm_iters=self.config.dm_iters)
        if ds.s > 0 and self.config.gdm_r is None:
            grid = r_grid(ds, self.config.r_grid_size)
            if grid:
                result = validate_r(ds, kernel, lam, grid, k=self.config.boundary_samples, seed=self.seed,
                                    q_min=q_min, **options)
                return result.h_best, kernel, lam, result.r_best
        r = self.config.gdm_r
        if r is None:
            grid = r_grid(ds, self.config.r_grid_size)
            if not grid:
                raise DatasetError("cannot pick r: all source labels are zero")
            r = grid[len(grid) // 2]
        fit = gdm_fit(ds, kernel, lam, k=self.config.boundary_samples, seed=self.seed, r=r, q_min=q_min, **options)
        return fit.hypothesis, kernel, lam, float(r)

    def run_method(self, method: Method, ds: Dataset, test_x: np.ndarray, test_y: np.ndarray) -> MethodResult:
        start = time.perf_counter()
        r = None
        try:
            if method == Method.GDM:
                h, kernel, lam, r = self.fit_gdm(ds)
            else:
                cv = self.cross_validated(method, ds)
                h, kernel, lam = fit_training_set(method, cv.kernel, cv.train, cv.lam), cv.kernel, cv.lam
            mse = weighted_mse(h, test_x, test_y)
            slope = None
            if ds.dim == 1 and kernel.is_linear:
                slope = float(h.linear_weights()[0])
            self.logger.info(f"Trial {self.trial}: {method.value} mse={mse:.6g}")
            return MethodResult(method.value, "ok", mse, lam, kernel.bandwidth, r, slope,
                                wall_time=time.perf_counter() - start)
        except Exception as e:
            self.logger.error(f"Trial {self.trial}: {method.value} failed: {e}", exc_info=True)
            return MethodResult(method.value, "failed", error=f"{type(e).__name__}: {e}",
                                wall_time=time.perf_counter() - start)

    def run(self) -> TrialResult:
        result = TrialResult(self.trial, self.seed)
        self.logger.info(f"Starting trial {self.trial} (seed {self.seed})")
        try:
            ds, test_x, test_y = load_trial_data(self.config, self.seed)
        except Exception as e:
            self.logger.error(f"Trial {self.trial} could not load data: {e}", exc_info=True)
            result.status = "failed"
            result.error = f"{type(e).__name__}: {e}"
            return result
        for method in self.config.method_list:
            result.methods[method.value] = self.run_method(method, ds, test_x, test_y)
        if any(res.status != "ok" for res in result.methods.values()):
            result.status = "partial"
        return result


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    """Run one trial; a pure function of (config, trial) up to wall times."""
    return TrialRunner(config, trial).run()


def _stats(values: Sequence[float]) -> Dict[str, Any]:
    if not values:
        return {"count": 0, "median": None, "q1": None, "q3": None, "mean": None, "std": None}
    arr = np.asarray(values, dtype=float)
    q1, median, q3 = np.percentile(arr, [25, 50, 75])
    return {
        "count": int(arr.size),
        "median": float(median),
        "q1": float(q1),
        "q3": float(q3),
        "mean": float(arr.mean()),
        "std": float(arr.std()),
    }


@dataclass
class ResultsReport:
    """Per-method, per-trial target MSE with summary statistics."""

    config: ExperimentConfig
    trials: List[TrialResult]

    def method_values(self, method: str, key: str = "mse") -> List[float]:
        values = []
        for trial in self.trials:
            res = trial.methods.get(method)
            if res is not None and res.status == "ok" and getattr(res, key) is not None:
                values.append(getattr(res, key))
        return values

    def summary(self) -> Dict[str, Dict[str, Any]]:
        summary = {name: _stats(self.method_values(name)) for name in self.config.methods}
        target_median = summary.get(Method.TARGET.value, {}).get("median")
        if self.config.normalize_by_target and target_median:
            for stats in summary.values():
                for key in ("median", "q1", "q3"):
                    stats[f"normalized_{key}"] = None if stats[key] is None else stats[key] / target_median
        return summary

    def slopes(self) -> Dict[str, List[Optional[float]]]:
        """Per-trial slopes of every method (d = 1 linear runs only)."""
        out: Dict[str, List[Optional[float]]] = {}
        for name in self.config.methods:
            row = []
            for trial in self.trials:
                res = trial.methods.get(name)
                row.append(res.slope if res is not None and res.status == "ok" else None)
            if any(v is not None for v in row):
                out[name] = row
        return out

    @property
    def failed_trials(self) -> List[int]:
        return [t.trial for t in self.trials if t.status != "ok"]

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "config": self.config.to_dict(),
            "trials": [t.to_dict(self.config.include_timings) for t in self.trials],
            "summary": self.summary(),
            "failed_trials": self.failed_trials,
        }
        slopes = self.slopes()
        if slopes:
            data["slopes"] = slopes
        return data

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def write(self, path: Path) -> Path:
        write_json(Path(path), self.to_dict())
        return Path(path)


class ExperimentPipeline:
    """Runs the trials of an experiment and records them in the ledger."""

    def __init__(self, config: ExperimentConfig, ledger: Optional[RunLedger] = None, workers: int = 1):
        """
        Initialize the pipeline.

        Args:
            config: Experiment configuration
            ledger: Optional run ledger for timings and errors
            workers: Number of worker processes for trials
        """
        self.config = config
        self.ledger = ledger
        self.workers = max(1, int(workers))
        self.run_id: Optional[str] = None
        self.logger = get_logger(__name__)

    async def run(self) -> ResultsReport:
        """Run every trial and assemble the report in trial order."""
        started = datetime.now()
        digest = config_hash(self.config.to_dict())
        run_id = f"{digest[:12]}-{started.strftime('%Y%m%d%H%M%S%f')}"
        self.run_id = run_id
        bind_run(run_id)
        try:
            return await self._run(run_id, digest, started)
        finally:
            bind_run(None)

    async def _run(self, run_id: str, digest: str, started: datetime) -> ResultsReport:
        self.logger.info(f"Starting experiment: {self.config.trials} trials, methods {list(self.config.methods)}")
        if self.ledger:
            self.ledger.start_run(run_id, digest, self.config.seed)

        indices = list(range(self.config.trials))
        if self.workers > 1:
            loop = asyncio.get_running_loop()
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                futures = [loop.run_in_executor(pool, run_trial, self.config, t) for t in indices]
                outcomes = await asyncio.gather(*futures, return_exceptions=True)
        else:
            outcomes = [run_trial(self.config, t) for t in indices]

        trials = []
        for t, outcome in zip(indices, outcomes):
            if isinstance(outcome, BaseException):
                self.logger.error(f"Trial {t} crashed: {outcome}")
                outcome = TrialResult(t, trial_seed(self.config.seed, t), "failed",
                                      f"{type(outcome).__name__}: {outcome}")
            trials.append(outcome)
            self._record(run_id, outcome)

        if self.ledger:
            self.ledger.finish_run(run_id)
        report = ResultsReport(self.config, trials)
        elapsed = (datetime.now() - started).total_seconds()
        self.logger.info(f"Experiment finished in {elapsed:.1f}s; failed trials: {report.failed_trials}")
        return report

    def _record(self, run_id: str, trial: TrialResult) -> None:
        if not self.ledger:
            return
        if trial.error:
            self.ledger.log_error(trial.error.split(":")[0], trial.error, run_id, trial.trial)
        for res in trial.methods.values():
            self.ledger.record_trial(run_id, trial.trial, res.method, trial.seed, res.mse, res.wall_time, res.status)
            if res.error:
                self.ledger.log_error(res.error.split(":")[0], res.error, run_id, trial.trial)


def _target_labels(ds: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    if ds.has_oracle:
        return ds.target_x, ds.target_oracle_y
    if ds.s > 0:
        return ds.target_labeled_x, ds.target_labeled_y
    raise DatasetError("the target objective needs oracle or labeled target points")


def emit_objective_profile(
    ds: Dataset,
    lam: float,
    w_range: Tuple[float, float, int],
    spec: SurrogateSpec,
    k: int = DEFAULT_SAMPLES,
    seed: int = 0,
    q_min: Optional[WeightVector] = None,
) -> List[Tuple[float, float, float, float, float]]:
    """
    Objective of each algorithm along the slope w of h(x) = w x.

    Columns follow PROFILE_COLUMNS; every objective includes lam w^2. The
    DM column uses ``q_min`` (the first ball's weights when omitted) and
    the GDM column the surrogate loss over k boundary samples per ball.

    Raises:
        KernelError: unless d = 1 and the family uses the linear kernel
    """
    if ds.dim != 1:
        raise KernelError(f"objective profiles need one-dimensional inputs, got d={ds.dim}")
    if not spec.kernel.is_linear:
        raise KernelError("objective profiles need the linear kernel")
    lo, hi, steps = w_range
    if steps < 2 or not hi > lo:
        raise ValueError(f"w range needs lo < hi and at least 2 steps, got {w_range}")
    q = (q_min if q_min is not None else spec.balls[0].weights).weights
    centers = [center_hypothesis(ball) for ball in spec.balls]
    samples = sample_boundary(spec, centers, k=k, seed=seed)
    tx, ty = _target_labels(ds)
    sx, sy = ds.source_x[:, 0], ds.source_y

    rows = []
    for w in np.linspace(lo, hi, int(steps)):
        w = float(w)
        reg = lam * w * w
        h = Hypothesis.from_linear([w])
        source_obj = reg + float(np.mean((w * sx - sy) ** 2))
        target_obj = reg + float(np.mean((w * tx[:, 0] - ty) ** 2))
        dm_obj = reg + float(np.sum(q * (w * sx - sy) ** 2))
        gdm_obj = reg + surrogate_loss(h, samples, ds)
        rows.append((w, source_obj, target_obj, dm_obj, gdm_obj))
    logger.info(f"Objective profile over {len(rows)} slopes with {len(samples)} surrogate samples")
    return rows


def profile_argmins(rows: Sequence[Sequence[float]]) -> Dict[str, float]:
    """Minimizing slope of every objective column."""
    table = np.asarray(rows, dtype=float)
    return {name: float(table[int(np.argmin(table[:, i])), 0]) for i, name in enumerate(PROFILE_COLUMNS) if i > 0}

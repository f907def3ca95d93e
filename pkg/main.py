#!/usr/bin/env python3
"""
Discrepancy-minimization toolkit
Command-line entry point: synthetic data, experiments, objective profiles,
validation of the surrogate radius and SDP export.
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add project root to path for imports
sys.path.append(str(Path(__file__).parent))

import numpy as np

from core.data import SyntheticOracle, gen_synthetic, write_dataset
from core.discrepancy import HypothesisClassSpec, dm_minimize
from core.errors import GdmError
from core.gdm import validate_r
from core.kernel import KernelSpec, normalized_bundle
from core.pipeline import (PROFILE_COLUMNS, ExperimentConfig, ExperimentPipeline, emit_objective_profile,
                           load_trial_data, profile_argmins, trial_seed)
from core.run_ledger import RunLedger
from core.sdp import build_sdp, export_sdpa
from core.surrogate import SurrogateSpec, r_grid
from utils.config import Config
from utils.helpers import format_table, parse_float_list, write_csv
from utils.logger import setup_logging

DEFAULT_LAMBDA = 2.0 ** -10

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdm", description="Generalized discrepancy minimization toolkit")
    parser.add_argument("--config", type=Path, help="experiment JSON (default: assets/default_experiment.json)")
    parser.add_argument("--seed", type=int, help="override the configuration seed")
    parser.add_argument("--log-level", help="override GDM_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic dataset as CSV files")
    synth.add_argument("--out-dir", type=Path, required=True)
    synth.add_argument("--m", type=int)
    synth.add_argument("--n", type=int)
    synth.add_argument("--s", type=int)
    synth.add_argument("--test-size", type=int)

    run = sub.add_parser("run", help="run the configured experiment and write the JSON report")
    run.add_argument("--trials", type=int)
    run.add_argument("--methods", help="comma-separated subset of uniform,fe,kmm,dm,gdm,target")
    run.add_argument("--workers", type=int, help="worker processes (default GDM_WORKERS)")
    run.add_argument("--output", type=Path, help="report path (default <output_dir>/report.json)")
    run.add_argument("--normalize", action="store_true", help="normalize medians by the target-trained median")

    profile = sub.add_parser("profile", help="objective of each algorithm along the slope of h(x) = w x")
    profile.add_argument("--output", type=Path, required=True)
    profile.add_argument("--lam", type=float, default=DEFAULT_LAMBDA)
    profile.add_argument("--r", type=float, help="surrogate loss level (default: middle of the r grid)")
    profile.add_argument("--w-min", type=float, default=-1.0)
    profile.add_argument("--w-max", type=float, default=0.5)
    profile.add_argument("--steps", type=int, default=151)
    profile.add_argument("--k", type=int, help="boundary samples per ball")

    val = sub.add_parser("validate-r", help="select the surrogate loss level on the labeled target sample")
    val.add_argument("--lam", type=float, default=DEFAULT_LAMBDA)
    val.add_argument("--grid", help="comma-separated loss levels (default: the r grid of the config)")
    val.add_argument("--k", type=int, help="boundary samples per ball")
    val.add_argument("--bandwidth", type=float, help="Gaussian bandwidth (gaussian configs only)")

    sdp = sub.add_parser("export-sdp", help="export the conic program of the exact objective in SDPA format")
    sdp.add_argument("--output", type=Path, required=True)
    sdp.add_argument("--lam", type=float, default=DEFAULT_LAMBDA)
    sdp.add_argument("--r", type=float, help="surrogate loss level (default: middle of the r grid)")
    sdp.add_argument("--bandwidth", type=float, help="Gaussian bandwidth (gaussian configs only)")
    return parser


def load_config(args: argparse.Namespace, settings: Config) -> ExperimentConfig:
    path = args.config or settings.default_experiment_file
    defaults = {"dm_iters": settings.dm_iters, "boundary_samples": settings.boundary_samples}
    config = ExperimentConfig.from_json(path, defaults)
    return config.with_overrides(seed=args.seed)


def _kernel(config: ExperimentConfig, dim: int, bandwidth: Optional[float] = None) -> KernelSpec:
    if config.kernel == "linear":
        return KernelSpec.linear()
    if bandwidth is not None:
        return KernelSpec.gaussian(bandwidth)
    return config.kernel_grid(dim)[0]


def _middle_r(ds, config: ExperimentConfig) -> float:
    grid = r_grid(ds, config.r_grid_size)
    if not grid:
        raise GdmError("cannot pick r: all source labels are zero")
    return grid[len(grid) // 2]


def cmd_synth(args, config: ExperimentConfig, settings: Config) -> int:
    config = config.with_overrides(m=args.m, n=args.n, s=args.s, test_size=args.test_size)
    ds, _ = gen_synthetic(config.seed, config.m, config.n, config.s, config.test_size,
                          SyntheticOracle(noise_std=config.noise_std))
    out = args.out_dir
    write_dataset(ds, out / "source.csv", out / "target.csv", out / "target_labeled.csv", out / "test.csv")
    print(json.dumps({"m": ds.m, "n": ds.n, "s": ds.s, "test_size": int(ds.test_x.shape[0]), "out_dir": str(out)},
                     sort_keys=True))
    return 0


async def cmd_run(args, config: ExperimentConfig, settings: Config) -> int:
    methods = [m.strip() for m in args.methods.split(",")] if args.methods else None
    config = config.with_overrides(
        trials=args.trials,
        methods=tuple(methods) if methods else None,
        normalize_by_target=True if args.normalize else None,
    )
    ledger = RunLedger(settings.ledger_path)
    pipeline = ExperimentPipeline(config, ledger, workers=args.workers or settings.workers)
    report = await pipeline.run()
    output = args.output or Path(config.output_dir) / "report.json"
    report.write(output)

    summary = report.summary()
    rows = [[name, s["count"], s["median"], s["q1"], s["q3"], s["mean"], s["std"]] for name, s in summary.items()]
    print(format_table(["method", "ok", "median", "q1", "q3", "mean", "std"], rows))
    print(f"Report written to {output}")
    return 0


def _first_trial(config: ExperimentConfig):
    seed = trial_seed(config.seed, 0)
    ds, _, _ = load_trial_data(config, seed)
    return ds, seed


def cmd_profile(args, config: ExperimentConfig, settings: Config) -> int:
    ds, seed = _first_trial(config)
    kernel = KernelSpec.linear()
    q_min = dm_minimize(ds, HypothesisClassSpec(kernel, config.hclass_radius), iters=config.dm_iters,
                        seed=seed).weights
    r = args.r if args.r is not None else _middle_r(ds, config)
    spec = SurrogateSpec.union_family(ds, q_min, r, kernel)
    rows = emit_objective_profile(ds, args.lam, (args.w_min, args.w_max, args.steps), spec,
                                  k=args.k or config.boundary_samples, seed=seed, q_min=q_min)
    write_csv(args.output, PROFILE_COLUMNS, rows)
    print(json.dumps({"argmin": profile_argmins(rows), "output": str(args.output), "r": r}, sort_keys=True))
    return 0


def cmd_validate_r(args, config: ExperimentConfig, settings: Config) -> int:
    ds, seed = _first_trial(config)
    kernel = _kernel(config, ds.dim, args.bandwidth)
    grid = parse_float_list(args.grid) if args.grid else r_grid(ds, config.r_grid_size)
    q_min = dm_minimize(ds, HypothesisClassSpec(kernel, config.hclass_radius), iters=config.dm_iters,
                        seed=seed).weights
    result = validate_r(ds, kernel, args.lam, grid, k=args.k or config.boundary_samples, seed=seed, q_min=q_min,
                        qp_tol=settings.qp_tol, qp_max_iter=settings.qp_max_iter,
                        active_set_max_vars=settings.active_set_max_vars)
    rows = [[r, mse if np.isfinite(mse) else None, "*" if r == result.r_best else ""] for r, mse in result.table]
    print(format_table(["r", "validation_mse", "best"], rows))
    return 0


def cmd_export_sdp(args, config: ExperimentConfig, settings: Config) -> int:
    ds, seed = _first_trial(config)
    kernel = _kernel(config, ds.dim, args.bandwidth)
    q_min = dm_minimize(ds, HypothesisClassSpec(kernel, config.hclass_radius), iters=config.dm_iters,
                        seed=seed).weights
    r = args.r if args.r is not None else _middle_r(ds, config)
    problem = build_sdp(normalized_bundle(kernel, ds, q_min), args.lam, float(np.sqrt(r)))
    path = export_sdpa(problem, args.output)
    print(json.dumps({"block_sizes": list(problem.block_sizes), "output": str(path),
                      "variables": problem.variable_count()}, sort_keys=True))
    return 0


def dispatch(args: argparse.Namespace, settings: Config) -> int:
    config = load_config(args, settings)
    if args.command == "run":
        return asyncio.run(cmd_run(args, config, settings))
    handlers = {
        "synth": cmd_synth,
        "profile": cmd_profile,
        "validate-r": cmd_validate_r,
        "export-sdp": cmd_export_sdp,
    }
    return handlers[args.command](args, config, settings)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the application."""
    args = build_parser().parse_args(argv)
    try:
        settings = Config()
        settings.validate()
        setup_logging(args.log_level or settings.log_level, settings.log_file)
        logger.debug(f"Running command {args.command}")
        return dispatch(args, settings)
    except KeyboardInterrupt:
        logger.info("Interrupted, shutting down")
        return 130
    except GdmError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}, sort_keys=True), file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        print(json.dumps({"error": type(e).__name__, "message": str(e)}, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""
Configuration management for the discrepancy-minimization toolkit.
"""

import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv


class Config:
    """Centralized runtime settings read from the environment."""

    def __init__(self):
        """Initialize configuration from environment variables."""
        # Load environment variables from .env file
        load_dotenv()

        # Project paths
        self.project_root = Path(__file__).parent.parent
        self.assets_dir = self.project_root / "assets"
        self.data_dir = Path(os.getenv("GDM_DATA_DIR", str(self.project_root / "data")))
        self.default_experiment_file = self.assets_dir / "default_experiment.json"

        # Logging
        self.log_level = os.getenv("GDM_LOG_LEVEL", "INFO")
        log_file = os.getenv("GDM_LOG_FILE")
        self.log_file: Optional[Path] = Path(log_file) if log_file else None

        # Solver settings
        self.qp_tol = self._get_float("GDM_QP_TOL", 1e-8)
        self.qp_max_iter = self._get_int("GDM_QP_MAX_ITER", 10000)
        self.active_set_max_vars = self._get_int("GDM_ACTIVE_SET_MAX_VARS", 400)
        self.dm_iters = self._get_int("GDM_DM_ITERS", 2000)
        self.boundary_samples = self._get_int("GDM_BOUNDARY_SAMPLES", 20)

        # Execution
        self.workers = self._get_int("GDM_WORKERS", 1)

        # Run ledger
        ledger = os.getenv("GDM_LEDGER_PATH")
        self.ledger_path = Path(ledger) if ledger else self.data_dir / "runs.db"

        # Ensure directories exist
        self.data_dir.mkdir(parents=True, exist_ok=True)

    def _get_int(self, key: str, default: int) -> int:
        value = os.getenv(key)
        if value is None or value == "":
            return default
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"Environment variable {key} must be an integer, got '{value}'")

    def _get_float(self, key: str, default: float) -> float:
        value = os.getenv(key)
        if value is None or value == "":
            return default
        try:
            return float(value)
        except ValueError:
            raise ValueError(f"Environment variable {key} must be a number, got '{value}'")

    def validate(self) -> bool:
        """Validate configuration."""
        if not self.default_experiment_file.exists():
            raise FileNotFoundError(f"Default experiment file not found: {self.default_experiment_file}")
        if self.workers < 1:
            raise ValueError(f"GDM_WORKERS must be >= 1, got {self.workers}")
        if not self.qp_tol > 0:
            raise ValueError(f"GDM_QP_TOL must be positive, got {self.qp_tol}")
        if self.qp_max_iter < 1 or self.dm_iters < 1 or self.boundary_samples < 1:
            raise ValueError("GDM_QP_MAX_ITER, GDM_DM_ITERS and GDM_BOUNDARY_SAMPLES must be >= 1")
        return True

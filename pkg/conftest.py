import sys
from pathlib import Path

import pytest

# Add project root to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from core.data import gen_synthetic
from core.kernel import KernelSpec


@pytest.fixture
def small_ds():
    """Unlabeled-target synthetic dataset, m=12, n=10."""
    ds, _ = gen_synthetic(seed=3, m=12, n=10)
    return ds


@pytest.fixture
def labeled_ds():
    """Synthetic dataset with 6 labeled target points and a held-out test sample."""
    ds, _ = gen_synthetic(seed=5, m=16, n=12, s=6, test_size=20)
    return ds


@pytest.fixture
def linear():
    return KernelSpec.linear()


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """Keep runtime settings away from the developer's .env and data directory."""
    monkeypatch.setenv("GDM_DATA_DIR", str(tmp_path / "data"))
    monkeypatch.setenv("GDM_LEDGER_PATH", str(tmp_path / "data" / "runs.db"))
    monkeypatch.delenv("GDM_LOG_FILE", raising=False)
    monkeypatch.delenv("GDM_WORKERS", raising=False)

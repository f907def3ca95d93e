import json
import logging
import math

import numpy as np
import pytest

from utils.config import Config
from utils.helpers import canonical_json, config_hash, format_table, jsonable, parse_float_list, write_csv
from utils.logger import NO_RUN, bind_run, get_logger, setup_logging


class TestParseFloatList:
    def test_parses_text(self):
        assert parse_float_list("1e-3, 0.5,2") == [0.001, 0.5, 2.0]
        assert parse_float_list("1,,2,") == [1.0, 2.0]
        assert parse_float_list([1, 2.5]) == [1.0, 2.5]
        assert parse_float_list(None) is None

    @pytest.mark.parametrize("text", ["1,abc", "nan", "1,inf"])
    def test_rejects_bad_entries(self, text):
        with pytest.raises(ValueError):
            parse_float_list(text)


def test_jsonable_replaces_non_finite_values():
    data = {"a": float("nan"), "b": np.array([1.0, np.inf]), "c": np.float64(2.5), 3: (1, 2)}
    assert jsonable(data) == {"a": None, "b": [1.0, None], "c": 2.5, "3": [1, 2]}


def test_canonical_json_is_stable():
    first = canonical_json({"b": 1, "a": [float("nan"), 0.1]})
    second = canonical_json({"a": [math.nan, 0.1], "b": 1})
    assert first == second
    assert first.endswith("\n")
    assert json.loads(first) == {"a": [None, 0.1], "b": 1}
    assert config_hash({"x": 1}) == config_hash({"x": 1})
    assert config_hash({"x": 1}) != config_hash({"x": 2})


def test_write_csv_is_repr_exact(tmp_path):
    path = tmp_path / "out" / "table.csv"
    write_csv(path, ["w", "value"], [(0.1, 1 / 3)])
    lines = path.read_text().splitlines()
    assert lines[0] == "w,value"
    assert [float(v) for v in lines[1].split(",")] == [0.1, 1 / 3]


def test_format_table():
    text = format_table(["method", "mse"], [["dm", 0.123456789], ["gdm", None]])
    lines = text.splitlines()
    assert len(lines) == 4
    assert lines[2].split() == ["dm", "0.123457"]
    assert lines[3].split() == ["gdm", "-"]
    assert len({len(line) for line in lines}) == 1


class TestConfig:
    def test_defaults(self, tmp_path):
        config = Config()
        assert config.qp_tol == 1e-8
        assert config.qp_max_iter == 10000
        assert config.active_set_max_vars == 400
        assert config.workers == 1
        assert config.log_file is None
        assert config.ledger_path == tmp_path / "data" / "runs.db"
        assert config.data_dir.exists()
        assert config.validate()

    def test_environment_overrides(self, monkeypatch, tmp_path):
        monkeypatch.setenv("GDM_QP_TOL", "1e-6")
        monkeypatch.setenv("GDM_WORKERS", "3")
        monkeypatch.setenv("GDM_LOG_FILE", str(tmp_path / "gdm.log"))
        config = Config()
        assert config.qp_tol == 1e-6
        assert config.workers == 3
        assert config.log_file == tmp_path / "gdm.log"

    def test_bad_values_name_the_variable(self, monkeypatch):
        monkeypatch.setenv("GDM_QP_MAX_ITER", "lots")
        with pytest.raises(ValueError, match="GDM_QP_MAX_ITER"):
            Config()

    def test_validate_rejects_zero_workers(self, monkeypatch):
        monkeypatch.setenv("GDM_WORKERS", "0")
        with pytest.raises(ValueError, match="GDM_WORKERS"):
            Config().validate()


def test_setup_logging_adds_a_rotating_file(tmp_path):
    log_file = tmp_path / "logs" / "gdm.log"
    root = logging.getLogger()
    saved = root.handlers[:], root.level
    try:
        setup_logging("DEBUG", log_file)
        assert root.level == logging.DEBUG
        assert len(root.handlers) == 2
        log = get_logger("gdm.test")
        log.debug("outside a run")
        bind_run("abc123")
        log.debug("inside a run")
        bind_run(None)
        for handler in root.handlers:
            handler.flush()
        lines = log_file.read_text().splitlines()
        assert lines[0].endswith(f"[{NO_RUN}] outside a run")
        assert lines[1].endswith("[abc123] inside a run")
        with pytest.raises(ValueError):
            setup_logging("LOUD")
    finally:
        bind_run(None)
        for handler in root.handlers:
            handler.close()
        root.handlers[:] = saved[0]
        root.setLevel(saved[1])

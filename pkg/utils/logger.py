"""
Logging configuration for the discrepancy-minimization toolkit.

Every record carries the id of the experiment run it belongs to, so log
lines can be matched against the rows of the run ledger.
"""

import logging
import logging.handlers
import sys
from pathlib import Path
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(run_id)s] %(message)s'
NO_RUN = "-"

_current_run = NO_RUN


class RunContextFilter(logging.Filter):
    """Stamps ``record.run_id`` with the run bound by :func:`bind_run`."""

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "run_id"):
            record.run_id = _current_run
        return True


def bind_run(run_id: Optional[str]) -> None:
    """Attach ``run_id`` to subsequent records; None clears it."""
    global _current_run
    _current_run = run_id or NO_RUN


def setup_logging(
    log_level: str = "INFO",
    log_file: Optional[Path] = None,
    max_bytes: int = 10 * 1024 * 1024,  # 10MB
    backup_count: int = 5
) -> None:
    """
    Install the console handler and, when ``log_file`` is set, a rotating
    file handler on the root logger.

    Args:
        log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL
        log_file: Optional log file path
        max_bytes: Size of the log file before rotation
        backup_count: Rotated files to keep

    Raises:
        ValueError: for an unknown level name
    """
    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        raise ValueError(f"Unknown log level: {log_level}")

    formatter = logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')
    context = RunContextFilter()
    handlers = [logging.StreamHandler(sys.stderr)]  # stdout is reserved for command output
    if log_file:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.handlers.RotatingFileHandler(
            log_file, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8'))

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()
    for handler in handlers:
        handler.setFormatter(formatter)
        handler.addFilter(context)
        root_logger.addHandler(handler)

    # Event-loop and executor chatter
    for noisy in ("asyncio", "concurrent.futures"):
        logging.getLogger(noisy).setLevel(logging.WARNING)


def get_logger(name: str) -> logging.Logger:
    """Named logger; handlers come from :func:`setup_logging`."""
    return logging.getLogger(name)

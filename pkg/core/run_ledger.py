"""
SQLite ledger of experiment runs, per-method trial outcomes and errors.

Wall times and timestamps live here so the JSON report can stay
reproducible.
"""

import logging
import sqlite3
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional


class RunLedger:
    """Persistent record of experiment runs."""

    def __init__(self, db_path: Path):
        """
        Initialize the ledger.

        Args:
            db_path: Path to the SQLite database file
        """
        self.db_path = Path(db_path)
        self.logger = logging.getLogger(__name__)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._init_database()

    def _init_database(self) -> None:
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    run_id TEXT PRIMARY KEY,
                    config_hash TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    started TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                    finished TIMESTAMP
                )
            """)
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS trials (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT NOT NULL,
                    trial INTEGER NOT NULL,
                    method TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    mse REAL,
                    wall_time REAL,
                    status TEXT NOT NULL
                )
            """)
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS errors (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT,
                    trial INTEGER,
                    error_type TEXT NOT NULL,
                    error_message TEXT NOT NULL,
                    timestamp TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            """)
            conn.commit()
            self.logger.debug(f"Run ledger ready at {self.db_path}")

    @contextmanager
    def _get_connection(self):
        """Get database connection with proper error handling."""
        conn = None
        try:
            conn = sqlite3.connect(self.db_path)
            conn.row_factory = sqlite3.Row
            yield conn
        except sqlite3.Error as e:
            self.logger.error(f"Database error: {e}")
            raise
        finally:
            if conn:
                conn.close()

    def start_run(self, run_id: str, config_hash: str, seed: int) -> None:
        with self._get_connection() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO runs (run_id, config_hash, seed, started) VALUES (?, ?, ?, ?)",
                (run_id, config_hash, int(seed), datetime.now().isoformat()),
            )
            conn.commit()
        self.logger.info(f"Started run {run_id}")

    def finish_run(self, run_id: str) -> None:
        with self._get_connection() as conn:
            conn.execute("UPDATE runs SET finished = ? WHERE run_id = ?", (datetime.now().isoformat(), run_id))
            conn.commit()

    def record_trial(
        self,
        run_id: str,
        trial: int,
        method: str,
        seed: int,
        mse: Optional[float],
        wall_time: Optional[float],
        status: str,
    ) -> None:
        with self._get_connection() as conn:
            conn.execute(
                """
                INSERT INTO trials (run_id, trial, method, seed, mse, wall_time, status)
                VALUES (?, ?, ?, ?, ?, ?, ?)
                """,
                (run_id, int(trial), method, int(seed), mse, wall_time, status),
            )
            conn.commit()

    def log_error(self, error_type: str, error_message: str, run_id: Optional[str] = None,
                  trial: Optional[int] = None) -> None:
        """
        Log an error to the database.

        Args:
            error_type: Exception class name
            error_message: Error message
            run_id: Run the error belongs to
            trial: Trial index, when the error is trial-specific
        """
        with self._get_connection() as conn:
            conn.execute(
                "INSERT INTO errors (run_id, trial, error_type, error_message) VALUES (?, ?, ?, ?)",
                (run_id, trial, error_type, error_message),
            )
            conn.commit()

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        with self._get_connection() as conn:
            row = conn.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,)).fetchone()
            return dict(row) if row else None

    def get_trials(self, run_id: str) -> List[Dict[str, Any]]:
        with self._get_connection() as conn:
            rows = conn.execute(
                "SELECT trial, method, seed, mse, wall_time, status FROM trials "
                "WHERE run_id = ? ORDER BY trial, method",
                (run_id,),
            ).fetchall()
            return [dict(row) for row in rows]

    def get_recent_errors(self, limit: int = 10) -> List[Dict[str, Any]]:
        with self._get_connection() as conn:
            rows = conn.execute(
                "SELECT run_id, trial, error_type, error_message, timestamp FROM errors "
                "ORDER BY id DESC LIMIT ?",
                (limit,),
            ).fetchall()
            return [dict(row) for row in rows]

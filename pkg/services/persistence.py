import csv
import hashlib
import json
import logging
import os
import sqlite3
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Optional, Sequence

from config import settings
from services.errors import ValidationError

# Rule 10: Observability
logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "dual_return", "objective", "zeta_error", "grad_norm", "method", "mode", "seed"]
COMPARE_COLUMNS = ["method", "mode", "runs", "mean_final_reward", "std_final_reward"]


@dataclass
class RunRecord:
    id: int
    run_id: str
    method: str
    mode: str
    preset: str
    seed: int
    config_hash: str
    final_reward: float
    run_dir: str
    created_at: str

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        """Helper to create a RunRecord from a DB row (Rule 8: Boring/Reliable)."""
        return cls(
            id=data["id"],
            run_id=data["run_id"],
            method=data["method"],
            mode=data["mode"],
            preset=data.get("preset") or "",
            seed=int(data["seed"]),
            config_hash=data.get("config_hash") or "",
            final_reward=float(data["final_reward"]),
            run_dir=data.get("run_dir") or "",
            created_at=data.get("created_at") or "",
        )


class RunRepository:
    """SQLite registry of finished training runs."""

    def __init__(self, db_path: str = settings.DB_PATH):
        self.db_path = db_path
        directory = os.path.dirname(self.db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.init_db()

    @contextmanager
    def _connection(self):
        # Rule 7 & 12: Recovery and Explicit Error Handling
        conn = sqlite3.connect(self.db_path, timeout=10)
        conn.row_factory = sqlite3.Row
        try:
            conn.execute("PRAGMA journal_mode=WAL;")
            yield conn
        except sqlite3.DatabaseError as e:
            logger.critical(f"DATABASE ERROR: {e}", exc_info=True)
            raise
        finally:
            conn.close()

    def init_db(self):
        """Creates the runs table and adds any missing columns (Rule 1)."""
        with self._connection() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT NOT NULL,
                    method TEXT NOT NULL,
                    mode TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    final_reward REAL NOT NULL,
                    created_at TEXT NOT NULL
                )
            """)

            cursor = conn.execute("PRAGMA table_info(runs)")
            columns = [row["name"] for row in cursor.fetchall()]

            migrations = {
                "preset": "TEXT",
                "config_hash": "TEXT",
                "run_dir": "TEXT",
            }

            for col_name, col_type in migrations.items():
                if col_name not in columns:
                    conn.execute(f"ALTER TABLE runs ADD COLUMN {col_name} {col_type}")
                    logger.info(f"Migration: Added missing column '{col_name}'")

            conn.commit()
        logger.debug("Run registry initialized.")

    def add_run(
        self,
        run_id: str,
        method: str,
        mode: str,
        preset: str,
        seed: int,
        config_hash: str,
        final_reward: float,
        run_dir: str,
    ) -> int:
        query = """
            INSERT INTO runs (run_id, method, mode, preset, seed, config_hash, final_reward, run_dir, created_at)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        """
        now = datetime.now(timezone.utc).isoformat()
        with self._connection() as conn:
            cursor = conn.execute(
                query, (run_id, method, mode, preset, seed, config_hash, float(final_reward), run_dir, now)
            )
            conn.commit()
            return cursor.lastrowid

    def get_runs(self, limit: int = 50, preset: Optional[str] = None) -> List[RunRecord]:
        if preset is None:
            query, params = "SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,)
        else:
            query, params = "SELECT * FROM runs WHERE preset = ? ORDER BY id DESC LIMIT ?", (preset, limit)
        with self._connection() as conn:
            cursor = conn.execute(query, params)
            return [RunRecord.from_dict(dict(row)) for row in cursor.fetchall()]


def content_hash(payload: bytes) -> str:
    """Git blob hash: sha1 over 'blob <len>\\0' followed by the bytes."""
    digest = hashlib.sha1()
    digest.update(f"blob {len(payload)}\0".encode("ascii"))
    digest.update(payload)
    return digest.hexdigest()


def file_hash(path: str) -> str:
    with open(path, "rb") as handle:
        return content_hash(handle.read())


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_metrics_csv(path: str, rows: Iterable[Dict], method: str, mode: str, seed: int) -> str:
    """Rule 2: Export durable state to a portable CSV format."""
    _ensure_parent(path)
    with open(path, mode="w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([
                row["step"],
                repr(float(row["dual_return"])),
                repr(float(row["objective"])),
                repr(float(row["zeta_error"])),
                repr(float(row["grad_norm"])),
                method,
                mode,
                seed,
            ])
    return path


def read_metrics_csv(path: str) -> List[Dict]:
    with open(path, newline="", encoding="utf-8") as file:
        reader = csv.DictReader(file)
        if reader.fieldnames != METRIC_COLUMNS:
            raise ValidationError(f"{path} does not have the metrics columns {METRIC_COLUMNS}")
        rows = []
        for row in reader:
            parsed = {key: float(row[key]) for key in ("dual_return", "objective", "zeta_error", "grad_norm")}
            parsed.update(step=int(row["step"]), method=row["method"], mode=row["mode"], seed=int(row["seed"]))
            rows.append(parsed)
    return rows


def write_manifest(path: str, manifest: Dict) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    return path


def load_manifest(path: str) -> Dict:
    try:
        with open(path, encoding="utf-8") as handle:
            manifest = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from exc
    if "config" not in manifest or "inputs" not in manifest:
        raise ValidationError(f"{path} is not a run manifest")
    return manifest


def write_residual_maps(path: str, maps: Sequence) -> str:
    """One {"step": n, "grid": [[...]]} JSON object per line."""
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as handle:
        for residual in maps:
            handle.write(json.dumps(residual.to_dict()) + "\n")
    return path


def read_residual_maps(path: str) -> List[Dict]:
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


def write_compare_csv(path: str, rows: Iterable[Dict]) -> str:
    _ensure_parent(path)
    with open(path, mode="w", newline="", encoding="utf-8") as file:
        writer = csv.DictWriter(file, fieldnames=COMPARE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row[key] for key in COMPARE_COLUMNS})
    return path

"""
Run ledger for gwldp: a small sqlite record of CLI runs and their estimates.
"""

import os
import sqlite3
import uuid
from datetime import datetime
from typing import Any, Dict, List, Optional

from .types import DecayPoint, RunManifest


class RunLedger:
    """sqlite-backed history of runs"""

    def __init__(self, db_path: str = "./runs/gwldp.db"):
        self.db_path = db_path
        directory = os.path.dirname(db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.init_tables()

    def init_tables(self):
        """Create the runs and estimates tables if missing"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                run_id TEXT PRIMARY KEY,
                command TEXT NOT NULL,
                status TEXT NOT NULL,
                manifest TEXT NOT NULL,  -- JSON
                created_at TEXT NOT NULL
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS estimates (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                n INTEGER NOT NULL,
                estimate REAL NOT NULL,
                stderr REAL NOT NULL,
                decay REAL,  -- NULL when infinite
                finite BOOLEAN NOT NULL,
                unreliable BOOLEAN DEFAULT FALSE,
                FOREIGN KEY (run_id) REFERENCES runs (run_id)
            )
        """)

        conn.commit()
        conn.close()

    def record_run(self, manifest: RunManifest, run_id: Optional[str] = None) -> str:
        """Store a manifest; returns the run id"""
        run_id = run_id or str(uuid.uuid4())
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute("""
            INSERT OR REPLACE INTO runs (run_id, command, status, manifest, created_at)
            VALUES (?, ?, ?, ?, ?)
        """, (run_id, manifest.command, manifest.status.value, manifest.model_dump_json(),
              datetime.now().isoformat()))
        conn.commit()
        conn.close()
        return run_id

    def record_estimates(self, run_id: str, points: List[DecayPoint]) -> None:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.executemany("""
            INSERT INTO estimates (run_id, n, estimate, stderr, decay, finite, unreliable)
            VALUES (?, ?, ?, ?, ?, ?, ?)
        """, [(run_id, p.n, p.estimate, p.stderr, p.decay, p.finite, p.unreliable) for p in points])
        conn.commit()
        conn.close()

    def list_runs(self, command: Optional[str] = None) -> List[Dict[str, Any]]:
        """Runs, oldest first, optionally filtered by command"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        if command:
            cursor.execute("""
                SELECT run_id, command, status, created_at FROM runs
                WHERE command = ? ORDER BY created_at ASC
            """, (command,))
        else:
            cursor.execute("SELECT run_id, command, status, created_at FROM runs ORDER BY created_at ASC")
        rows = [dict(zip(("run_id", "command", "status", "created_at"), row)) for row in cursor.fetchall()]
        conn.close()
        return rows

    def get_manifest(self, run_id: str) -> Optional[RunManifest]:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute("SELECT manifest FROM runs WHERE run_id = ?", (run_id,))
        row = cursor.fetchone()
        conn.close()
        if not row:
            return None
        return RunManifest.model_validate_json(row[0])

    def get_estimates(self, run_id: str) -> List[DecayPoint]:
        """Decay points of a run in n order"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute("""
            SELECT n, estimate, stderr, decay, finite, unreliable
            FROM estimates WHERE run_id = ? ORDER BY n ASC
        """, (run_id,))
        points = [
            DecayPoint(n=row[0], estimate=row[1], stderr=row[2], decay=row[3],
                       finite=bool(row[4]), unreliable=bool(row[5]))
            for row in cursor.fetchall()
        ]
        conn.close()
        return points

"""
Run cache for the spike camera toolkit

Records simulation and calibration runs in SQLite so identical invocations
can reuse their outputs.
"""

import hashlib
import json
import logging
import os
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Union

from config import SpikeCamConfig


def file_digest(path: Union[str, Path, None]) -> str:
    """SHA-256 of a file's bytes ("" when no path is given)"""
    if path is None:
        return ""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunCache:
    """SQLite record of simulation and calibration runs

    A simulation run is keyed by the SHA-256 of everything that determines its
    output: luminance bytes, serialized parameters, seed, mode and maps bytes.

    Attributes:
        db_path: Path to the SQLite database file
    """

    def __init__(self, db_path: str = SpikeCamConfig.CACHE_DB):
        """Initialize the run cache

        Args:
            db_path: Path to the SQLite database file
        """
        self.db_path = db_path
        self.init_database()

    def init_database(self):
        """Create the cache tables if they don't exist"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS simulation_runs (
                run_key TEXT PRIMARY KEY,
                output_path TEXT,
                output_digest TEXT,
                mode TEXT,
                seed INTEGER,
                spike_total INTEGER,
                timestamp DATETIME
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS calibration_runs (
                manifest_digest TEXT,
                manifest_path TEXT,
                report_path TEXT,
                n_scenes INTEGER,
                estimates TEXT,
                timestamp DATETIME
            )
        ''')

        conn.commit()
        conn.close()

    @staticmethod
    def simulation_key(lum_digest: str, params_text: str, seed: int, mode: str, maps_digest: str = "") -> str:
        """Key of a simulation run"""
        material = f"{lum_digest}|{params_text}|{seed}|{mode}|{maps_digest}"
        return hashlib.sha256(material.encode()).hexdigest()

    def get_simulation(self, run_key: str) -> Optional[Dict]:
        """Look up a recorded simulation whose output is still intact

        Returns:
            Run record, or None when missing or when the output file changed
        """
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            SELECT output_path, output_digest, mode, seed, spike_total, timestamp
            FROM simulation_runs WHERE run_key = ?
        ''', (run_key,))

        result = cursor.fetchone()
        conn.close()

        if not result:
            return None
        output_path, output_digest, mode, seed, spike_total, timestamp = result
        if not os.path.exists(output_path) or file_digest(output_path) != output_digest:
            logging.info(f"Cached output {output_path} is gone or changed; rerunning")
            return None
        logging.info(f"Cache hit for simulation run -> {output_path}")
        return {
            "output_path": output_path,
            "mode": mode,
            "seed": seed,
            "spike_total": spike_total,
            "timestamp": timestamp,
        }

    def record_simulation(self, run_key: str, output_path: str, mode: str, seed: int, spike_total: int):
        """Record a finished simulation run"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            INSERT OR REPLACE INTO simulation_runs
            (run_key, output_path, output_digest, mode, seed, spike_total, timestamp)
            VALUES (?, ?, ?, ?, ?, ?, ?)
        ''', (run_key, str(output_path), file_digest(output_path), mode, seed, spike_total,
              datetime.now().isoformat()))

        conn.commit()
        conn.close()

    def record_calibration(self, manifest_path: str, report_path: str, n_scenes: int,
                           estimates: Optional[Dict[str, float]]):
        """Record a calibration run"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            INSERT INTO calibration_runs
            (manifest_digest, manifest_path, report_path, n_scenes, estimates, timestamp)
            VALUES (?, ?, ?, ?, ?, ?)
        ''', (file_digest(manifest_path), str(manifest_path), str(report_path), n_scenes,
              json.dumps(estimates), datetime.now().isoformat()))

        conn.commit()
        conn.close()

    def calibration_history(self, manifest_path: Optional[str] = None) -> List[Dict]:
        """List recorded calibrations, newest first

        Args:
            manifest_path: Only runs whose manifest had the same content as this file

        Returns:
            List of run records
        """
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        if manifest_path is None:
            cursor.execute('''
                SELECT manifest_path, report_path, n_scenes, estimates, timestamp
                FROM calibration_runs ORDER BY timestamp DESC
            ''')
        else:
            cursor.execute('''
                SELECT manifest_path, report_path, n_scenes, estimates, timestamp
                FROM calibration_runs WHERE manifest_digest = ? ORDER BY timestamp DESC
            ''', (file_digest(manifest_path),))

        rows = cursor.fetchall()
        conn.close()

        return [
            {
                "manifest_path": manifest,
                "report_path": report,
                "n_scenes": n_scenes,
                "estimates": json.loads(estimates),
                "timestamp": timestamp,
            }
            for manifest, report, n_scenes, estimates, timestamp in rows
        ]

"""
Run Store - on-disk layout of one experiment run

    <output_dir>/<experiment id>/
        report.json        deterministic report (config echo, rows, metrics, cost)
        run_info.json      wall-clock, cache hits, backend calls
        cases.csv          one row per case
        metrics.csv        experiment, model, template, tp, fn, tn, fp, accuracy, mcc
        rounds.csv         query_id, true_author, survival_round, winner, correct
        cost.csv           per (experiment, model) spend
        queries.jsonl      query log, one record per backend call
        tournament/*.json  one result per tournament query
"""

import hashlib
import json
import logging
import os
import re
import threading
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from cache_engine import read_query_log

logger = logging.getLogger(__name__)

SAFE_NAME = re.compile(r"[^A-Za-z0-9_.-]+")


class RunStore:
    """
    File layout for one experiment id. Every write goes to a temp file
    first and is moved into place, so a killed run never leaves a
    half-written result behind.
    """

    def __init__(self, output_dir, experiment_id: str):
        """
        Args:
            output_dir: root directory for all runs
            experiment_id: sub-directory name for this run
        """
        self.root = Path(output_dir) / experiment_id
        self.tournament_dir = self.root / "tournament"
        os.makedirs(self.tournament_dir, exist_ok=True)

    # ====================================================================
    # PATHS
    # ====================================================================

    @property
    def report_path(self) -> Path:
        return self.root / "report.json"

    @property
    def run_info_path(self) -> Path:
        return self.root / "run_info.json"

    @property
    def query_log_path(self) -> Path:
        return self.root / "queries.jsonl"

    @property
    def default_cache_dir(self) -> Path:
        return self.root.parent / ".cache"

    def csv_path(self, name: str) -> Path:
        return self.root / f"{name}.csv"

    # ====================================================================
    # WRITES
    # ====================================================================

    def _write_text(self, path: Path, text: str):
        tmp = path.with_name(f".{path.name}.{threading.get_ident()}.tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)

    def write_json(self, path: Path, data: dict):
        self._write_text(path, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")

    def write_report(self, report: dict) -> Path:
        self.write_json(self.report_path, report)
        logger.info("💾 Report saved: %s", self.report_path)
        return self.report_path

    def write_run_info(self, info: dict) -> Path:
        self.write_json(self.run_info_path, info)
        return self.run_info_path

    def write_table(self, name: str, rows: List[dict], columns: Optional[List[str]] = None) -> Path:
        path = self.csv_path(name)
        # object dtype keeps integer counts integral next to rows that lack them
        df = pd.DataFrame(rows, columns=columns, dtype=object)
        self._write_text(path, df.to_csv(index=False, lineterminator="\n"))
        logger.debug("💾 %s.csv: %d rows", name, len(df))
        return path

    def read_report(self) -> Optional[dict]:
        if not self.report_path.exists():
            return None
        with open(self.report_path, "r", encoding="utf-8") as f:
            return json.load(f)

    # ====================================================================
    # TOURNAMENT RESULTS
    # ====================================================================

    def tournament_path(self, query_id: str) -> Path:
        digest = hashlib.sha256(query_id.encode("utf-8")).hexdigest()[:12]
        name = SAFE_NAME.sub("_", query_id).strip("_")[:80]
        return self.tournament_dir / f"{name}-{digest}.json"

    def save_tournament(self, result: dict) -> Path:
        path = self.tournament_path(result["query_id"])
        self.write_json(path, result)
        return path

    def list_tournament_results(self) -> Dict[str, dict]:
        """Saved results keyed by query id; unreadable files are skipped"""
        results = {}
        for path in sorted(self.tournament_dir.glob("*.json")):
            try:
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
                results[data["query_id"]] = data
            except (OSError, ValueError, KeyError, TypeError) as e:
                logger.warning("⚠️ Ignoring unreadable tournament result %s: %s", path.name, e)
        return results

    # ====================================================================
    # QUERY LOG
    # ====================================================================

    def read_query_log(self) -> List[dict]:
        return read_query_log(self.query_log_path)

import json
import logging
import os
import threading
from pathlib import Path
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)

CACHE_DIR_ENV = "CODATTR_CACHE_DIR"


def resolve_cache_dir(default) -> Path:
    override = os.getenv(CACHE_DIR_ENV)
    return Path(override) if override else Path(default)


class ResponseCache:
    """
    Content-addressed store of query records: <cache_dir>/<hex key>.json.
    With no cache_dir the records live in memory for the process lifetime.
    """

    def __init__(self, cache_dir=None):
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._memory: Dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.cache_dir is not None:
            os.makedirs(self.cache_dir, exist_ok=True)

    def path_for(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> Optional[dict]:
        if self.cache_dir is None:
            return self._memory.get(key)

        path = self.path_for(key)
        if not path.exists():
            return None
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except (OSError, ValueError) as e:
            logger.warning("⚠️ Ignoring corrupt cache entry %s: %s", path.name, e)
            return None

    def put(self, key: str, data: dict):
        if self.cache_dir is None:
            with self._lock:
                self._memory[key] = data
            return

        path = self.path_for(key)
        tmp = path.with_name(f".{key}.{threading.get_ident()}.tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=4, sort_keys=True, ensure_ascii=False)
        os.replace(tmp, path)

    def __contains__(self, key: str) -> bool:
        if self.cache_dir is None:
            return key in self._memory
        return self.path_for(key).exists()


class QueryLog:
    """Append-only JSONL file, one query record per line"""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        os.makedirs(self.path.parent, exist_ok=True)

    def append(self, record: dict):
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")

    def read(self) -> List[dict]:
        return read_query_log(self.path)


def read_query_log(path) -> List[dict]:
    path = Path(path)
    if not path.exists():
        return []

    records = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except ValueError:
                logger.warning("⚠️ Skipping truncated query-log line %d in %s", number, path)
    return records

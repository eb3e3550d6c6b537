"""Content-addressed, file-backed cache for action potential solves."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from pathlib import Path

import numpy as np

from .action_path import MinimizerResult, PhiOptions

logger = logging.getLogger(__name__)

CACHE_ENV = "NBKAM_CACHE_DIR"


def phi_key(x, y, opts: PhiOptions) -> str:
    """SHA-256 over the canonical bytes of both endpoints, masses and solver options."""
    h = hashlib.sha256()
    for arr in (x.r, y.r, x.m):
        a = np.ascontiguousarray(arr, dtype="<f8")
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    h.update(json.dumps(opts.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


class PhiCache:
    """Read-through cache: an in-memory map backed by one JSON file per entry.

    Writes go to a temporary file that is renamed into place, so concurrent
    readers never see partial entries.
    """

    def __init__(self, directory=None, memory: bool = True):
        self.directory = Path(directory) if directory else None
        self._memory = {} if memory else None
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str):
        if self._memory is not None and key in self._memory:
            return self._memory[key]
        if self.directory is None:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        try:
            result = MinimizerResult.from_dict(json.loads(path.read_text()))
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("corrupt cache entry %s (%s); recomputing", path, exc)
            return None
        if self._memory is not None:
            self._memory[key] = result
        return result

    def put(self, key: str, result: MinimizerResult) -> None:
        if self._memory is not None:
            self._memory[key] = result
        if self.directory is None:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w") as fh:
                json.dump(result.to_dict(), fh)
            os.replace(tmp, path)

    def get_or_compute(self, key: str, compute):
        found = self.get(key)
        if found is not None:
            self.hits += 1
            return found
        self.misses += 1
        result = compute()
        self.put(key, result)
        return result


def default_cache_dir():
    return os.environ.get(CACHE_ENV)

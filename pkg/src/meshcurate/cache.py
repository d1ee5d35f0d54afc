"""Local content cache for mesh files, keyed by object id.

Layout: <root>/<first 2 digest chars>/<object_id>.glb plus a sidecar
index.json mapping object_id -> digest. Writes are atomic (temp file +
rename) so a killed fetch never leaves a partial entry visible.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable

from .labels import utc_now

__all__ = ["CacheEntry", "FetchFailedError", "DigestMismatchError", "LocalCache"]


@dataclass(frozen=True)
class CacheEntry:
    object_id: str
    local_path: Path
    content_digest: str
    fetched_at: datetime


class FetchFailedError(RuntimeError):
    """The injected fetcher raised; nothing was cached."""


class DigestMismatchError(RuntimeError):
    """Fetched bytes did not match the expected digest."""


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class LocalCache:
    """Filesystem cache with per-key write serialization.

    Concurrent readers are always safe; writers for the same object_id are
    serialized in-process, and the atomic rename keeps cross-process
    populations consistent. Eviction is manual.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._index_path = self.root / "index.json"
        self._index_lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._key_locks_guard = threading.Lock()

    def _lock_for(self, object_id: str) -> threading.Lock:
        with self._key_locks_guard:
            return self._key_locks[object_id]

    def _read_index(self) -> dict[str, dict]:
        if not self._index_path.is_file():
            return {}
        try:
            return json.loads(self._index_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return {}

    def _write_index(self, index: dict[str, dict]) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".index-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(index, handle, indent=1, sort_keys=True)
            os.replace(tmp, self._index_path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _entry_path(self, object_id: str, digest: str) -> Path:
        return self.root / digest[:2] / f"{object_id}.glb"

    def lookup(self, object_id: str) -> CacheEntry | None:
        """Return the entry if present and digest-consistent, else None."""
        with self._index_lock:
            index = self._read_index()
        meta = index.get(object_id)
        if meta is None:
            return None
        path = self._entry_path(object_id, meta["digest"])
        if not path.is_file() or _sha256(path.read_bytes()) != meta["digest"]:
            return None
        return CacheEntry(
            object_id=object_id,
            local_path=path,
            content_digest=meta["digest"],
            fetched_at=datetime.fromisoformat(meta["fetched_at"]),
        )

    def get_or_fetch(
        self,
        object_id: str,
        fetcher: Callable[[str], bytes],
        expected_digest: str | None = None,
    ) -> CacheEntry:
        """Return the cached entry, fetching (once) on miss.

        A hit whose file no longer matches its recorded digest is evicted and
        refetched. Fetcher errors propagate as FetchFailedError with the
        cache unchanged; a fetch that disagrees with expected_digest raises
        DigestMismatchError without installing anything.
        """
        with self._lock_for(object_id):
            entry = self.lookup(object_id)
            if entry is not None:
                return entry
            self._evict_unlocked(object_id)

            try:
                data = fetcher(object_id)
            except Exception as exc:
                raise FetchFailedError(f"fetch failed for {object_id!r}: {exc}") from exc
            digest = _sha256(data)
            if expected_digest is not None and digest != expected_digest:
                raise DigestMismatchError(
                    f"{object_id!r}: fetched digest {digest[:12]}… != expected {expected_digest[:12]}…"
                )

            path = self._entry_path(object_id, digest)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".fetch-", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as handle:
                    handle.write(data)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise

            fetched_at = utc_now()
            with self._index_lock:
                index = self._read_index()
                index[object_id] = {"digest": digest, "fetched_at": fetched_at.isoformat()}
                self._write_index(index)
            return CacheEntry(object_id, path, digest, fetched_at)

    def _evict_unlocked(self, object_id: str) -> None:
        with self._index_lock:
            index = self._read_index()
            meta = index.pop(object_id, None)
            if meta is not None:
                self._write_index(index)
        if meta is not None:
            stale = self._entry_path(object_id, meta["digest"])
            if stale.is_file():
                stale.unlink()

    def evict(self, object_id: str) -> None:
        with self._lock_for(object_id):
            self._evict_unlocked(object_id)

    def object_ids(self) -> list[str]:
        with self._index_lock:
            return sorted(self._read_index())

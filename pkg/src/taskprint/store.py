"""Persistent task-record store backing the knowledge-cloud service.

One fingerprint file (TFPR format) per task under the data directory plus
a single JSON index manifest; every write goes to a temp file followed by
an atomic rename. Submissions are serialized through one lock, queries
read immutable snapshots.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .baselines import KeywordSet
from .errors import DuplicateTaskError, FormatError, ValidationError
from .fingerprint import Fingerprint
from .metametrics import SCENARIOS
from .serialization import fingerprint_from_bytes

INDEX_NAME = "index.json"
FINGERPRINT_DIR = "fingerprints"
STORE_SCHEMA_VERSION = 1


@dataclass
class TaskRecord:
    """A stored task: fingerprint, optional keywords, and training metadata."""

    task_id: str
    fingerprint: Fingerprint
    task_size: int
    keywords: KeywordSet | None = None
    scenario_metadata: dict = field(default_factory=dict)
    data_shareable: bool = False
    overlap_group: str | None = None
    created_at: str = ""

    def __post_init__(self):
        if not self.task_id:
            raise ValidationError("task_id must be non-empty")
        if self.task_size < 0:
            raise ValidationError("task_size must be non-negative")
        validate_scenario_metadata(self.scenario_metadata)


def validate_scenario_metadata(metadata: dict) -> None:
    """Metadata blobs are opaque except the architecture leaderboard."""
    if not isinstance(metadata, dict):
        raise ValidationError("scenario_metadata: must be an object keyed by scenario")
    for scenario in metadata:
        if scenario not in SCENARIOS:
            raise ValidationError(
                f"scenario_metadata.{scenario}: unknown scenario (expected one of {SCENARIOS})"
            )
    leaderboard = metadata.get("MODEL_ARCHITECTURE")
    if leaderboard is None:
        return
    if not isinstance(leaderboard, list):
        raise ValidationError("scenario_metadata.MODEL_ARCHITECTURE: must be a leaderboard array")
    for i, entry in enumerate(leaderboard):
        prefix = f"scenario_metadata.MODEL_ARCHITECTURE[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError(f"{prefix}: must be an object")
        for key in ("architecture_name", "metric", "value"):
            if key not in entry:
                raise ValidationError(f"{prefix}.{key}: missing")
        if not isinstance(entry["value"], (int, float)) or isinstance(entry["value"], bool):
            raise ValidationError(f"{prefix}.value: must be a number")


def best_architecture(record: TaskRecord) -> dict | None:
    """Leaderboard entry with the best performance, if any is stored."""
    leaderboard = record.scenario_metadata.get("MODEL_ARCHITECTURE")
    if not leaderboard:
        return None
    return max(leaderboard, key=lambda e: (e["value"], e["architecture_name"]))


def _safe_filename(task_id: str) -> str:
    slug = re.sub(r"[^A-Za-z0-9._-]", "_", task_id)[:48]
    digest = hashlib.sha1(task_id.encode("utf-8")).hexdigest()[:10]
    return f"{slug}-{digest}.tfp"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class TaskStore:
    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.fp_dir = self.data_dir / FINGERPRINT_DIR
        self.fp_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._index: dict[str, dict] = {}
        self._records: dict[str, TaskRecord] = {}
        self._fingerprint_bytes: dict[str, bytes] = {}
        self._load()

    def _index_path(self) -> Path:
        return self.data_dir / INDEX_NAME

    def _load(self):
        path = self._index_path()
        if not path.exists():
            return
        doc = json.loads(path.read_text())
        if doc.get("schema_version") != STORE_SCHEMA_VERSION:
            raise FormatError(f"unsupported store schema {doc.get('schema_version')!r}")
        for task_id, meta in doc.get("tasks", {}).items():
            fp_path = self.fp_dir / meta["file"]
            if not fp_path.exists():
                raise FormatError(f"store index lists {task_id!r} but {fp_path} is missing")
            raw = fp_path.read_bytes()
            self._index[task_id] = meta
            self._fingerprint_bytes[task_id] = raw
            self._records[task_id] = self._record_from(task_id, meta, raw)

    def _record_from(self, task_id: str, meta: dict, raw: bytes) -> TaskRecord:
        keywords = None
        if meta.get("keywords"):
            keywords = KeywordSet(
                task_id=task_id,
                keywords=frozenset(meta["keywords"]),
                task_size=meta["task_size"],
            )
        return TaskRecord(
            task_id=task_id,
            fingerprint=fingerprint_from_bytes(raw),
            task_size=meta["task_size"],
            keywords=keywords,
            scenario_metadata=meta.get("scenario_metadata", {}),
            data_shareable=meta.get("data_shareable", False),
            overlap_group=meta.get("overlap_group"),
            created_at=meta.get("created_at", ""),
        )

    def _flush_index(self):
        doc = {
            "schema_version": STORE_SCHEMA_VERSION,
            "tasks": {tid: self._index[tid] for tid in sorted(self._index)},
        }
        _atomic_write(self._index_path(), (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())

    def submit(
        self,
        task_id: str,
        fingerprint_bytes: bytes,
        task_size: int,
        keywords=None,
        scenario_metadata: dict | None = None,
        data_shareable: bool = False,
        overlap_group: str | None = None,
        overwrite: bool = False,
    ) -> str:
        """Validate and durably persist a record; returns the stored id."""
        try:
            fingerprint_from_bytes(fingerprint_bytes)
        except (FormatError, ValidationError) as e:
            raise ValidationError(f"fingerprint: {e}") from e
        meta = {
            "file": _safe_filename(task_id),
            "task_size": int(task_size),
            "keywords": sorted(str(k).lower() for k in keywords) if keywords else [],
            "scenario_metadata": scenario_metadata or {},
            "data_shareable": bool(data_shareable),
            "overlap_group": overlap_group,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        with self._lock:
            if task_id in self._index and not overwrite:
                raise DuplicateTaskError(f"task {task_id!r} already stored (pass overwrite to replace)")
            record = self._record_from(task_id, meta, fingerprint_bytes)
            _atomic_write(self.fp_dir / meta["file"], fingerprint_bytes)
            self._index[task_id] = meta
            self._fingerprint_bytes[task_id] = fingerprint_bytes
            self._records[task_id] = record
            self._flush_index()
        return task_id

    def get(self, task_id: str) -> tuple[TaskRecord, bytes]:
        try:
            return self._records[task_id], self._fingerprint_bytes[task_id]
        except KeyError:
            raise KeyError(f"no stored task {task_id!r}") from None

    def __contains__(self, task_id):
        return task_id in self._records

    def __len__(self):
        return len(self._records)

    def records(self) -> list[TaskRecord]:
        """Immutable snapshot of all stored records, sorted by id."""
        return [self._records[tid] for tid in sorted(self._records)]

    def listing(self) -> list[dict]:
        out = []
        for tid in sorted(self._index):
            meta = self._index[tid]
            out.append(
                {
                    "task_id": tid,
                    "task_size": meta["task_size"],
                    "n_features": self._records[tid].fingerprint.n_features,
                    "n_bins": self._records[tid].fingerprint.n_bins,
                    "scenarios": sorted(meta.get("scenario_metadata", {})),
                    "data_shareable": meta.get("data_shareable", False),
                    "overlap_group": meta.get("overlap_group"),
                    "created_at": meta.get("created_at", ""),
                }
            )
        return out

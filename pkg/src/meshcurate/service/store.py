"""Embedded persistent store for the labeling workflow.

Batches move OPEN -> LABELING -> VALIDATING -> CLOSED, never backward.
Annotations are append-only (resubmission adds a superseding version);
assignments carry expiring leases so abandoned tasks recycle. A single
in-process lock serializes mutations, which at desk scale also provides
the per-batch assignment exclusivity the workflow needs.
"""
from __future__ import annotations

import json
import math
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from ..labels import (
    MANIFEST_TAG_ORDER,
    AnnotationRecord,
    BinaryTagSet,
    QualityScore,
    parse_record,
    serialize_record,
    utc_now,
    validate_record,
)

__all__ = [
    "Store",
    "Batch",
    "Assignment",
    "Discrepancy",
    "ServiceError",
    "UnknownBatchError",
    "UnknownAssignmentError",
    "UnknownDiscrepancyError",
    "DuplicateBatchError",
    "DuplicateObjectError",
    "BatchNotActiveError",
    "BatchNotReadyError",
    "StaleAssignmentError",
    "SchemaViolationError",
    "UnresolvedDiscrepanciesError",
    "BadResolutionError",
]

STATE_OPEN = "OPEN"
STATE_LABELING = "LABELING"
STATE_VALIDATING = "VALIDATING"
STATE_CLOSED = "CLOSED"

ROLE_PRIMARY = "PRIMARY"
ROLE_VALIDATOR = "VALIDATOR"

DISCREPANCY_FIELDS = ("score",) + MANIFEST_TAG_ORDER

DEFAULT_LEASE_MINUTES = 30.0


class ServiceError(Exception):
    pass


class UnknownBatchError(ServiceError):
    pass


class UnknownAssignmentError(ServiceError):
    pass


class UnknownDiscrepancyError(ServiceError):
    pass


class DuplicateBatchError(ServiceError):
    pass


class DuplicateObjectError(ServiceError):
    pass


class BatchNotActiveError(ServiceError):
    pass


class BatchNotReadyError(ServiceError):
    pass


class StaleAssignmentError(ServiceError):
    pass


class SchemaViolationError(ServiceError):
    pass


class UnresolvedDiscrepanciesError(ServiceError):
    def __init__(self, object_ids: list[str]):
        self.object_ids = object_ids
        super().__init__(f"unresolved discrepancies for objects: {', '.join(object_ids)}")


class BadResolutionError(ServiceError):
    pass


@dataclass(frozen=True)
class Batch:
    batch_id: str
    state: str
    created_at: str
    validation_fraction: float
    n_objects: int
    n_labeled: int
    n_validated: int


@dataclass(frozen=True)
class Assignment:
    assignment_id: int
    batch_id: str
    object_id: str
    annotator_id: str
    role: str
    issued_at: str
    expires_at: str
    completed: bool


@dataclass(frozen=True)
class Discrepancy:
    discrepancy_id: int
    batch_id: str
    object_id: str
    field: str
    primary_value: object
    validator_value: object
    resolved: bool
    resolution: Optional[object]


_SCHEMA = """
CREATE TABLE IF NOT EXISTS batches (
    batch_id TEXT PRIMARY KEY,
    state TEXT NOT NULL,
    created_at TEXT NOT NULL,
    validation_fraction REAL NOT NULL,
    discrepancies_computed INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS batch_objects (
    batch_id TEXT NOT NULL,
    object_id TEXT NOT NULL,
    position INTEGER NOT NULL,
    in_validation_sample INTEGER NOT NULL DEFAULT 0,
    PRIMARY KEY (batch_id, object_id)
);
CREATE TABLE IF NOT EXISTS assignments (
    assignment_id INTEGER PRIMARY KEY AUTOINCREMENT,
    batch_id TEXT NOT NULL,
    object_id TEXT NOT NULL,
    annotator_id TEXT NOT NULL,
    role TEXT NOT NULL,
    issued_at TEXT NOT NULL,
    expires_at TEXT NOT NULL,
    completed INTEGER NOT NULL DEFAULT 0,
    superseded INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS annotations (
    annotation_id INTEGER PRIMARY KEY AUTOINCREMENT,
    batch_id TEXT NOT NULL,
    object_id TEXT NOT NULL,
    role TEXT NOT NULL,
    version INTEGER NOT NULL,
    record_json TEXT NOT NULL,
    submitted_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS discrepancies (
    discrepancy_id INTEGER PRIMARY KEY AUTOINCREMENT,
    batch_id TEXT NOT NULL,
    object_id TEXT NOT NULL,
    field TEXT NOT NULL,
    primary_value TEXT NOT NULL,
    validator_value TEXT NOT NULL,
    resolved INTEGER NOT NULL DEFAULT 0,
    resolution TEXT
);
"""


class Store:
    def __init__(
        self,
        path: Path | str = ":memory:",
        clock: Callable[[], datetime] = utc_now,
        lease_minutes: float = DEFAULT_LEASE_MINUTES,
    ):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._conn.executescript(_SCHEMA)
        self._conn.commit()
        self._lock = threading.RLock()
        self._clock = clock
        self.lease_minutes = lease_minutes

    def close(self) -> None:
        self._conn.close()

    # -- helpers ------------------------------------------------------------

    def _now(self) -> datetime:
        return self._clock()

    def _timestamp(self) -> str:
        return self._now().isoformat()

    def _batch_row(self, batch_id: str) -> sqlite3.Row:
        row = self._conn.execute("SELECT * FROM batches WHERE batch_id = ?", (batch_id,)).fetchone()
        if row is None:
            raise UnknownBatchError(f"unknown batch {batch_id!r}")
        return row

    def _object_ids(self, batch_id: str, validation_only: bool = False) -> list[str]:
        sql = "SELECT object_id FROM batch_objects WHERE batch_id = ?"
        if validation_only:
            sql += " AND in_validation_sample = 1"
        sql += " ORDER BY position"
        return [r["object_id"] for r in self._conn.execute(sql, (batch_id,))]

    def _completed_objects(self, batch_id: str, role: str) -> set[str]:
        rows = self._conn.execute(
            "SELECT DISTINCT object_id FROM annotations WHERE batch_id = ? AND role = ?",
            (batch_id, role),
        )
        return {r["object_id"] for r in rows}

    def _latest_record(self, batch_id: str, object_id: str, role: str) -> Optional[AnnotationRecord]:
        row = self._conn.execute(
            "SELECT record_json FROM annotations WHERE batch_id = ? AND object_id = ? AND role = ?"
            " ORDER BY version DESC LIMIT 1",
            (batch_id, object_id, role),
        ).fetchone()
        if row is None:
            return None
        return parse_record(row["record_json"])[0]

    def _primary_annotator(self, batch_id: str, object_id: str) -> Optional[str]:
        record = self._latest_record(batch_id, object_id, ROLE_PRIMARY)
        return record.annotator_id if record else None

    def _active_assignment_rows(self, batch_id: str, role: str) -> list[sqlite3.Row]:
        now = self._timestamp()
        return self._conn.execute(
            "SELECT * FROM assignments WHERE batch_id = ? AND role = ? AND completed = 0"
            " AND superseded = 0 AND expires_at > ?",
            (batch_id, role, now),
        ).fetchall()

    @staticmethod
    def _to_assignment(row: sqlite3.Row) -> Assignment:
        return Assignment(
            assignment_id=row["assignment_id"],
            batch_id=row["batch_id"],
            object_id=row["object_id"],
            annotator_id=row["annotator_id"],
            role=row["role"],
            issued_at=row["issued_at"],
            expires_at=row["expires_at"],
            completed=bool(row["completed"]),
        )

    # -- batch lifecycle ----------------------------------------------------

    def create_batch(
        self,
        object_ids: list[str],
        validation_fraction: float = 0.1,
        batch_id: Optional[str] = None,
    ) -> Batch:
        if not object_ids:
            raise ServiceError("batch needs at least one object")
        if len(set(object_ids)) != len(object_ids):
            raise DuplicateObjectError("object ids must be unique within a batch")
        if not 0.0 <= validation_fraction <= 1.0:
            raise ServiceError(f"validation_fraction must be in [0, 1], got {validation_fraction}")
        with self._lock:
            if batch_id is None:
                count = self._conn.execute("SELECT COUNT(*) AS n FROM batches").fetchone()["n"]
                batch_id = f"batch-{count + 1:04d}"
            exists = self._conn.execute(
                "SELECT 1 FROM batches WHERE batch_id = ?", (batch_id,)
            ).fetchone()
            if exists:
                raise DuplicateBatchError(f"batch {batch_id!r} already exists")
            self._conn.execute(
                "INSERT INTO batches (batch_id, state, created_at, validation_fraction) VALUES (?, ?, ?, ?)",
                (batch_id, STATE_OPEN, self._timestamp(), validation_fraction),
            )
            self._conn.executemany(
                "INSERT INTO batch_objects (batch_id, object_id, position) VALUES (?, ?, ?)",
                [(batch_id, oid, pos) for pos, oid in enumerate(object_ids)],
            )
            self._conn.commit()
            return self.get_batch(batch_id)

    def get_batch(self, batch_id: str) -> Batch:
        with self._lock:
            row = self._batch_row(batch_id)
            objects = self._object_ids(batch_id)
            labeled = self._completed_objects(batch_id, ROLE_PRIMARY)
            validated = self._completed_objects(batch_id, ROLE_VALIDATOR)
            return Batch(
                batch_id=batch_id,
                state=row["state"],
                created_at=row["created_at"],
                validation_fraction=row["validation_fraction"],
                n_objects=len(objects),
                n_labeled=len([o for o in objects if o in labeled]),
                n_validated=len(validated),
            )

    def _set_state(self, batch_id: str, state: str) -> None:
        self._conn.execute("UPDATE batches SET state = ? WHERE batch_id = ?", (state, batch_id))

    def _labeling_complete(self, batch_id: str) -> bool:
        objects = set(self._object_ids(batch_id))
        return objects <= self._completed_objects(batch_id, ROLE_PRIMARY)

    def _validation_complete(self, batch_id: str) -> bool:
        sampled = set(self._object_ids(batch_id, validation_only=True))
        return sampled <= self._completed_objects(batch_id, ROLE_VALIDATOR)

    def _advance_after_submission(self, batch_id: str) -> None:
        """Forward-only auto transitions after an annotation lands."""
        row = self._batch_row(batch_id)
        state = row["state"]
        if state == STATE_LABELING and self._labeling_complete(batch_id):
            if row["validation_fraction"] == 0.0:
                self._set_state(batch_id, STATE_CLOSED)
        elif state == STATE_VALIDATING and self._validation_complete(batch_id):
            self._compute_discrepancies(batch_id)
            if not self._unresolved_objects(batch_id):
                self._set_state(batch_id, STATE_CLOSED)

    # -- task issuance --------------------------------------------------------

    def next_task(self, annotator_id: str, batch_id: str) -> Optional[Assignment]:
        """Issue (or re-issue) the lowest-ordered open task for this annotator.

        At most one active assignment exists per (object, role); an annotator
        holding an incomplete assignment gets the same one back.
        """
        if not annotator_id:
            raise ServiceError("annotator_id is required")
        with self._lock:
            row = self._batch_row(batch_id)
            state = row["state"]
            if state == STATE_OPEN:
                self._set_state(batch_id, STATE_LABELING)
                self._conn.commit()
                state = STATE_LABELING
            if state not in (STATE_LABELING, STATE_VALIDATING):
                raise BatchNotActiveError(f"batch {batch_id!r} is {state}")
            role = ROLE_PRIMARY if state == STATE_LABELING else ROLE_VALIDATOR

            active = self._active_assignment_rows(batch_id, role)
            for existing in active:
                if existing["annotator_id"] == annotator_id:
                    return self._to_assignment(existing)
            taken = {existing["object_id"] for existing in active}

            if role == ROLE_PRIMARY:
                pool = self._object_ids(batch_id)
                done = self._completed_objects(batch_id, ROLE_PRIMARY)
                candidates = [o for o in pool if o not in done and o not in taken]
            else:
                pool = self._object_ids(batch_id, validation_only=True)
                labeled = self._completed_objects(batch_id, ROLE_PRIMARY)
                done = self._completed_objects(batch_id, ROLE_VALIDATOR)
                candidates = [
                    o
                    for o in pool
                    if o in labeled
                    and o not in done
                    and o not in taken
                    and self._primary_annotator(batch_id, o) != annotator_id
                ]

            if not candidates:
                self._advance_after_submission(batch_id)
                self._conn.commit()
                return None

            object_id = candidates[0]
            issued = self._now()
            expires = issued + timedelta(minutes=self.lease_minutes)
            cursor = self._conn.execute(
                "INSERT INTO assignments (batch_id, object_id, annotator_id, role, issued_at, expires_at)"
                " VALUES (?, ?, ?, ?, ?, ?)",
                (batch_id, object_id, annotator_id, role, issued.isoformat(), expires.isoformat()),
            )
            self._conn.commit()
            row = self._conn.execute(
                "SELECT * FROM assignments WHERE assignment_id = ?", (cursor.lastrowid,)
            ).fetchone()
            return self._to_assignment(row)

    def get_assignment(self, assignment_id: int) -> Assignment:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM assignments WHERE assignment_id = ?", (assignment_id,)
            ).fetchone()
            if row is None:
                raise UnknownAssignmentError(f"unknown assignment {assignment_id}")
            return self._to_assignment(row)

    # -- annotation submission ------------------------------------------------

    def submit_annotation(self, assignment_id: int, record: AnnotationRecord) -> int:
        """Append the record as a new version and complete the assignment.

        Returns the stored version number. Resubmission on a completed
        assignment supersedes the earlier version (history is kept).
        """
        violations = validate_record(record)
        if violations:
            raise SchemaViolationError("; ".join(f"{v.field}: {v.rule}" for v in violations))
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM assignments WHERE assignment_id = ?", (assignment_id,)
            ).fetchone()
            if row is None:
                raise UnknownAssignmentError(f"unknown assignment {assignment_id}")
            if row["superseded"]:
                raise StaleAssignmentError(f"assignment {assignment_id} was superseded")
            if record.object_id != row["object_id"]:
                raise SchemaViolationError(
                    f"record is for {record.object_id!r} but assignment covers {row['object_id']!r}"
                )
            # An expired lease whose object has been handed to someone else is stale.
            if not row["completed"] and row["expires_at"] <= self._timestamp():
                replacement = self._conn.execute(
                    "SELECT 1 FROM assignments WHERE batch_id = ? AND object_id = ? AND role = ?"
                    " AND assignment_id != ? AND superseded = 0 AND (completed = 1 OR expires_at > ?)",
                    (row["batch_id"], row["object_id"], row["role"], assignment_id, self._timestamp()),
                ).fetchone()
                if replacement is not None:
                    self._conn.execute(
                        "UPDATE assignments SET superseded = 1 WHERE assignment_id = ?",
                        (assignment_id,),
                    )
                    self._conn.commit()
                    raise StaleAssignmentError(f"assignment {assignment_id} lease expired and was recycled")

            version_row = self._conn.execute(
                "SELECT MAX(version) AS v FROM annotations WHERE batch_id = ? AND object_id = ? AND role = ?",
                (row["batch_id"], row["object_id"], row["role"]),
            ).fetchone()
            version = (version_row["v"] or 0) + 1
            self._conn.execute(
                "INSERT INTO annotations (batch_id, object_id, role, version, record_json, submitted_at)"
                " VALUES (?, ?, ?, ?, ?, ?)",
                (
                    row["batch_id"],
                    row["object_id"],
                    row["role"],
                    version,
                    serialize_record(record),
                    self._timestamp(),
                ),
            )
            self._conn.execute(
                "UPDATE assignments SET completed = 1 WHERE assignment_id = ?", (assignment_id,)
            )
            self._advance_after_submission(row["batch_id"])
            self._conn.commit()
            return version

    def latest_annotation(self, batch_id: str, object_id: str, role: str = ROLE_PRIMARY):
        with self._lock:
            return self._latest_record(batch_id, object_id, role)

    # -- validation -----------------------------------------------------------

    def sample_for_validation(self, batch_id: str, seed: int) -> list[str]:
        """Choose ceil(fraction * n) objects for re-annotation, seeded.

        Moves the batch to VALIDATING and returns the sampled object ids in
        batch order.
        """
        with self._lock:
            row = self._batch_row(batch_id)
            if row["state"] != STATE_LABELING or not self._labeling_complete(batch_id):
                raise BatchNotReadyError(
                    f"batch {batch_id!r} must be fully labeled before validation sampling"
                )
            objects = self._object_ids(batch_id)
            k = math.ceil(row["validation_fraction"] * len(objects))
            rng = np.random.default_rng(seed)
            chosen_index = sorted(rng.choice(len(objects), size=k, replace=False).tolist())
            chosen = [objects[i] for i in chosen_index]
            self._conn.executemany(
                "UPDATE batch_objects SET in_validation_sample = 1 WHERE batch_id = ? AND object_id = ?",
                [(batch_id, oid) for oid in chosen],
            )
            self._set_state(batch_id, STATE_VALIDATING)
            self._conn.commit()
            return chosen

    # -- discrepancies ----------------------------------------------------------

    @staticmethod
    def _field_value(record: AnnotationRecord, field: str):
        if field == "score":
            return int(record.score)
        return record.tags.get(field)

    def _compute_discrepancies(self, batch_id: str) -> None:
        row = self._batch_row(batch_id)
        if row["discrepancies_computed"]:
            return
        for object_id in self._object_ids(batch_id, validation_only=True):
            primary = self._latest_record(batch_id, object_id, ROLE_PRIMARY)
            validator = self._latest_record(batch_id, object_id, ROLE_VALIDATOR)
            if primary is None or validator is None:
                continue
            for field in DISCREPANCY_FIELDS:
                left = self._field_value(primary, field)
                right = self._field_value(validator, field)
                if left != right:
                    self._conn.execute(
                        "INSERT INTO discrepancies (batch_id, object_id, field, primary_value, validator_value)"
                        " VALUES (?, ?, ?, ?, ?)",
                        (batch_id, object_id, field, json.dumps(left), json.dumps(right)),
                    )
        self._conn.execute(
            "UPDATE batches SET discrepancies_computed = 1 WHERE batch_id = ?", (batch_id,)
        )

    def _unresolved_objects(self, batch_id: str) -> list[str]:
        rows = self._conn.execute(
            "SELECT DISTINCT object_id FROM discrepancies WHERE batch_id = ? AND resolved = 0"
            " ORDER BY object_id",
            (batch_id,),
        )
        return [r["object_id"] for r in rows]

    def discrepancy_report(self, batch_id: str) -> list[Discrepancy]:
        with self._lock:
            row = self._batch_row(batch_id)
            if row["state"] not in (STATE_VALIDATING, STATE_CLOSED):
                raise BatchNotReadyError(f"batch {batch_id!r} has no validation pass yet")
            if row["state"] == STATE_VALIDATING and not self._validation_complete(batch_id):
                raise BatchNotReadyError(f"batch {batch_id!r} validation is still in progress")
            self._compute_discrepancies(batch_id)
            self._conn.commit()
            rows = self._conn.execute(
                "SELECT * FROM discrepancies WHERE batch_id = ? ORDER BY object_id, field",
                (batch_id,),
            ).fetchall()
            return [
                Discrepancy(
                    discrepancy_id=r["discrepancy_id"],
                    batch_id=r["batch_id"],
                    object_id=r["object_id"],
                    field=r["field"],
                    primary_value=json.loads(r["primary_value"]),
                    validator_value=json.loads(r["validator_value"]),
                    resolved=bool(r["resolved"]),
                    resolution=json.loads(r["resolution"]) if r["resolution"] is not None else None,
                )
                for r in rows
            ]

    def resolve_discrepancy(self, discrepancy_id: int, resolution) -> Discrepancy:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM discrepancies WHERE discrepancy_id = ?", (discrepancy_id,)
            ).fetchone()
            if row is None:
                raise UnknownDiscrepancyError(f"unknown discrepancy {discrepancy_id}")
            if row["field"] == "score":
                if not isinstance(resolution, int) or isinstance(resolution, bool) or not 0 <= resolution <= 3:
                    raise BadResolutionError(f"score resolution must be an integer 0..3, got {resolution!r}")
            elif not isinstance(resolution, bool):
                raise BadResolutionError(f"tag resolution must be a boolean, got {resolution!r}")
            self._conn.execute(
                "UPDATE discrepancies SET resolved = 1, resolution = ? WHERE discrepancy_id = ?",
                (json.dumps(resolution), discrepancy_id),
            )
            batch_id = row["batch_id"]
            batch = self._batch_row(batch_id)
            if (
                batch["state"] == STATE_VALIDATING
                and self._validation_complete(batch_id)
                and not self._unresolved_objects(batch_id)
            ):
                self._set_state(batch_id, STATE_CLOSED)
            self._conn.commit()
            rows = self._conn.execute(
                "SELECT * FROM discrepancies WHERE discrepancy_id = ?", (discrepancy_id,)
            ).fetchone()
            return Discrepancy(
                discrepancy_id=rows["discrepancy_id"],
                batch_id=rows["batch_id"],
                object_id=rows["object_id"],
                field=rows["field"],
                primary_value=json.loads(rows["primary_value"]),
                validator_value=json.loads(rows["validator_value"]),
                resolved=True,
                resolution=resolution,
            )

    # -- export -------------------------------------------------------------

    def _resolved_record(self, batch_id: str, object_id: str) -> Optional[AnnotationRecord]:
        record = self._latest_record(batch_id, object_id, ROLE_PRIMARY)
        if record is None:
            return None
        rows = self._conn.execute(
            "SELECT field, resolution FROM discrepancies WHERE batch_id = ? AND object_id = ?"
            " AND resolved = 1",
            (batch_id, object_id),
        ).fetchall()
        tags = record.tags.as_dict()
        score = record.score
        for row in rows:
            value = json.loads(row["resolution"])
            if row["field"] == "score":
                score = QualityScore(value)
            else:
                tags[row["field"]] = bool(value)
        return record.with_score(score).with_tags(BinaryTagSet.from_dict(tags))

    def export_manifest(self, batch_ids: list[str], resolved_only: bool = True) -> Iterator[str]:
        """Latest resolved annotation per object as manifest lines.

        Deterministic: objects ordered by object_id. With resolved_only,
        every batch must be CLOSED and carry no unresolved discrepancies.
        """
        with self._lock:
            if resolved_only:
                blocking: list[str] = []
                not_closed: list[tuple[str, str]] = []
                for batch_id in batch_ids:
                    row = self._batch_row(batch_id)
                    blocking.extend(self._unresolved_objects(batch_id))
                    if row["state"] != STATE_CLOSED:
                        not_closed.append((batch_id, row["state"]))
                if blocking:
                    raise UnresolvedDiscrepanciesError(sorted(set(blocking)))
                if not_closed:
                    batch_id, state = not_closed[0]
                    raise BatchNotReadyError(f"batch {batch_id!r} is {state}, export needs CLOSED")
            else:
                for batch_id in batch_ids:
                    self._batch_row(batch_id)

            seen: dict[str, AnnotationRecord] = {}
            for batch_id in batch_ids:
                for object_id in self._object_ids(batch_id):
                    record = self._resolved_record(batch_id, object_id)
                    if record is not None:
                        seen[object_id] = record
            lines = [serialize_record(seen[oid]) for oid in sorted(seen)]
        return iter(lines)

    def annotation_history(self, batch_id: str, object_id: str, role: str) -> list[AnnotationRecord]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT record_json FROM annotations WHERE batch_id = ? AND object_id = ? AND role = ?"
                " ORDER BY version",
                (batch_id, object_id, role),
            ).fetchall()
            return [parse_record(r["record_json"])[0] for r in rows]

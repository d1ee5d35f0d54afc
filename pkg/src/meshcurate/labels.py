"""Label schema for 3D asset quality annotation.

Defines the 4-level quality score, the five binary traits, annotation
records, the guided scoring decision tree, and the line-delimited manifest
format used as the interchange format between every other module.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import IntEnum
from typing import Iterable, Iterator, Mapping, Optional, TextIO

__all__ = [
    "QualityScore",
    "BinaryTagSet",
    "AnnotationRecord",
    "ObjectMetadata",
    "RubricAnswers",
    "Violation",
    "ManifestParseError",
    "MANIFEST_TAG_ORDER",
    "TAG_HEAD_ORDER",
    "ALL_HEADS",
    "score_from_decision_tree",
    "validate_record",
    "serialize_record",
    "parse_record",
    "read_manifest",
    "write_manifest",
    "utc_now",
]

# Tag field order used in the manifest `tags` object.
MANIFEST_TAG_ORDER = (
    "is_transparent",
    "is_scene",
    "is_single_color",
    "is_multi_object",
    "is_figure",
)

# Tag order used by the annotator network's tag logit vector and metric tables.
TAG_HEAD_ORDER = (
    "is_multi_object",
    "is_scene",
    "is_figure",
    "is_transparent",
    "is_single_color",
)

ALL_HEADS = ("score",) + TAG_HEAD_ORDER

SOURCE_HUMAN = "human"
SOURCE_MODEL = "model"


class QualityScore(IntEnum):
    """Usefulness of a 3D asset for ML training, on a 4-level ordinal scale."""

    LOW = 0
    MEDIUM = 1
    HIGH = 2
    SUPERIOR = 3

    @classmethod
    def from_name(cls, name: str) -> "QualityScore":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown quality score name: {name!r}") from None

    @classmethod
    def from_code(cls, code: int) -> "QualityScore":
        try:
            return cls(code)
        except ValueError:
            raise ValueError(f"quality score code must be 0..3, got {code!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class BinaryTagSet:
    """The five independent binary traits. All flags are always present."""

    is_transparent: bool = False
    is_scene: bool = False
    is_single_color: bool = False
    is_multi_object: bool = False
    is_figure: bool = False

    def as_dict(self) -> dict[str, bool]:
        return {name: getattr(self, name) for name in MANIFEST_TAG_ORDER}

    def get(self, name: str) -> bool:
        if name not in MANIFEST_TAG_ORDER:
            raise KeyError(f"unknown tag: {name!r}")
        return getattr(self, name)

    @classmethod
    def from_dict(cls, values: Mapping[str, bool]) -> "BinaryTagSet":
        return cls(**{name: bool(values[name]) for name in MANIFEST_TAG_ORDER})


@dataclass(frozen=True)
class ObjectMetadata:
    """Per-object platform and mesh statistics fed to the annotator."""

    vertex_count: int = 0
    edge_count: int = 0
    view_count: int = 0
    like_count: int = 0

    def __post_init__(self) -> None:
        for name in ("vertex_count", "edge_count", "view_count", "like_count"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {value!r}")

    def as_vector(self) -> tuple[int, int, int, int]:
        return (self.vertex_count, self.edge_count, self.view_count, self.like_count)


@dataclass(frozen=True)
class RubricAnswers:
    """Answers an annotator gives while walking the guided scoring flow.

    `professional` is only consulted when the object is both identifiable
    and textured; on other paths its value is ignored.
    """

    identifiable: bool
    textured: bool = False
    professional: bool = False


@dataclass(frozen=True)
class AnnotationRecord:
    """One object's quality score, tag set, and provenance."""

    object_id: str
    score: QualityScore
    tags: BinaryTagSet
    source: str  # "human" | "model"
    annotator_id: Optional[str] = None
    confidences: Optional[dict[str, float]] = None
    created_at: Optional[datetime] = None
    batch_id: Optional[str] = None
    # Unknown manifest fields, preserved verbatim across a parse/serialize
    # round trip (insertion order kept).
    extras: dict[str, object] = field(default_factory=dict)

    def with_score(self, score: QualityScore) -> "AnnotationRecord":
        return replace(self, score=score)

    def with_tags(self, tags: BinaryTagSet) -> "AnnotationRecord":
        return replace(self, tags=tags)


@dataclass(frozen=True)
class Violation:
    """A single invariant breach found by `validate_record`."""

    field: str
    rule: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - convenience only
        return f"{self.field}: {self.rule} ({self.message})"


class ManifestParseError(ValueError):
    """Raised on a malformed manifest line; carries line and field position."""

    def __init__(self, message: str, line_no: int | None = None, field: str | None = None):
        self.line_no = line_no
        self.field = field
        where = []
        if line_no is not None:
            where.append(f"line {line_no}")
        if field is not None:
            where.append(f"field {field!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


def utc_now() -> datetime:
    """Current UTC time truncated to whole seconds (manifest precision)."""
    return datetime.now(timezone.utc).replace(microsecond=0)


def score_from_decision_tree(answers: RubricAnswers) -> QualityScore:
    """Map guided-flow answers to a quality score.

    Not identifiable -> LOW; identifiable but untextured -> MEDIUM;
    identifiable, textured, and professionally finished -> SUPERIOR;
    otherwise HIGH. Pure and total over all 8 answer combinations.
    """
    if not answers.identifiable:
        return QualityScore.LOW
    if not answers.textured:
        return QualityScore.MEDIUM
    if answers.professional:
        return QualityScore.SUPERIOR
    return QualityScore.HIGH


def validate_record(record: AnnotationRecord) -> list[Violation]:
    """Check every AnnotationRecord invariant. Never raises."""
    violations: list[Violation] = []
    if not isinstance(record.object_id, str) or not record.object_id:
        violations.append(Violation("object_id", "empty-object-id", "object_id must be a non-empty string"))
    if record.source not in (SOURCE_HUMAN, SOURCE_MODEL):
        violations.append(
            Violation("source", "unknown-source", f"source must be 'human' or 'model', got {record.source!r}")
        )
    if not isinstance(record.score, QualityScore):
        violations.append(Violation("score", "invalid-score", f"score must be a QualityScore, got {record.score!r}"))
    if not isinstance(record.tags, BinaryTagSet):
        violations.append(Violation("tags", "invalid-tags", "tags must be a BinaryTagSet"))

    if record.source == SOURCE_MODEL:
        conf = record.confidences
        if conf is None or set(conf) != set(ALL_HEADS):
            violations.append(
                Violation(
                    "confidences",
                    "missing-confidences",
                    "model records must carry a confidence for all 6 heads",
                )
            )
    elif record.source == SOURCE_HUMAN and record.confidences is not None:
        violations.append(
            Violation("confidences", "unexpected-confidences", "human records must not carry confidences")
        )

    if record.confidences is not None:
        for head, value in record.confidences.items():
            if not isinstance(value, (int, float)) or not (0.0 <= float(value) <= 1.0):
                violations.append(
                    Violation(
                        "confidences",
                        "confidence-out-of-range",
                        f"confidence for {head!r} must be in [0, 1], got {value!r}",
                    )
                )
    return violations


_TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


def _format_timestamp(moment: datetime) -> str:
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).strftime(_TIMESTAMP_FORMAT)


def _parse_timestamp(text: str, line_no: int | None) -> datetime:
    for fmt in (_TIMESTAMP_FORMAT, "%Y-%m-%dT%H:%M:%S%z"):
        try:
            parsed = datetime.strptime(text, fmt)
        except ValueError:
            continue
        if parsed.tzinfo is None:
            parsed = parsed.replace(tzinfo=timezone.utc)
        return parsed.astimezone(timezone.utc)
    raise ManifestParseError(f"bad timestamp {text!r}", line_no=line_no, field="created_at")


_KNOWN_FIELDS = (
    "object_id",
    "score",
    "tags",
    "source",
    "annotator_id",
    "confidences",
    "created_at",
    "batch_id",
)


def serialize_record(record: AnnotationRecord) -> str:
    """Serialize a record to one canonical manifest line (no newline).

    Fields appear in a fixed order; unknown extras follow in their original
    order, so parse(serialize(r)) is byte-stable. Rejects records that
    `validate_record` flags.
    """
    violations = validate_record(record)
    if violations:
        rules = ", ".join(v.rule for v in violations)
        raise ValueError(f"cannot serialize invalid record ({rules})")
    payload: dict[str, object] = {
        "object_id": record.object_id,
        "score": int(record.score),
        "tags": {name: record.tags.get(name) for name in MANIFEST_TAG_ORDER},
        "source": record.source,
        "annotator_id": record.annotator_id,
        "confidences": record.confidences,
        "created_at": _format_timestamp(record.created_at) if record.created_at else None,
        "batch_id": record.batch_id,
    }
    for key, value in record.extras.items():
        if key not in _KNOWN_FIELDS:
            payload[key] = value
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def parse_record(line: str, line_no: int | None = None) -> tuple[AnnotationRecord, list[str]]:
    """Parse one manifest line.

    Returns the record plus a list of warnings (one per unknown field, which
    is preserved in `record.extras`). Raises ManifestParseError naming the
    offending field on malformed input.
    """
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"not valid JSON: {exc.msg}", line_no=line_no) from exc
    if not isinstance(raw, dict):
        raise ManifestParseError("manifest line must be a JSON object", line_no=line_no)

    for name in ("object_id", "score", "tags", "source"):
        if name not in raw:
            raise ManifestParseError("missing required field", line_no=line_no, field=name)

    object_id = raw["object_id"]
    if not isinstance(object_id, str) or not object_id:
        raise ManifestParseError("object_id must be a non-empty string", line_no=line_no, field="object_id")

    score_raw = raw["score"]
    if not isinstance(score_raw, int) or isinstance(score_raw, bool) or not 0 <= score_raw <= 3:
        raise ManifestParseError(f"score must be an integer 0..3, got {score_raw!r}", line_no=line_no, field="score")
    score = QualityScore(score_raw)

    tags_raw = raw["tags"]
    if not isinstance(tags_raw, dict):
        raise ManifestParseError("tags must be an object", line_no=line_no, field="tags")
    missing = [name for name in MANIFEST_TAG_ORDER if name not in tags_raw]
    if missing:
        raise ManifestParseError("missing required field", line_no=line_no, field=f"tags.{missing[0]}")
    for name in MANIFEST_TAG_ORDER:
        if not isinstance(tags_raw[name], bool):
            raise ManifestParseError("tag values must be booleans", line_no=line_no, field=f"tags.{name}")
    tags = BinaryTagSet.from_dict(tags_raw)

    source = raw["source"]
    if source not in (SOURCE_HUMAN, SOURCE_MODEL):
        raise ManifestParseError(
            f"source must be 'human' or 'model', got {source!r}", line_no=line_no, field="source"
        )

    annotator_id = raw.get("annotator_id")
    if annotator_id is not None and not isinstance(annotator_id, str):
        raise ManifestParseError("annotator_id must be a string or null", line_no=line_no, field="annotator_id")

    confidences = raw.get("confidences")
    if confidences is not None:
        if not isinstance(confidences, dict):
            raise ManifestParseError("confidences must be an object or null", line_no=line_no, field="confidences")
        confidences = {str(k): float(v) for k, v in confidences.items()}

    created_raw = raw.get("created_at")
    created_at = _parse_timestamp(created_raw, line_no) if created_raw is not None else None

    batch_id = raw.get("batch_id")
    if batch_id is not None and not isinstance(batch_id, str):
        raise ManifestParseError("batch_id must be a string or null", line_no=line_no, field="batch_id")

    extras = {k: v for k, v in raw.items() if k not in _KNOWN_FIELDS}
    warnings = [f"unknown field {k!r} preserved" for k in extras]

    record = AnnotationRecord(
        object_id=object_id,
        score=score,
        tags=tags,
        source=source,
        annotator_id=annotator_id,
        confidences=confidences,
        created_at=created_at,
        batch_id=batch_id,
        extras=extras,
    )
    return record, warnings


def read_manifest(
    lines: Iterable[str],
    on_error: str = "strict",
    error_sink: Optional[list[tuple[int, str]]] = None,
) -> Iterator[AnnotationRecord]:
    """Stream records from manifest lines.

    on_error="strict" re-raises the first ManifestParseError;
    on_error="skip" records (line_no, message) into error_sink and continues.
    Blank lines are ignored.
    """
    if on_error not in ("strict", "skip"):
        raise ValueError("on_error must be 'strict' or 'skip'")
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record, _ = parse_record(line, line_no=line_no)
        except ManifestParseError as exc:
            if on_error == "strict":
                raise
            if error_sink is not None:
                error_sink.append((line_no, str(exc)))
            continue
        yield record


def write_manifest(records: Iterable[AnnotationRecord], stream: TextIO) -> int:
    """Write records as manifest lines; returns the number written."""
    count = 0
    for record in records:
        stream.write(serialize_record(record))
        stream.write("\n")
        count += 1
    return count

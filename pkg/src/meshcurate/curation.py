"""Declarative manifest filtering and tag/score distribution statistics.

A FilterSpec is a conjunction of clauses over score, tags, source, and
model confidence; compiled to a plain predicate it drives streaming subset
construction of curated training sets.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

from .labels import (
    MANIFEST_TAG_ORDER,
    SOURCE_HUMAN,
    SOURCE_MODEL,
    AnnotationRecord,
    QualityScore,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "FilterSpec",
    "FilterSummary",
    "DistributionTable",
    "CurationError",
    "InvalidSpecError",
    "compile_filter",
    "apply_filter",
    "tag_distribution",
    "load_filter_spec",
    "training_set_b_spec",
    "superior_subset_spec",
]


class CurationError(ValueError):
    pass


class InvalidSpecError(CurationError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    """Conjunctive predicate over annotation records. Unset clauses pass."""

    min_score: Optional[QualityScore] = None
    max_score: Optional[QualityScore] = None
    require_tags: dict[str, bool] = field(default_factory=dict)
    source_allow: frozenset[str] = frozenset({SOURCE_HUMAN, SOURCE_MODEL})
    min_confidence: Optional[float] = None


def training_set_b_spec() -> FilterSpec:
    """High-or-superior quality, excluding monochromatic, scene, and
    transparent models."""
    return FilterSpec(
        min_score=QualityScore.HIGH,
        require_tags={"is_single_color": False, "is_scene": False, "is_transparent": False},
    )


def superior_subset_spec() -> FilterSpec:
    """Superior-only variant of the curated subset."""
    return FilterSpec(
        min_score=QualityScore.SUPERIOR,
        require_tags={"is_single_color": False, "is_scene": False, "is_transparent": False},
    )


def compile_filter(spec: FilterSpec) -> Callable[[AnnotationRecord], bool]:
    """Compile the spec into a pure boolean predicate."""
    if spec.min_score is not None and spec.max_score is not None and spec.min_score > spec.max_score:
        raise InvalidSpecError(f"min_score {spec.min_score.label} > max_score {spec.max_score.label}")
    for tag in spec.require_tags:
        if tag not in MANIFEST_TAG_ORDER:
            raise InvalidSpecError(f"unknown tag in require_tags: {tag!r}")
    unknown_sources = set(spec.source_allow) - {SOURCE_HUMAN, SOURCE_MODEL}
    if unknown_sources:
        raise InvalidSpecError(f"unknown sources in source_allow: {sorted(unknown_sources)}")
    if spec.min_confidence is not None and not 0.0 <= spec.min_confidence <= 1.0:
        raise InvalidSpecError(f"min_confidence must be in [0, 1], got {spec.min_confidence}")

    min_score = spec.min_score
    max_score = spec.max_score
    require_tags = dict(spec.require_tags)
    source_allow = frozenset(spec.source_allow)
    min_confidence = spec.min_confidence

    def predicate(record: AnnotationRecord) -> bool:
        if min_score is not None and record.score < min_score:
            return False
        if max_score is not None and record.score > max_score:
            return False
        for tag, wanted in require_tags.items():
            if record.tags.get(tag) != wanted:
                return False
        if record.source not in source_allow:
            return False
        if (
            min_confidence is not None
            and record.source == SOURCE_MODEL
            and record.confidences is not None
            and min(record.confidences.values()) < min_confidence
        ):
            return False
        return True

    return predicate


@dataclass
class FilterSummary:
    n_in: int = 0
    n_out: int = 0


def apply_filter(
    records: Iterable[AnnotationRecord],
    predicate: Callable[[AnnotationRecord], bool],
    summary: Optional[FilterSummary] = None,
) -> Iterator[AnnotationRecord]:
    """Stream the order-preserving subset of records the predicate accepts.

    Counts accumulate into `summary` as the stream is consumed, so memory
    stays bounded by one record.
    """
    if summary is None:
        summary = FilterSummary()
    for record in records:
        summary.n_in += 1
        if predicate(record):
            summary.n_out += 1
            yield record


@dataclass
class DistributionTable:
    """Exact per-tag and per-score fractions over a manifest."""

    per_tag: dict[str, dict[str, float]]  # tag -> {"no": f, "yes": f}
    per_score: dict[QualityScore, float]
    n: int

    def to_text_table(self) -> str:
        """Two-row tag table (percentages to 2 decimals) plus score lines."""
        tags = list(MANIFEST_TAG_ORDER)
        name_width = max(len(t) for t in tags) + 2
        header = f"{'Label':<10}" + "".join(f"{t:>{name_width}}" for t in tags)
        no_row = f"{'0 (No)':<10}" + "".join(
            f"{self.per_tag[t]['no'] * 100:>{name_width - 1}.2f}%" for t in tags
        )
        yes_row = f"{'1 (Yes)':<10}" + "".join(
            f"{self.per_tag[t]['yes'] * 100:>{name_width - 1}.2f}%" for t in tags
        )
        lines = [header, no_row, yes_row, ""]
        lines.append("Score distribution:")
        for level in QualityScore:
            lines.append(f"  {level.label:<10}{self.per_score[level] * 100:>8.2f}%")
        lines.append(f"  (n = {self.n})")
        return "\n".join(lines)


def tag_distribution(records: Iterable[AnnotationRecord]) -> DistributionTable:
    """Tally exact tag and score fractions; raises on an empty manifest."""
    n = 0
    tag_yes = {tag: 0 for tag in MANIFEST_TAG_ORDER}
    score_counts = {level: 0 for level in QualityScore}
    for record in records:
        n += 1
        for tag in MANIFEST_TAG_ORDER:
            if record.tags.get(tag):
                tag_yes[tag] += 1
        score_counts[record.score] += 1
    if n == 0:
        raise CurationError("empty manifest: no distribution to report")

    per_tag = {
        tag: {"no": (n - yes) / n, "yes": yes / n} for tag, yes in tag_yes.items()
    }
    per_score = {level: count / n for level, count in score_counts.items()}
    return DistributionTable(per_tag=per_tag, per_score=per_score, n=n)


_SPEC_KEYS = {"min_score", "max_score", "require_tags", "source_allow", "min_confidence"}


def load_filter_spec(path: Path | str) -> FilterSpec:
    """Read a FilterSpec from a TOML file mirroring the spec fields.

    Scores may be given as lowercase names or integer codes.
    """
    with open(path, "rb") as handle:
        raw = tomllib.load(handle)
    unknown = set(raw) - _SPEC_KEYS
    if unknown:
        raise InvalidSpecError(f"unknown keys in filter spec: {sorted(unknown)}")

    def as_score(value) -> QualityScore:
        if isinstance(value, str):
            return QualityScore.from_name(value)
        if isinstance(value, int) and not isinstance(value, bool):
            return QualityScore.from_code(value)
        raise InvalidSpecError(f"score must be a name or 0..3 code, got {value!r}")

    spec = FilterSpec(
        min_score=as_score(raw["min_score"]) if "min_score" in raw else None,
        max_score=as_score(raw["max_score"]) if "max_score" in raw else None,
        require_tags={str(k): bool(v) for k, v in raw.get("require_tags", {}).items()},
        source_allow=frozenset(raw.get("source_allow", [SOURCE_HUMAN, SOURCE_MODEL])),
        min_confidence=float(raw["min_confidence"]) if "min_confidence" in raw else None,
    )
    compile_filter(spec)  # validate eagerly
    return spec

import io
import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshcurate.labels import (
    ALL_HEADS,
    MANIFEST_TAG_ORDER,
    AnnotationRecord,
    BinaryTagSet,
    ManifestParseError,
    ObjectMetadata,
    QualityScore,
    RubricAnswers,
    parse_record,
    read_manifest,
    score_from_decision_tree,
    serialize_record,
    validate_record,
    write_manifest,
)


def make_human_record(**overrides) -> AnnotationRecord:
    base = dict(
        object_id="obj-1",
        score=QualityScore.HIGH,
        tags=BinaryTagSet(is_scene=True),
        source="human",
        annotator_id="alice",
        created_at=datetime(2026, 8, 9, 12, 0, 0, tzinfo=timezone.utc),
        batch_id="batch-1",
    )
    base.update(overrides)
    return AnnotationRecord(**base)


def make_model_record(**overrides) -> AnnotationRecord:
    base = dict(
        object_id="obj-2",
        score=QualityScore.MEDIUM,
        tags=BinaryTagSet(),
        source="model",
        confidences={head: 0.8 for head in ALL_HEADS},
        created_at=datetime(2026, 8, 9, 12, 0, 0, tzinfo=timezone.utc),
    )
    base.update(overrides)
    return AnnotationRecord(**base)


class TestQualityScore:
    def test_four_levels_totally_ordered(self):
        assert [int(s) for s in QualityScore] == [0, 1, 2, 3]
        assert QualityScore.LOW < QualityScore.MEDIUM < QualityScore.HIGH < QualityScore.SUPERIOR

    @pytest.mark.parametrize("level", list(QualityScore))
    def test_roundtrip_code_and_name(self, level):
        assert QualityScore.from_code(int(level)) is level
        assert QualityScore.from_name(level.label) is level
        assert level.label == level.name.lower()

    def test_bad_code_and_name(self):
        with pytest.raises(ValueError):
            QualityScore.from_code(4)
        with pytest.raises(ValueError):
            QualityScore.from_name("excellent")


class TestDecisionTree:
    def test_not_identifiable_is_low_regardless_of_rest(self):
        for textured in (False, True):
            for professional in (False, True):
                answers = RubricAnswers(False, textured, professional)
                assert score_from_decision_tree(answers) is QualityScore.LOW

    def test_identifiable_untextured_is_medium(self):
        for professional in (False, True):
            answers = RubricAnswers(True, False, professional)
            assert score_from_decision_tree(answers) is QualityScore.MEDIUM

    def test_identifiable_textured_professional_is_superior(self):
        assert score_from_decision_tree(RubricAnswers(True, True, True)) is QualityScore.SUPERIOR

    def test_remaining_branch_is_high(self):
        assert score_from_decision_tree(RubricAnswers(True, True, False)) is QualityScore.HIGH

    def test_all_eight_combinations_cover_all_four_levels(self):
        seen = set()
        for identifiable in (False, True):
            for textured in (False, True):
                for professional in (False, True):
                    seen.add(score_from_decision_tree(RubricAnswers(identifiable, textured, professional)))
        assert seen == set(QualityScore)


class TestValidateRecord:
    def test_well_formed_human_record(self):
        assert validate_record(make_human_record()) == []

    def test_well_formed_model_record(self):
        assert validate_record(make_model_record()) == []

    def test_model_record_missing_confidences(self):
        record = make_model_record(confidences=None)
        rules = [v.rule for v in validate_record(record)]
        assert rules == ["missing-confidences"]

    def test_model_record_with_partial_confidences(self):
        record = make_model_record(confidences={"score": 0.5})
        assert "missing-confidences" in [v.rule for v in validate_record(record)]

    def test_confidence_out_of_range(self):
        conf = {head: 0.8 for head in ALL_HEADS}
        conf["is_scene"] = 1.3
        record = make_model_record(confidences=conf)
        violations = validate_record(record)
        assert [v.rule for v in violations] == ["confidence-out-of-range"]
        assert violations[0].field == "confidences"

    def test_human_record_with_confidences_flagged(self):
        record = make_human_record(confidences={"score": 0.4})
        assert "unexpected-confidences" in [v.rule for v in validate_record(record)]

    def test_empty_object_id(self):
        record = make_human_record(object_id="")
        assert "empty-object-id" in [v.rule for v in validate_record(record)]

    def test_validation_never_raises(self):
        record = make_human_record(object_id="", source="alien", score="not-a-score", tags=None)
        violations = validate_record(record)
        assert len(violations) >= 3


class TestManifestRoundTrip:
    def test_roundtrip_identity_human(self):
        record = make_human_record()
        parsed, warnings = parse_record(serialize_record(record))
        assert parsed == record
        assert warnings == []

    def test_roundtrip_identity_model(self):
        record = make_model_record()
        parsed, _ = parse_record(serialize_record(record))
        assert parsed == record

    def test_unknown_field_preserved_byte_exact(self):
        # Canonical line with one trailing unknown field, fixed by hand.
        line = (
            '{"object_id":"obj-9","score":2,'
            '"tags":{"is_transparent":false,"is_scene":false,"is_single_color":true,'
            '"is_multi_object":false,"is_figure":false},'
            '"source":"human","annotator_id":"bob","confidences":null,'
            '"created_at":"2026-01-02T03:04:05Z","batch_id":null,'
            '"legacy_note":"keep me"}'
        )
        record, warnings = parse_record(line)
        assert record.extras == {"legacy_note": "keep me"}
        assert len(warnings) == 1 and "legacy_note" in warnings[0]
        assert serialize_record(record).encode() == line.encode()

    def test_truncated_line_names_missing_field(self):
        line = json.dumps({"object_id": "x", "score": 1, "tags": {t: False for t in MANIFEST_TAG_ORDER}})
        with pytest.raises(ManifestParseError) as exc:
            parse_record(line, line_no=7)
        assert "source" in str(exc.value)
        assert "line 7" in str(exc.value)

    def test_missing_tag_named(self):
        payload = {
            "object_id": "x",
            "score": 1,
            "tags": {t: False for t in MANIFEST_TAG_ORDER if t != "is_figure"},
            "source": "human",
        }
        with pytest.raises(ManifestParseError, match="is_figure"):
            parse_record(json.dumps(payload))

    def test_serialize_rejects_exactly_what_validate_flags(self):
        bad = make_model_record(confidences=None)
        assert validate_record(bad)
        with pytest.raises(ValueError, match="missing-confidences"):
            serialize_record(bad)

    def test_bad_json_reports_line(self):
        with pytest.raises(ManifestParseError, match="line 3"):
            parse_record("{not json", line_no=3)

    def test_bad_score_value(self):
        payload = {
            "object_id": "x",
            "score": 9,
            "tags": {t: False for t in MANIFEST_TAG_ORDER},
            "source": "human",
        }
        with pytest.raises(ManifestParseError, match="score"):
            parse_record(json.dumps(payload))


confidence_values = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@st.composite
def records(draw):
    source = draw(st.sampled_from(["human", "model"]))
    tags = BinaryTagSet(**{name: draw(st.booleans()) for name in MANIFEST_TAG_ORDER})
    confidences = None
    if source == "model":
        confidences = {head: draw(confidence_values) for head in ALL_HEADS}
    created = draw(
        st.one_of(
            st.none(),
            st.datetimes(
                min_value=datetime(2000, 1, 1),
                max_value=datetime(2099, 12, 31),
            ).map(lambda d: d.replace(microsecond=0, tzinfo=timezone.utc)),
        )
    )
    return AnnotationRecord(
        object_id=draw(st.text(min_size=1, max_size=24).filter(str.strip)),
        score=draw(st.sampled_from(list(QualityScore))),
        tags=tags,
        source=source,
        annotator_id=draw(st.one_of(st.none(), st.text(min_size=1, max_size=8))),
        confidences=confidences,
        created_at=created,
        batch_id=draw(st.one_of(st.none(), st.text(min_size=1, max_size=8))),
    )


@settings(max_examples=200, deadline=None)
@given(records())
def test_serialization_roundtrip_property(record):
    assert validate_record(record) == []
    parsed, warnings = parse_record(serialize_record(record))
    assert parsed == record
    assert warnings == []


def test_manifest_stream_roundtrip():
    originals = [make_human_record(object_id=f"obj-{i}") for i in range(5)]
    buffer = io.StringIO()
    assert write_manifest(originals, buffer) == 5
    parsed = list(read_manifest(buffer.getvalue().splitlines()))
    assert parsed == originals


def test_read_manifest_skip_mode_reports_line_numbers():
    lines = [serialize_record(make_human_record()), "garbage", serialize_record(make_model_record())]
    errors: list[tuple[int, str]] = []
    records_out = list(read_manifest(lines, on_error="skip", error_sink=errors))
    assert len(records_out) == 2
    assert errors and errors[0][0] == 2


def test_metadata_rejects_negative_counts():
    with pytest.raises(ValueError):
        ObjectMetadata(vertex_count=-1)
    meta = ObjectMetadata(vertex_count=10, edge_count=20, view_count=5, like_count=9)
    assert meta.as_vector() == (10, 20, 5, 9)

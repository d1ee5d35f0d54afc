import json
import threading
from datetime import datetime, timedelta, timezone

import pytest
from fastapi.testclient import TestClient

from meshcurate.labels import (
    AnnotationRecord,
    BinaryTagSet,
    QualityScore,
    parse_record,
    read_manifest,
    serialize_record,
)
from meshcurate.service import (
    BatchNotActiveError,
    BatchNotReadyError,
    DuplicateObjectError,
    SchemaViolationError,
    ServiceSettings,
    StaleAssignmentError,
    Store,
    UnresolvedDiscrepanciesError,
    create_app,
)


class FakeClock:
    def __init__(self):
        self.now = datetime(2026, 8, 9, 10, 0, 0, tzinfo=timezone.utc)

    def __call__(self):
        return self.now

    def advance(self, minutes: float):
        self.now = self.now + timedelta(minutes=minutes)


def record_for(object_id, annotator, score=QualityScore.HIGH, **tags) -> AnnotationRecord:
    return AnnotationRecord(
        object_id=object_id,
        score=score,
        tags=BinaryTagSet(**tags),
        source="human",
        annotator_id=annotator,
        created_at=datetime(2026, 8, 9, 11, 0, 0, tzinfo=timezone.utc),
    )


def label_whole_batch(store, batch_id, annotator, score=QualityScore.HIGH, **tags):
    while True:
        try:
            task = store.next_task(annotator, batch_id)
        except BatchNotActiveError:
            return  # final submission may auto-close the batch
        if task is None:
            return
        store.submit_annotation(task.assignment_id, record_for(task.object_id, annotator, score, **tags))


@pytest.fixture
def store():
    return Store(":memory:", clock=FakeClock())


class TestBatchLifecycle:
    def test_create_batch_open_state(self, store):
        batch = store.create_batch(["a", "b", "c"], validation_fraction=0.5, batch_id="b1")
        assert batch.state == "OPEN"
        assert batch.n_objects == 3

    def test_duplicate_object_rejected(self, store):
        with pytest.raises(DuplicateObjectError):
            store.create_batch(["a", "a"], batch_id="b1")

    def test_empty_batch_rejected(self, store):
        with pytest.raises(Exception):
            store.create_batch([], batch_id="b1")

    def test_duplicate_batch_id_rejected(self, store):
        store.create_batch(["a"], batch_id="b1")
        from meshcurate.service import DuplicateBatchError

        with pytest.raises(DuplicateBatchError):
            store.create_batch(["b"], batch_id="b1")

    def test_zero_fraction_batch_closes_after_labeling(self, store):
        store.create_batch(["a", "b"], validation_fraction=0.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice")
        assert store.get_batch("b1").state == "CLOSED"

    def test_closed_batch_not_active(self, store):
        store.create_batch(["a"], validation_fraction=0.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice")
        with pytest.raises(BatchNotActiveError):
            store.next_task("bob", "b1")


class TestTaskIssuance:
    def test_lowest_ordered_object_first(self, store):
        store.create_batch(["zeta", "alpha", "mid"], batch_id="b1")
        task = store.next_task("alice", "b1")
        assert task.object_id == "zeta"  # batch order, not lexicographic

    def test_idempotent_for_incomplete_assignment(self, store):
        store.create_batch(["a", "b"], batch_id="b1")
        first = store.next_task("alice", "b1")
        second = store.next_task("alice", "b1")
        assert first.assignment_id == second.assignment_id

    def test_two_annotators_get_disjoint_objects(self, store):
        store.create_batch(["a", "b"], batch_id="b1")
        t1 = store.next_task("alice", "b1")
        t2 = store.next_task("bob", "b1")
        assert t1.object_id != t2.object_id

    def test_concurrent_polling_never_double_assigns(self):
        store = Store(":memory:")
        store.create_batch([f"obj-{i}" for i in range(16)], batch_id="b1")
        results = []

        def poll(name):
            task = store.next_task(name, "b1")
            if task:
                results.append(task.object_id)

        threads = [threading.Thread(target=poll, args=(f"ann-{i}",)) for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(results) == len(set(results)) == 16

    def test_expired_lease_recycles(self, store):
        clock = store._clock
        store.create_batch(["a"], batch_id="b1")
        stale_task = store.next_task("alice", "b1")
        clock.advance(31)
        replacement = store.next_task("bob", "b1")
        assert replacement is not None
        assert replacement.object_id == "a"
        store.submit_annotation(replacement.assignment_id, record_for("a", "bob"))
        with pytest.raises(StaleAssignmentError):
            store.submit_annotation(stale_task.assignment_id, record_for("a", "alice"))

    def test_exhausted_batch_returns_none(self, store):
        store.create_batch(["a"], batch_id="b1")
        task = store.next_task("alice", "b1")
        store.submit_annotation(task.assignment_id, record_for("a", "alice"))
        assert store.next_task("alice", "b1") is None


class TestSubmission:
    def test_roundtrip_submission(self, store):
        store.create_batch(["a"], batch_id="b1")
        task = store.next_task("alice", "b1")
        record = record_for("a", "alice", is_scene=True)
        store.submit_annotation(task.assignment_id, record)
        assert store.latest_annotation("b1", "a") == record

    def test_mismatched_object_rejected_nothing_persisted(self, store):
        store.create_batch(["a", "b"], batch_id="b1")
        task = store.next_task("alice", "b1")
        with pytest.raises(SchemaViolationError):
            store.submit_annotation(task.assignment_id, record_for("definitely-not-a", "alice"))
        assert store.latest_annotation("b1", "a") is None

    def test_invalid_record_rejected(self, store):
        store.create_batch(["a"], batch_id="b1")
        task = store.next_task("alice", "b1")
        bad = AnnotationRecord(
            object_id="a",
            score=QualityScore.HIGH,
            tags=BinaryTagSet(),
            source="model",  # model source without confidences
            annotator_id="alice",
        )
        with pytest.raises(SchemaViolationError):
            store.submit_annotation(task.assignment_id, bad)

    def test_double_submit_keeps_history_latest_wins(self, store):
        store.create_batch(["a"], validation_fraction=0.0, batch_id="b1")
        task = store.next_task("alice", "b1")
        store.submit_annotation(task.assignment_id, record_for("a", "alice", score=QualityScore.LOW))
        store.submit_annotation(task.assignment_id, record_for("a", "alice", score=QualityScore.SUPERIOR))
        history = store.annotation_history("b1", "a", "PRIMARY")
        assert [int(r.score) for r in history] == [0, 3]
        exported = list(store.export_manifest(["b1"]))
        record, _ = parse_record(exported[0])
        assert record.score is QualityScore.SUPERIOR


class TestValidationWorkflow:
    def test_sampling_counts_and_determinism(self, store):
        ids = [f"obj-{i:03d}" for i in range(100)]
        store.create_batch(ids, validation_fraction=0.1, batch_id="b1")
        label_whole_batch(store, "b1", "alice")
        sampled = store.sample_for_validation("b1", seed=7)
        assert len(sampled) == 10
        assert store.get_batch("b1").state == "VALIDATING"

        twin = Store(":memory:")
        twin.create_batch(ids, validation_fraction=0.1, batch_id="b1")
        label_whole_batch(twin, "b1", "alice")
        assert twin.sample_for_validation("b1", seed=7) == sampled

    def test_full_fraction_revalidates_everything(self, store):
        store.create_batch(["a", "b", "c"], validation_fraction=1.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice")
        assert store.sample_for_validation("b1", seed=0) == ["a", "b", "c"]

    def test_sampling_requires_complete_labeling(self, store):
        store.create_batch(["a", "b"], batch_id="b1")
        task = store.next_task("alice", "b1")
        store.submit_annotation(task.assignment_id, record_for("a", "alice"))
        with pytest.raises(BatchNotReadyError):
            store.sample_for_validation("b1", seed=0)

    def test_validator_never_validates_own_annotation(self, store):
        store.create_batch(["a"], validation_fraction=1.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice")
        store.sample_for_validation("b1", seed=0)
        assert store.next_task("alice", "b1") is None
        task = store.next_task("bob", "b1")
        assert task is not None and task.role == "VALIDATOR"

    def test_discrepancy_workflow_and_close(self, store):
        store.create_batch(["a", "b", "c"], validation_fraction=1.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice", score=QualityScore.HIGH, is_scene=False)
        store.sample_for_validation("b1", seed=1)

        # Validator agrees on everything except one field of object "b".
        while True:
            task = store.next_task("bob", "b1")
            if task is None:
                break
            disagree = task.object_id == "b"
            store.submit_annotation(
                task.assignment_id,
                record_for(task.object_id, "bob", score=QualityScore.HIGH, is_scene=disagree),
            )

        report = store.discrepancy_report("b1")
        assert len(report) == 1
        item = report[0]
        assert (item.object_id, item.field) == ("b", "is_scene")
        assert item.primary_value is False and item.validator_value is True
        assert store.get_batch("b1").state == "VALIDATING"

        with pytest.raises(UnresolvedDiscrepanciesError) as exc:
            list(store.export_manifest(["b1"]))
        assert exc.value.object_ids == ["b"]

        store.resolve_discrepancy(item.discrepancy_id, True)
        assert store.get_batch("b1").state == "CLOSED"

        lines = list(store.export_manifest(["b1"]))
        records = {r.object_id: r for r in read_manifest(lines)}
        assert records["b"].tags.is_scene is True  # resolution applied
        assert records["a"].tags.is_scene is False

    def test_score_two_three_disagreement_still_flagged(self, store):
        store.create_batch(["a"], validation_fraction=1.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice", score=QualityScore.HIGH)
        store.sample_for_validation("b1", seed=0)
        task = store.next_task("bob", "b1")
        store.submit_annotation(task.assignment_id, record_for("a", "bob", score=QualityScore.SUPERIOR))
        report = store.discrepancy_report("b1")
        assert len(report) == 1
        assert report[0].field == "score"
        assert (report[0].primary_value, report[0].validator_value) == (2, 3)

    def test_identical_annotations_close_without_discrepancies(self, store):
        store.create_batch(["a"], validation_fraction=1.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice")
        store.sample_for_validation("b1", seed=0)
        task = store.next_task("bob", "b1")
        store.submit_annotation(task.assignment_id, record_for("a", "bob"))
        assert store.discrepancy_report("b1") == []
        assert store.get_batch("b1").state == "CLOSED"

    def test_unresolved_export_allowed_without_resolved_only(self, store):
        store.create_batch(["a"], validation_fraction=1.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice", score=QualityScore.HIGH)
        store.sample_for_validation("b1", seed=0)
        task = store.next_task("bob", "b1")
        store.submit_annotation(task.assignment_id, record_for("a", "bob", score=QualityScore.LOW))
        assert store.get_batch("b1").state == "VALIDATING"
        lines = list(store.export_manifest(["b1"], resolved_only=False))
        record, _ = parse_record(lines[0])
        assert record.score is QualityScore.HIGH  # latest primary, unresolved

    def test_export_deterministic(self, store):
        store.create_batch(["zeta", "alpha"], validation_fraction=0.0, batch_id="b1")
        label_whole_batch(store, "b1", "alice")
        first = "\n".join(store.export_manifest(["b1"]))
        second = "\n".join(store.export_manifest(["b1"]))
        assert first == second
        ids = [parse_record(line)[0].object_id for line in first.splitlines()]
        assert ids == sorted(ids)

    def test_replaying_history_reconstructs_export(self, store):
        store.create_batch(["a", "b"], validation_fraction=0.0, batch_id="b1")
        task = store.next_task("alice", "b1")
        store.submit_annotation(task.assignment_id, record_for(task.object_id, "alice", score=QualityScore.LOW))
        store.submit_annotation(task.assignment_id, record_for(task.object_id, "alice", score=QualityScore.HIGH))
        label_whole_batch(store, "b1", "alice")
        replayed = {}
        for object_id in ("a", "b"):
            for record in store.annotation_history("b1", object_id, "PRIMARY"):
                replayed[object_id] = record  # later versions overwrite
        exported = {r.object_id: r for r in read_manifest(store.export_manifest(["b1"]))}
        assert exported == replayed


class TestHttpApi:
    @pytest.fixture
    def client(self, tmp_path):
        store = Store(tmp_path / "svc.sqlite")
        app = create_app(store, ServiceSettings())
        return TestClient(app)

    def test_schema_version_on_every_json_response(self, client):
        response = client.post("/batches", json={"object_ids": ["a", "b"], "batch_id": "b1"})
        assert response.status_code == 200
        assert response.json()["schema_version"] == 1

        response = client.get("/batches/b1")
        assert response.json()["schema_version"] == 1

        response = client.get("/batches/nope")
        assert response.status_code == 404
        assert response.json()["schema_version"] == 1

    def test_full_workflow_over_http(self, client):
        created = client.post(
            "/batches",
            json={"object_ids": ["x", "y", "z"], "validation_fraction": 1.0, "batch_id": "w1"},
        )
        assert created.status_code == 200

        def submit_all(annotator, mutate):
            while True:
                task = client.post(
                    f"/batches/w1/tasks/next", json={"annotator_id": annotator}
                ).json()["task"]
                if task is None:
                    return
                record = record_for(task["object_id"], annotator)
                record_payload = json.loads(serialize_record(record))
                record_payload = mutate(task["object_id"], record_payload)
                response = client.post(
                    "/annotations",
                    json={"assignment_id": task["assignment_id"], "record": record_payload},
                )
                assert response.status_code == 200, response.text

        submit_all("alice", lambda oid, payload: payload)
        sampled = client.post("/batches/w1/validate", json={"seed": 3})
        assert sampled.status_code == 200
        assert sorted(sampled.json()["sampled_object_ids"]) == ["x", "y", "z"]

        def flip_y(oid, payload):
            if oid == "y":
                payload["tags"]["is_figure"] = True
            return payload

        submit_all("bob", flip_y)

        report = client.get("/batches/w1/discrepancies").json()["discrepancies"]
        assert len(report) == 1
        assert report[0]["object_id"] == "y"
        assert report[0]["field"] == "is_figure"

        resolved = client.post(
            f"/discrepancies/{report[0]['discrepancy_id']}/resolve", json={"resolution": True}
        )
        assert resolved.status_code == 200
        assert client.get("/batches/w1").json()["batch"]["state"] == "CLOSED"

        export = client.get("/export", params={"batch": "w1"})
        assert export.status_code == 200
        assert export.headers["x-schema-version"] == "1"
        records = list(read_manifest(export.text.splitlines()))
        assert [r.object_id for r in records] == ["x", "y", "z"]
        assert next(r for r in records if r.object_id == "y").tags.is_figure

    def test_annotator_header_accepted(self, client):
        client.post("/batches", json={"object_ids": ["a"], "batch_id": "b2"})
        response = client.post("/batches/b2/tasks/next", headers={"X-Annotator-Id": "carol"})
        assert response.status_code == 200
        assert response.json()["task"]["annotator_id"] == "carol"

    def test_missing_annotator_rejected(self, client):
        client.post("/batches", json={"object_ids": ["a"], "batch_id": "b3"})
        response = client.post("/batches/b3/tasks/next", json={})
        assert response.status_code == 422

    def test_model_and_views_served(self, tmp_path):
        from glb_fixtures import cube_glb

        objects_dir = tmp_path / "objects"
        objects_dir.mkdir()
        (objects_dir / "cube.glb").write_bytes(cube_glb())
        store = Store(tmp_path / "svc.sqlite")
        settings = ServiceSettings(
            objects_dir=objects_dir,
            views_dir=tmp_path / "views",
            n_views=2,
            resolution=(32, 32),
        )
        client = TestClient(create_app(store, settings))

        model = client.get("/objects/cube/model.glb")
        assert model.status_code == 200
        assert model.content == cube_glb()

        view = client.get("/objects/cube/views/1.png")
        assert view.status_code == 200
        assert view.content[:8] == b"\x89PNG\r\n\x1a\n"

        edge_view = client.get("/objects/cube/views/0.png", params={"edges": "true"})
        assert edge_view.status_code == 200

        missing = client.get("/objects/ghost/model.glb")
        assert missing.status_code == 404

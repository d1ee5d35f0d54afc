"""HTTP+JSON API over the labeling workflow store.

Every JSON response carries a schema_version field. Rendered views and the
raw GLB are served per object for the browser client; the single-page UI
bundle is mounted at /ui when a bundle directory is configured.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, Header, Query, Request, Response
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from ..gltf import load_mesh
from ..labels import AnnotationRecord, parse_record
from ..render import dump_views, render_object
from .store import (
    Assignment,
    BadResolutionError,
    Batch,
    BatchNotActiveError,
    BatchNotReadyError,
    Discrepancy,
    DuplicateBatchError,
    DuplicateObjectError,
    SchemaViolationError,
    ServiceError,
    StaleAssignmentError,
    Store,
    UnknownAssignmentError,
    UnknownBatchError,
    UnknownDiscrepancyError,
    UnresolvedDiscrepanciesError,
)

SCHEMA_VERSION = 1

_ERROR_STATUS = {
    UnknownBatchError: 404,
    UnknownAssignmentError: 404,
    UnknownDiscrepancyError: 404,
    DuplicateBatchError: 409,
    DuplicateObjectError: 409,
    BatchNotActiveError: 409,
    BatchNotReadyError: 409,
    StaleAssignmentError: 409,
    UnresolvedDiscrepanciesError: 409,
    SchemaViolationError: 422,
    BadResolutionError: 422,
}


@dataclass
class ServiceSettings:
    """Where objects live and how view thumbnails are rendered."""

    objects_dir: Optional[Path] = None
    views_dir: Optional[Path] = None
    ui_dir: Optional[Path] = None
    n_views: int = 40
    resolution: tuple[int, int] = (224, 224)
    view_seed: int = 0


class CreateBatchRequest(BaseModel):
    object_ids: list[str]
    validation_fraction: float = 0.1
    batch_id: Optional[str] = None


class NextTaskRequest(BaseModel):
    annotator_id: Optional[str] = None


class SubmitAnnotationRequest(BaseModel):
    assignment_id: int
    record: dict


class ValidateRequest(BaseModel):
    seed: int = 0


class ResolveRequest(BaseModel):
    resolution: object = Field(...)


def _payload(**body) -> dict:
    return {"schema_version": SCHEMA_VERSION, **body}


def _batch_json(batch: Batch) -> dict:
    return {
        "batch_id": batch.batch_id,
        "state": batch.state,
        "created_at": batch.created_at,
        "validation_fraction": batch.validation_fraction,
        "n_objects": batch.n_objects,
        "n_labeled": batch.n_labeled,
        "n_validated": batch.n_validated,
    }


def _assignment_json(assignment: Assignment) -> dict:
    return {
        "assignment_id": assignment.assignment_id,
        "batch_id": assignment.batch_id,
        "object_id": assignment.object_id,
        "annotator_id": assignment.annotator_id,
        "role": assignment.role,
        "issued_at": assignment.issued_at,
        "expires_at": assignment.expires_at,
        "completed": assignment.completed,
    }


def _discrepancy_json(item: Discrepancy) -> dict:
    return {
        "discrepancy_id": item.discrepancy_id,
        "batch_id": item.batch_id,
        "object_id": item.object_id,
        "field": item.field,
        "primary_value": item.primary_value,
        "validator_value": item.validator_value,
        "resolved": item.resolved,
        "resolution": item.resolution,
    }


def create_app(store: Store, settings: Optional[ServiceSettings] = None) -> FastAPI:
    settings = settings or ServiceSettings()
    app = FastAPI(title="mesh annotation service")

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        status = _ERROR_STATUS.get(type(exc), 400)
        detail = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, UnresolvedDiscrepanciesError):
            detail["object_ids"] = exc.object_ids
        return JSONResponse(status_code=status, content=_payload(error=detail))

    @app.post("/batches")
    def create_batch(body: CreateBatchRequest):
        batch = store.create_batch(
            body.object_ids, validation_fraction=body.validation_fraction, batch_id=body.batch_id
        )
        return _payload(batch=_batch_json(batch))

    @app.get("/batches/{batch_id}")
    def get_batch(batch_id: str):
        return _payload(batch=_batch_json(store.get_batch(batch_id)))

    @app.post("/batches/{batch_id}/tasks/next")
    def next_task(
        batch_id: str,
        body: Optional[NextTaskRequest] = Body(default=None),
        x_annotator_id: Optional[str] = Header(default=None),
    ):
        annotator = (body.annotator_id if body else None) or x_annotator_id
        if not annotator:
            raise SchemaViolationError("annotator_id required (body or X-Annotator-Id header)")
        assignment = store.next_task(annotator, batch_id)
        task = _assignment_json(assignment) if assignment else None
        return _payload(task=task, batch=_batch_json(store.get_batch(batch_id)))

    @app.post("/annotations")
    def submit_annotation(body: SubmitAnnotationRequest):
        import json as json_module

        try:
            record, _ = parse_record(json_module.dumps(body.record))
        except ValueError as exc:
            raise SchemaViolationError(str(exc)) from exc
        version = store.submit_annotation(body.assignment_id, record)
        return _payload(accepted=True, version=version)

    @app.post("/batches/{batch_id}/validate")
    def sample_validation(batch_id: str, body: ValidateRequest):
        sampled = store.sample_for_validation(batch_id, seed=body.seed)
        return _payload(sampled_object_ids=sampled, batch=_batch_json(store.get_batch(batch_id)))

    @app.get("/batches/{batch_id}/discrepancies")
    def discrepancies(batch_id: str):
        report = store.discrepancy_report(batch_id)
        return _payload(discrepancies=[_discrepancy_json(d) for d in report])

    @app.post("/discrepancies/{discrepancy_id}/resolve")
    def resolve(discrepancy_id: int, body: ResolveRequest):
        item = store.resolve_discrepancy(discrepancy_id, body.resolution)
        return _payload(discrepancy=_discrepancy_json(item))

    @app.get("/export")
    def export(
        batch: list[str] = Query(...),
        resolved_only: bool = Query(default=True),
    ):
        lines = list(store.export_manifest(batch, resolved_only=resolved_only))
        text = "\n".join(lines) + ("\n" if lines else "")
        return PlainTextResponse(
            text, media_type="application/x-ndjson", headers={"X-Schema-Version": str(SCHEMA_VERSION)}
        )

    def _object_glb(object_id: str) -> Path:
        if settings.objects_dir is None:
            raise UnknownBatchError("no objects directory configured")
        path = settings.objects_dir / f"{object_id}.glb"
        if not path.is_file():
            raise UnknownBatchError(f"no model stored for object {object_id!r}")
        return path

    @app.get("/objects/{object_id}/model.glb")
    def object_model(object_id: str):
        return FileResponse(_object_glb(object_id), media_type="model/gltf-binary")

    @app.get("/objects/{object_id}/views/{index}.png")
    def object_view(object_id: str, index: int, edges: bool = Query(default=False)):
        if not 0 <= index < settings.n_views:
            raise UnknownBatchError(f"view index {index} out of range 0..{settings.n_views - 1}")
        views_dir = settings.views_dir or (settings.objects_dir or Path(".")) / "_views"
        suffix = "edges" if edges else "plain"
        target = views_dir / suffix / object_id / f"view_{index:03d}.png"
        if not target.is_file():
            asset = load_mesh(_object_glb(object_id), object_id=object_id)
            stack = render_object(
                asset,
                n_views=settings.n_views,
                seed=settings.view_seed,
                resolution=settings.resolution,
                edge_overlay=edges,
            )
            dump_views(stack, views_dir / suffix)
        return FileResponse(target, media_type="image/png")

    if settings.ui_dir is not None and Path(settings.ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(settings.ui_dir), html=True), name="ui")

    return app

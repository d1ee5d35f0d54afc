"""Annotation workflow service: persistent store plus HTTP API."""

from .app import SCHEMA_VERSION, ServiceSettings, create_app
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

__all__ = [
    "SCHEMA_VERSION",
    "ServiceSettings",
    "create_app",
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
]

"""meshcurate: quality annotation and dataset curation for 3D mesh assets."""

__version__ = "0.1.0"

from .labels import (
    AnnotationRecord,
    BinaryTagSet,
    ObjectMetadata,
    QualityScore,
    RubricAnswers,
    score_from_decision_tree,
)

__all__ = [
    "AnnotationRecord",
    "BinaryTagSet",
    "ObjectMetadata",
    "QualityScore",
    "RubricAnswers",
    "score_from_decision_tree",
    "__version__",
]

"""Evaluation metrics for the annotator: score accuracy (strict and
relaxed), per-tag accuracy / F1 / average precision, and the consolidated
report."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .labels import TAG_HEAD_ORDER, AnnotationRecord, QualityScore

__all__ = [
    "EvalReport",
    "MetricError",
    "DegenerateClassError",
    "score_accuracy",
    "relaxed_score_accuracy",
    "binary_tag_metrics",
    "confusion_matrix_4x4",
    "evaluate_records",
    "evaluate",
]


class MetricError(ValueError):
    pass


class DegenerateClassError(MetricError):
    """Average precision is undefined without any positive labels."""


def _check_lengths(predictions: Sequence, labels: Sequence) -> int:
    if len(predictions) != len(labels):
        raise MetricError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if len(predictions) == 0:
        raise MetricError("empty input")
    return len(predictions)


def score_accuracy(predictions: Sequence[QualityScore], labels: Sequence[QualityScore]) -> float:
    """Fraction of exact score matches."""
    n = _check_lengths(predictions, labels)
    hits = sum(1 for p, t in zip(predictions, labels) if int(p) == int(t))
    return hits / n


def relaxed_score_accuracy(predictions: Sequence[QualityScore], labels: Sequence[QualityScore]) -> float:
    """Score accuracy where the top two levels (codes 2 and 3) are
    interchangeable."""
    n = _check_lengths(predictions, labels)
    hits = 0
    for p, t in zip(predictions, labels):
        p, t = int(p), int(t)
        if p == t or (p, t) in ((2, 3), (3, 2)):
            hits += 1
    return hits / n


def binary_tag_metrics(
    scores: Sequence[float],
    labels: Sequence[bool],
    threshold: float = 0.5,
) -> dict[str, float]:
    """Accuracy, positive-class F1, and average precision for one tag.

    Predictions are score >= threshold. AP ranks by descending score with
    ties broken by original index and averages precision at each positive.
    F1 is 0 by convention when there are neither predicted nor actual
    positives. Raises DegenerateClassError when no positive labels exist.
    """
    n = _check_lengths(scores, labels)
    scores_arr = np.asarray(scores, dtype=np.float64)
    labels_arr = np.asarray(labels, dtype=bool)
    if np.any(scores_arr < 0.0) or np.any(scores_arr > 1.0):
        raise MetricError("scores must be probabilities in [0, 1]")

    predicted = scores_arr >= threshold
    accuracy = float((predicted == labels_arr).sum() / n)

    tp = int((predicted & labels_arr).sum())
    fp = int((predicted & ~labels_arr).sum())
    fn = int((~predicted & labels_arr).sum())
    if tp + fp + fn == 0:
        f1 = 0.0
    else:
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0

    n_pos = int(labels_arr.sum())
    if n_pos == 0:
        raise DegenerateClassError("all labels negative: average precision is undefined")
    order = np.argsort(-scores_arr, kind="stable")
    ranked = labels_arr[order]
    cum_pos = np.cumsum(ranked)
    ranks = np.arange(1, n + 1)
    ap = float((cum_pos[ranked] / ranks[ranked]).sum() / n_pos)

    return {"accuracy": accuracy, "f1": f1, "ap": ap}


def confusion_matrix_4x4(
    predictions: Sequence[QualityScore], labels: Sequence[QualityScore]
) -> np.ndarray:
    """Rows are true scores, columns predicted scores."""
    _check_lengths(predictions, labels)
    matrix = np.zeros((4, 4), dtype=np.int64)
    for p, t in zip(predictions, labels):
        matrix[int(t), int(p)] += 1
    return matrix


@dataclass
class EvalReport:
    score_accuracy: float
    relaxed_score_accuracy: float
    per_tag: dict[str, dict[str, float]]
    n_samples: int
    confusion_4x4: np.ndarray

    def __post_init__(self) -> None:
        self.confusion_4x4 = np.asarray(self.confusion_4x4, dtype=np.int64)
        if self.confusion_4x4.shape != (4, 4):
            raise MetricError(f"confusion matrix must be 4x4, got {self.confusion_4x4.shape}")
        if int(self.confusion_4x4.sum()) != self.n_samples:
            raise MetricError("confusion matrix entries must sum to n_samples")
        if self.relaxed_score_accuracy < self.score_accuracy - 1e-12:
            raise MetricError("relaxed accuracy cannot be below strict accuracy")

    def to_json(self) -> str:
        payload = {
            "n_samples": self.n_samples,
            "score_accuracy": self.score_accuracy,
            "relaxed_score_accuracy": self.relaxed_score_accuracy,
            "per_tag": self.per_tag,
            "confusion_4x4": self.confusion_4x4.tolist(),
        }
        return json.dumps(payload, indent=1)

    def to_text_table(self) -> str:
        """Plain-text metric table, one row per head."""
        header = f"{'Metric':<24}{'Accuracy':>10}{'F1 Score':>10}{'mAP':>10}"
        lines = [header, "-" * len(header)]
        lines.append(f"{'score':<24}{self.score_accuracy:>10.4f}{'--':>10}{'--':>10}")
        lines.append(
            f"{'relaxed score accuracy':<24}{self.relaxed_score_accuracy:>10.4f}{'--':>10}{'--':>10}"
        )
        for tag in TAG_HEAD_ORDER:
            row = self.per_tag[tag]
            lines.append(
                f"{tag:<24}{row['accuracy']:>10.4f}{row['f1']:>10.3f}{row['ap']:>10.4f}"
            )
        lines.append(f"(n = {self.n_samples})")
        return "\n".join(lines)


def evaluate_records(
    predicted: Sequence[AnnotationRecord],
    labeled: Sequence[AnnotationRecord],
    threshold: float = 0.5,
) -> EvalReport:
    """Build the full report from aligned predicted and reference records.

    Tag probabilities come from the predicted records' confidences when
    present (model records), else from the hard tag value.
    """
    n = _check_lengths(predicted, labeled)
    pred_scores = [r.score for r in predicted]
    true_scores = [r.score for r in labeled]

    per_tag: dict[str, dict[str, float]] = {}
    for tag in TAG_HEAD_ORDER:
        probs = []
        for record in predicted:
            if record.confidences is not None and tag in record.confidences:
                probs.append(float(record.confidences[tag]))
            else:
                probs.append(1.0 if record.tags.get(tag) else 0.0)
        truth = [r.tags.get(tag) for r in labeled]
        per_tag[tag] = binary_tag_metrics(probs, truth, threshold=threshold)

    return EvalReport(
        score_accuracy=score_accuracy(pred_scores, true_scores),
        relaxed_score_accuracy=relaxed_score_accuracy(pred_scores, true_scores),
        per_tag=per_tag,
        n_samples=n,
        confusion_4x4=confusion_matrix_4x4(pred_scores, true_scores),
    )


def evaluate(
    model,
    dataset: Sequence[tuple],
    threshold: float = 0.5,
    predict_fn: Optional[Callable] = None,
) -> EvalReport:
    """Run the annotator over (views, metadata, record) samples and score it.

    `predict_fn(model, views, metadata)` defaults to the annotator's predict
    and may be swapped for a test double.
    """
    if len(dataset) == 0:
        raise MetricError("empty input")
    if predict_fn is None:
        from .annotator.training import predict as predict_fn  # circular at import time

    predicted = []
    labeled = []
    for views, metadata, record in dataset:
        predicted.append(predict_fn(model, views, metadata))
        labeled.append(record)
    return evaluate_records(predicted, labeled, threshold=threshold)

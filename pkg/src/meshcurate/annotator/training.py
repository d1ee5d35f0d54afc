"""Training loop, loss, inference, and checkpoint I/O for the annotator."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from ..labels import (
    SOURCE_HUMAN,
    SOURCE_MODEL,
    TAG_HEAD_ORDER,
    AnnotationRecord,
    BinaryTagSet,
    ObjectMetadata,
    QualityScore,
    utc_now,
    validate_record,
)
from ..render import ViewStack
from .model import (
    AnnotatorConfig,
    AnnotatorNet,
    HeadOutputs,
    ShapeMismatchError,
    build_network,
)

__all__ = [
    "EpochStats",
    "TrainedAnnotator",
    "TrainingError",
    "TrainingDivergedError",
    "compute_loss",
    "forward",
    "train",
    "predict",
    "save_annotator",
    "load_annotator",
]

Sample = tuple[ViewStack, ObjectMetadata, AnnotationRecord]

CHECKPOINT_MAGIC = b"MCANNOT1"


class TrainingError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite; carries the failing epoch."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training loss became {loss} at epoch {epoch}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_metrics: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainedAnnotator:
    config: AnnotatorConfig
    network: AnnotatorNet
    training_history: list[EpochStats] = field(default_factory=list)

    def save(self, path: Path | str) -> None:
        save_annotator(self, path)


def compute_loss(
    outputs: HeadOutputs,
    label: AnnotationRecord,
    weights: Optional[dict[str, float]] = None,
) -> float:
    """Weighted sum of score cross-entropy and per-tag binary cross-entropy.

    Uses log-sum-exp formulations throughout, so extreme logits cannot
    underflow. Labels must come from a human source.
    """
    if label.source != SOURCE_HUMAN:
        raise TrainingError("loss labels must come from human annotations")
    if weights is None:
        weights = {}

    score_logits = outputs.score_logits
    log_norm = float(np.logaddexp.reduce(score_logits))
    score_loss = log_norm - float(score_logits[int(label.score)])

    total = weights.get("score", 1.0) * score_loss
    for tag, logit in zip(TAG_HEAD_ORDER, outputs.tag_logits):
        target = 1.0 if label.tags.get(tag) else 0.0
        # max(z, 0) - z*y + log(1 + exp(-|z|))
        tag_loss = max(logit, 0.0) - logit * target + math.log1p(math.exp(-abs(logit)))
        total += weights.get(tag, 1.0) * tag_loss
    return float(total)


def _loss_torch(
    score_logits: torch.Tensor,
    tag_logits: torch.Tensor,
    score_targets: torch.Tensor,
    tag_targets: torch.Tensor,
    config: AnnotatorConfig,
) -> torch.Tensor:
    """Batch-mean training loss; mirrors compute_loss exactly."""
    ce = nn.functional.cross_entropy(score_logits, score_targets, reduction="none")
    bce = nn.functional.binary_cross_entropy_with_logits(tag_logits, tag_targets, reduction="none")
    tag_weights = torch.tensor(
        [config.weight_for(tag) for tag in TAG_HEAD_ORDER],
        dtype=score_logits.dtype,
        device=score_logits.device,
    )
    per_sample = config.weight_for("score") * ce + (bce * tag_weights).sum(dim=-1)
    return per_sample.mean()


def _views_tensor(views: ViewStack, dtype: torch.dtype) -> torch.Tensor:
    images = torch.from_numpy(np.ascontiguousarray(views.images))
    return images.permute(0, 3, 1, 2).to(dtype)  # (V, 3, H, W)


def _metadata_tensor(metadata: ObjectMetadata, dtype: torch.dtype) -> torch.Tensor:
    return torch.tensor(metadata.as_vector(), dtype=dtype)


def _check_input_shape(net: AnnotatorNet, views: ViewStack) -> None:
    if views.n_views != net.config.n_views:
        raise ShapeMismatchError(
            f"expected {net.config.n_views} views, got {views.n_views}"
        )
    expected = net.expected_resolution
    if expected is not None and views.resolution != expected:
        raise ShapeMismatchError(
            f"backbone expects {expected[0]}x{expected[1]} views, got "
            f"{views.resolution[0]}x{views.resolution[1]}"
        )


def forward(model: TrainedAnnotator, views: ViewStack, metadata: ObjectMetadata) -> HeadOutputs:
    """Run one object through the network; outputs as plain numpy arrays."""
    net = model.network
    _check_input_shape(net, views)
    dtype = next(net.parameters()).dtype
    net.eval()
    with torch.no_grad():
        score_logits, tag_logits, weights = net(
            _views_tensor(views, dtype).unsqueeze(0),
            _metadata_tensor(metadata, dtype).unsqueeze(0),
        )
    return HeadOutputs(
        score_logits=score_logits[0].numpy(),
        tag_logits=tag_logits[0].numpy(),
        attention_weights=weights[0].numpy(),
    )


def _stack_dataset(dataset: Sequence[Sample], dtype: torch.dtype):
    views = torch.stack([_views_tensor(v, dtype) for v, _, _ in dataset])
    meta = torch.stack([_metadata_tensor(m, dtype) for _, m, _ in dataset])
    scores = torch.tensor([int(r.score) for _, _, r in dataset], dtype=torch.long)
    tags = torch.tensor(
        [[1.0 if r.tags.get(t) else 0.0 for t in TAG_HEAD_ORDER] for _, _, r in dataset],
        dtype=dtype,
    )
    return views, meta, scores, tags


def _split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fraction * n))
    n_val = min(max(n_val, 1 if fraction > 0 and n > 1 else 0), n - 1)
    return perm[n_val:], perm[:n_val]


@torch.no_grad()
def _validation_pass(net: AnnotatorNet, tensors, indices: np.ndarray, config: AnnotatorConfig):
    views, meta, scores, tags = tensors
    net.eval()
    batch = 64
    losses = []
    score_preds = []
    tag_preds = []
    for start in range(0, len(indices), batch):
        sel = torch.from_numpy(indices[start : start + batch])
        score_logits, tag_logits, _ = net(views[sel], meta[sel])
        losses.append(
            _loss_torch(score_logits, tag_logits, scores[sel], tags[sel], config).item()
            * len(sel)
        )
        score_preds.append(score_logits.argmax(dim=-1))
        tag_preds.append(tag_logits >= 0.0)
    loss = sum(losses) / len(indices)
    score_pred = torch.cat(score_preds)
    tag_pred = torch.cat(tag_preds)
    truth_scores = scores[torch.from_numpy(indices)]
    truth_tags = tags[torch.from_numpy(indices)] >= 0.5

    exact = (score_pred == truth_scores).float().mean().item()
    relaxed_mask = (score_pred == truth_scores) | ((score_pred >= 2) & (truth_scores >= 2))
    metrics = {
        "score_accuracy": exact,
        "relaxed_score_accuracy": relaxed_mask.float().mean().item(),
    }
    for k, tag in enumerate(TAG_HEAD_ORDER):
        metrics[f"{tag}_accuracy"] = (tag_pred[:, k] == truth_tags[:, k]).float().mean().item()
    return loss, metrics


def train(
    dataset: Sequence[Sample],
    config: AnnotatorConfig,
    dtype: torch.dtype = torch.float32,
) -> TrainedAnnotator:
    """Mini-batch stochastic training of the annotator.

    A seeded fraction of the dataset is held out internally; the returned
    model carries the parameters of the epoch with the best validation
    loss. Deterministic for a fixed seed (optimization runs single
    threaded). Raises TrainingDivergedError if the loss goes non-finite.
    """
    if len(dataset) == 0:
        raise TrainingError("training dataset is empty")
    for _, _, record in dataset:
        if record.source != SOURCE_HUMAN:
            raise TrainingError(f"training labels must be human; {record.object_id!r} is not")

    torch.set_num_threads(1)
    net = build_network(config, dtype)
    tensors = _stack_dataset(dataset, dtype)
    for stack, _, _ in dataset:
        _check_input_shape(net, stack)

    train_idx, val_idx = _split_indices(len(dataset), config.val_fraction, config.seed)
    views, meta, scores, tags = tensors

    # Metadata normalization statistics frozen from the training split.
    train_meta = torch.log1p(meta[torch.from_numpy(train_idx)])
    std, mean = torch.std_mean(train_meta, dim=0, unbiased=False)
    net.set_metadata_stats(mean, std)

    trainable = [p for p in net.parameters() if p.requires_grad]
    if config.optimizer == "sgd":
        optimizer: torch.optim.Optimizer = torch.optim.SGD(
            trainable, lr=config.learning_rate, momentum=config.momentum
        )
    else:
        optimizer = torch.optim.Adam(trainable, lr=config.learning_rate)

    shuffler = torch.Generator().manual_seed(config.seed)
    history: list[EpochStats] = []
    best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    best_val = math.inf

    for epoch in range(config.epochs):
        net.train()
        order = torch.randperm(len(train_idx), generator=shuffler).numpy()
        epoch_loss = 0.0
        for start in range(0, len(train_idx), config.batch_size):
            sel = torch.from_numpy(train_idx[order[start : start + config.batch_size]])
            optimizer.zero_grad()
            score_logits, tag_logits, _ = net(views[sel], meta[sel])
            loss = _loss_torch(score_logits, tag_logits, scores[sel], tags[sel], config)
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(sel)
        epoch_loss /= len(train_idx)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, epoch_loss)

        if len(val_idx):
            val_loss, val_metrics = _validation_pass(net, tensors, val_idx, config)
        else:
            val_loss, val_metrics = epoch_loss, {}
        history.append(EpochStats(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss, val_metrics=val_metrics))
        if val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}

    net.load_state_dict(best_state)
    net.eval()
    return TrainedAnnotator(config=config, network=net, training_history=history)


def predict(
    model: TrainedAnnotator,
    views: ViewStack,
    metadata: ObjectMetadata,
    thresholds: Optional[dict[str, float]] = None,
    created_at: Optional[datetime] = None,
) -> AnnotationRecord:
    """Annotate one object: argmax score, thresholded tags, model provenance.

    A tag fires when sigmoid(logit) >= its threshold (default 0.5 each);
    confidences carry the max score probability and each tag's sigmoid.
    """
    thresholds = thresholds or {}
    outputs = forward(model, views, metadata)

    shifted = outputs.score_logits - outputs.score_logits.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    score = QualityScore(int(np.argmax(probs)))

    tag_values = {}
    confidences: dict[str, float] = {"score": float(probs.max())}
    for tag, logit in zip(TAG_HEAD_ORDER, outputs.tag_logits):
        prob = 1.0 / (1.0 + math.exp(-logit))
        tag_values[tag] = prob >= thresholds.get(tag, 0.5)
        confidences[tag] = prob

    record = AnnotationRecord(
        object_id=views.object_id,
        score=score,
        tags=BinaryTagSet(**tag_values),
        source=SOURCE_MODEL,
        confidences=confidences,
        created_at=created_at if created_at is not None else utc_now(),
    )
    violations = validate_record(record)
    if violations:  # pragma: no cover - construction always conforms
        raise RuntimeError(f"predict produced an invalid record: {violations}")
    return record


def save_annotator(model: TrainedAnnotator, path: Path | str) -> None:
    """Versioned checkpoint: magic + JSON text header + torch parameter blob."""
    header = {
        "format": "meshcurate-annotator",
        "version": 1,
        "dtype": str(next(model.network.parameters()).dtype).removeprefix("torch."),
        "config": model.config.to_dict(),
        "history": [
            {
                "epoch": h.epoch,
                "train_loss": h.train_loss,
                "val_loss": h.val_loss,
                "val_metrics": h.val_metrics,
            }
            for h in model.training_history
        ],
    }
    blob = io.BytesIO()
    torch.save(model.network.state_dict(), blob)
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC + b"\n")
        handle.write(json.dumps(header).encode("utf-8") + b"\n")
        handle.write(blob.getvalue())


def load_annotator(path: Path | str) -> TrainedAnnotator:
    with open(path, "rb") as handle:
        magic = handle.readline().rstrip(b"\n")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an annotator checkpoint")
        header = json.loads(handle.readline().decode("utf-8"))
        blob = handle.read()
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")

    config = AnnotatorConfig.from_dict(header["config"])
    dtype = getattr(torch, header.get("dtype", "float32"))
    net = build_network(config, dtype)
    state = torch.load(io.BytesIO(blob), map_location="cpu", weights_only=True)
    net.load_state_dict(state)
    net.eval()
    history = [
        EpochStats(
            epoch=h["epoch"],
            train_loss=h["train_loss"],
            val_loss=h["val_loss"],
            val_metrics=h.get("val_metrics", {}),
        )
        for h in header.get("history", [])
    ]
    return TrainedAnnotator(config=config, network=net, training_history=history)

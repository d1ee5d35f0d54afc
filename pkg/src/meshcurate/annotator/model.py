"""Multi-head annotation network.

Per-view features from a CNN backbone feed a recurrent sequence encoder;
additive attention pools the hidden states into a context vector, which is
fused with an embedded metadata vector and passed to six classification
heads (one 4-way score head, five binary tag heads).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import torch
from torch import nn

from ..labels import TAG_HEAD_ORDER

__all__ = [
    "BackboneKind",
    "BackboneSpec",
    "AnnotatorConfig",
    "HeadOutputs",
    "ShapeMismatchError",
    "TinyScratchBackbone",
    "PretrainedBackbone",
    "AdditiveAttention",
    "DotAttention",
    "AnnotatorNet",
    "build_network",
]

N_SCORE_CLASSES = 4
N_TAGS = len(TAG_HEAD_ORDER)
METADATA_FEATURES = 4  # vertex, edge, view, like counts


class ShapeMismatchError(ValueError):
    pass


class BackboneKind(str, Enum):
    PRETRAINED_DEEP = "pretrained_deep"
    TINY_SCRATCH = "tiny_scratch"


@dataclass(frozen=True)
class BackboneSpec:
    kind: BackboneKind = BackboneKind.TINY_SCRATCH
    feature_dim: int = 64
    frozen: bool = False

    def __post_init__(self) -> None:
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.kind == BackboneKind.PRETRAINED_DEEP and self.feature_dim != 2048:
            raise ValueError("the pretrained deep backbone emits 2048-dim features")


@dataclass(frozen=True)
class AnnotatorConfig:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    rnn_hidden: int = 256
    attention_dim: int = 128
    metadata_dim: int = 32
    n_views: int = 40
    learning_rate: float = 1e-2
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    head_loss_weights: dict[str, float] = field(
        default_factory=lambda: {head: 1.0 for head in ("score",) + TAG_HEAD_ORDER}
    )
    # "identity" bypasses the recurrent stage (diagnostic mode).
    recurrent: str = "lstm"
    attention: str = "additive"
    optimizer: str = "sgd"
    momentum: float = 0.9
    val_fraction: float = 0.2

    def __post_init__(self) -> None:
        for name in ("rnn_hidden", "attention_dim", "metadata_dim", "n_views", "epochs", "batch_size"):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if any(w < 0.0 for w in self.head_loss_weights.values()):
            raise ValueError("head loss weights must be nonnegative")
        if self.recurrent not in ("lstm", "identity"):
            raise ValueError(f"recurrent must be 'lstm' or 'identity', got {self.recurrent!r}")
        if self.attention not in ("additive", "dot"):
            raise ValueError(f"attention must be 'additive' or 'dot', got {self.attention!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

    def weight_for(self, head: str) -> float:
        return float(self.head_loss_weights.get(head, 1.0))

    def to_dict(self) -> dict:
        return {
            "backbone": {
                "kind": self.backbone.kind.value,
                "feature_dim": self.backbone.feature_dim,
                "frozen": self.backbone.frozen,
            },
            "rnn_hidden": self.rnn_hidden,
            "attention_dim": self.attention_dim,
            "metadata_dim": self.metadata_dim,
            "n_views": self.n_views,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "head_loss_weights": dict(self.head_loss_weights),
            "recurrent": self.recurrent,
            "attention": self.attention,
            "optimizer": self.optimizer,
            "momentum": self.momentum,
            "val_fraction": self.val_fraction,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AnnotatorConfig":
        backbone_raw = dict(raw.get("backbone", {}))
        backbone = BackboneSpec(
            kind=BackboneKind(backbone_raw.get("kind", BackboneKind.TINY_SCRATCH.value)),
            feature_dim=int(backbone_raw.get("feature_dim", 64)),
            frozen=bool(backbone_raw.get("frozen", False)),
        )
        kwargs = {k: v for k, v in raw.items() if k != "backbone"}
        return cls(backbone=backbone, **kwargs)


@dataclass
class HeadOutputs:
    """One forward pass: score logits, tag logits, attention weights."""

    score_logits: np.ndarray  # (4,)
    tag_logits: np.ndarray  # (5,) in TAG_HEAD_ORDER
    attention_weights: np.ndarray  # (n_views,)

    def __post_init__(self) -> None:
        self.score_logits = np.asarray(self.score_logits, dtype=np.float64).reshape(-1)
        self.tag_logits = np.asarray(self.tag_logits, dtype=np.float64).reshape(-1)
        self.attention_weights = np.asarray(self.attention_weights, dtype=np.float64).reshape(-1)
        if self.score_logits.shape != (N_SCORE_CLASSES,):
            raise ShapeMismatchError(f"score_logits must have length 4, got {self.score_logits.shape}")
        if self.tag_logits.shape != (N_TAGS,):
            raise ShapeMismatchError(f"tag_logits must have length 5, got {self.tag_logits.shape}")
        for name, values in (("score_logits", self.score_logits), ("tag_logits", self.tag_logits)):
            if not np.isfinite(values).all():
                raise ValueError(f"{name} contains NaN/Inf")
        if (self.attention_weights < -1e-9).any() or abs(self.attention_weights.sum() - 1.0) > 1e-6:
            raise ValueError("attention weights must be nonnegative and sum to 1")


class TinyScratchBackbone(nn.Module):
    """Small convolutional feature extractor trainable in minutes on CPU.

    Inputs are augmented with fixed opponent color channels (red-green and
    blue-yellow) so chroma texture reads like ordinary edges even though the
    shading keeps hue constant. Accepts any input resolution thanks to the
    adaptive pooling stage.
    """

    expected_resolution: Optional[tuple[int, int]] = None

    def __init__(self, feature_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(5, 8, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1)
        # Average pooling keeps color-level cues, max pooling keeps peak
        # edge/texture responses; both feed the projection.
        self.avg_pool = nn.AdaptiveAvgPool2d((4, 4))
        self.max_pool = nn.AdaptiveMaxPool2d((4, 4))
        self.fc = nn.Linear(2 * 16 * 16, feature_dim)

    @staticmethod
    def _opponent_channels(images: torch.Tensor) -> torch.Tensor:
        red, green, blue = images[:, 0:1], images[:, 1:2], images[:, 2:3]
        red_green = red - green
        blue_yellow = blue - 0.5 * (red + green)
        return torch.cat([images, red_green, blue_yellow], dim=1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = torch.relu(self.conv1(self._opponent_channels(images)))
        x = torch.relu(self.conv2(x))
        pooled = torch.cat([self.avg_pool(x).flatten(1), self.max_pool(x).flatten(1)], dim=1)
        return self.fc(pooled)


class PretrainedBackbone(nn.Module):
    """Penultimate features of a published deep image classifier (ResNet-50).

    Weights download only when pretrained=True; offline environments can
    still construct the architecture for fine-tuning from scratch.
    """

    expected_resolution: Optional[tuple[int, int]] = (224, 224)

    def __init__(self, pretrained: bool = False):
        super().__init__()
        try:
            from torchvision.models import resnet50
        except ImportError as exc:  # pragma: no cover - torchvision ships with torch here
            raise RuntimeError("torchvision is required for the pretrained backbone") from exc
        weights = "IMAGENET1K_V2" if pretrained else None
        net = resnet50(weights=weights)
        net.fc = nn.Identity()
        self.net = net

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images)


class AdditiveAttention(nn.Module):
    """score_i = v^T tanh(W h_i); weights = softmax over views."""

    def __init__(self, hidden_dim: int, attention_dim: int):
        super().__init__()
        self.project = nn.Linear(hidden_dim, attention_dim)
        self.score = nn.Linear(attention_dim, 1, bias=False)

    def forward(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        scores = self.score(torch.tanh(self.project(hidden))).squeeze(-1)  # (B, V)
        weights = torch.softmax(scores, dim=-1)
        context = torch.einsum("bv,bvh->bh", weights, hidden)
        return weights, context


class DotAttention(nn.Module):
    """Scaled dot-product attention against a learned query vector."""

    def __init__(self, hidden_dim: int, attention_dim: int):
        super().__init__()
        del attention_dim  # query lives in hidden space
        self.query = nn.Parameter(torch.zeros(hidden_dim))
        nn.init.normal_(self.query, std=hidden_dim**-0.5)
        self.scale = hidden_dim**-0.5

    def forward(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        scores = (hidden * self.query).sum(-1) * self.scale
        weights = torch.softmax(scores, dim=-1)
        context = torch.einsum("bv,bvh->bh", weights, hidden)
        return weights, context


class AnnotatorNet(nn.Module):
    def __init__(self, config: AnnotatorConfig):
        super().__init__()
        self.config = config
        if config.backbone.kind == BackboneKind.TINY_SCRATCH:
            self.backbone: nn.Module = TinyScratchBackbone(config.backbone.feature_dim)
        else:
            self.backbone = PretrainedBackbone()
        if config.backbone.frozen:
            for param in self.backbone.parameters():
                param.requires_grad_(False)

        feature_dim = config.backbone.feature_dim
        if config.recurrent == "lstm":
            self.rnn: Optional[nn.LSTM] = nn.LSTM(feature_dim, config.rnn_hidden, batch_first=True)
            hidden_dim = config.rnn_hidden
        else:
            self.rnn = None
            hidden_dim = feature_dim
        self.hidden_dim = hidden_dim

        if config.attention == "additive":
            self.attention: nn.Module = AdditiveAttention(hidden_dim, config.attention_dim)
        else:
            self.attention = DotAttention(hidden_dim, config.attention_dim)

        self.metadata_fc = nn.Linear(METADATA_FEATURES, config.metadata_dim)
        self.register_buffer("meta_mean", torch.zeros(METADATA_FEATURES))
        self.register_buffer("meta_std", torch.ones(METADATA_FEATURES))

        joint_dim = hidden_dim + config.metadata_dim
        self.score_head = nn.Linear(joint_dim, N_SCORE_CLASSES)
        self.tag_head = nn.Linear(joint_dim, N_TAGS)

    @property
    def expected_resolution(self) -> Optional[tuple[int, int]]:
        return self.backbone.expected_resolution

    def set_metadata_stats(self, mean: torch.Tensor, std: torch.Tensor) -> None:
        """Freeze normalization statistics (computed on the training split)."""
        with torch.no_grad():
            self.meta_mean.copy_(mean.to(self.meta_mean.dtype))
            self.meta_std.copy_(torch.clamp(std.to(self.meta_std.dtype), min=1e-6))

    def normalize_metadata(self, metadata: torch.Tensor) -> torch.Tensor:
        return (torch.log1p(metadata) - self.meta_mean) / self.meta_std

    def forward(
        self, views: torch.Tensor, metadata: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """views: (B, V, 3, H, W); metadata: (B, 4) raw counts."""
        batch, n_views = views.shape[:2]
        features = self.backbone(views.reshape(batch * n_views, *views.shape[2:]))
        features = features.reshape(batch, n_views, -1)
        hidden = self.rnn(features)[0] if self.rnn is not None else features
        weights, context = self.attention(hidden)
        meta_embedding = self.metadata_fc(self.normalize_metadata(metadata))
        joint = torch.cat([context, meta_embedding], dim=-1)
        return self.score_head(joint), self.tag_head(joint), weights


def build_network(config: AnnotatorConfig, dtype: torch.dtype = torch.float32) -> AnnotatorNet:
    """Construct the network with seed-reproducible initialization."""
    torch.manual_seed(config.seed)
    return AnnotatorNet(config).to(dtype)

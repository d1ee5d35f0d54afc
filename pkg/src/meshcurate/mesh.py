"""Triangle mesh carrier type and mesh statistics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .labels import ObjectMetadata

__all__ = [
    "MeshAsset",
    "MeshError",
    "EmptyMeshError",
    "extract_metadata",
    "read_platform_stats",
]


class MeshError(ValueError):
    """Base error for mesh loading and validation problems."""


class EmptyMeshError(MeshError):
    """The container held no renderable triangles."""


@dataclass
class MeshAsset:
    """A triangulated mesh: float64 vertices (n, 3) and int faces (m, 3).

    `vertex_colors` is an optional (n, 3) float array in [0, 1]; when absent
    the renderer falls back to mid-gray.
    """

    object_id: str
    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: Optional[np.ndarray] = None
    source_path: Optional[Path] = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.vertex_colors is not None:
            self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
            if len(self.vertex_colors) != len(self.vertices):
                raise MeshError(
                    f"vertex_colors length {len(self.vertex_colors)} != vertex count {len(self.vertices)}"
                )
        if len(self.faces) == 0:
            raise EmptyMeshError(f"mesh {self.object_id!r} has no triangles")
        if not np.isfinite(self.vertices).all():
            raise MeshError(f"mesh {self.object_id!r} has non-finite vertex coordinates")
        if self.faces.min(initial=0) < 0 or self.faces.max(initial=-1) >= len(self.vertices):
            raise MeshError(f"mesh {self.object_id!r} has face indices outside [0, {len(self.vertices)})")

    @property
    def vertex_count(self) -> int:
        return int(len(self.vertices))

    @property
    def face_count(self) -> int:
        return int(len(self.faces))

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounding_radius(self) -> float:
        """Radius of the bounding sphere centered at the centroid."""
        deltas = self.vertices - self.centroid()
        return float(np.sqrt((deltas * deltas).sum(axis=1).max()))

    def unique_edge_count(self) -> int:
        return _count_unique_edges(self.faces)

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        cross = np.cross(b - a, c - a)
        return 0.5 * np.sqrt((cross * cross).sum(axis=1))


def _count_unique_edges(faces: np.ndarray) -> int:
    # Undirected edges: canonicalize each (i, j) with i < j and dedupe.
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    return int(len(np.unique(edges, axis=0)))


def extract_metadata(
    asset: MeshAsset,
    platform_stats: Optional[dict[str, int]] = None,
) -> ObjectMetadata:
    """Derive annotator metadata from a mesh plus optional platform counters.

    Edge count is the number of unique undirected edges across all faces.
    Missing platform stats default to zero.
    """
    stats = platform_stats or {}
    return ObjectMetadata(
        vertex_count=asset.vertex_count,
        edge_count=asset.unique_edge_count(),
        view_count=int(stats.get("view_count", 0)),
        like_count=int(stats.get("like_count", 0)),
    )


def read_platform_stats(path: Path | str) -> dict[str, dict[str, int]]:
    """Read per-object platform counters from a CSV.

    Expected header: object_id,view_count,like_count.
    """
    stats: dict[str, dict[str, int]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"object_id", "view_count", "like_count"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"platform stats CSV must have header object_id,view_count,like_count, got {reader.fieldnames}")
        for row in reader:
            stats[row["object_id"]] = {
                "view_count": int(row["view_count"]),
                "like_count": int(row["like_count"]),
            }
    return stats

"""Chamfer-distance evaluation between generated and reference meshes."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, TextIO

import numpy as np
from scipy.spatial import cKDTree

from .mesh import MeshAsset

__all__ = [
    "PointCloud",
    "ComparisonRow",
    "ComparisonResult",
    "GeometryError",
    "DegenerateMeshError",
    "sample_surface_points",
    "normalize_cloud",
    "chamfer_distance",
    "compare_models",
    "object_sample_seed",
    "write_comparison_csv",
    "comparison_to_json",
]

TIE_RELATIVE_TOLERANCE = 1e-6


class GeometryError(ValueError):
    pass


class DegenerateMeshError(GeometryError):
    """Mesh has no positive-area triangles to sample from."""


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) float64
    source_id: str = ""
    seed: int = 0

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise GeometryError("point cloud is empty")
        if not np.isfinite(self.points).all():
            raise GeometryError("point cloud has non-finite coordinates")

    def __len__(self) -> int:
        return int(len(self.points))


@dataclass(frozen=True)
class ComparisonRow:
    object_name: str
    chamfer_a: float
    chamfer_b: float
    winner: str  # "A" | "B" | "TIE"


@dataclass(frozen=True)
class ComparisonResult:
    rows: list[ComparisonRow]
    a_wins: int
    b_wins: int
    ties: int


def sample_surface_points(asset: MeshAsset, n: int, seed: int) -> PointCloud:
    """Sample n points area-uniformly from the mesh surface.

    Triangles are chosen proportionally to area and points placed by uniform
    barycentric coordinates; identical seeds give identical clouds.
    """
    if n < 1:
        raise GeometryError(f"need n >= 1 points, got {n}")
    areas = asset.triangle_areas()
    total = float(areas.sum())
    if total <= 0.0:
        raise DegenerateMeshError(f"mesh {asset.object_id!r} has zero surface area")

    rng = np.random.default_rng(seed)
    face_choice = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    sqrt_u = np.sqrt(u)
    b0 = 1.0 - sqrt_u
    b1 = sqrt_u * (1.0 - v)
    b2 = sqrt_u * v

    tri = asset.vertices[asset.faces[face_choice]]  # (n, 3, 3)
    points = b0[:, None] * tri[:, 0] + b1[:, None] * tri[:, 1] + b2[:, None] * tri[:, 2]
    return PointCloud(points=points, source_id=asset.object_id, seed=seed)


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, float]:
    """Translate to zero centroid and scale the bounding-box diagonal to 1.

    Returns the normalized cloud and the scale factor applied.
    """
    centered = cloud.points - cloud.points.mean(axis=0)
    extent = centered.max(axis=0) - centered.min(axis=0)
    diagonal = float(np.sqrt((extent * extent).sum()))
    if diagonal <= 0.0:
        raise GeometryError(f"cloud {cloud.source_id!r} has zero extent")
    scale = 1.0 / diagonal
    return PointCloud(points=centered * scale, source_id=cloud.source_id, seed=cloud.seed), scale


def _nearest_squared(query: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Exact squared nearest-neighbor distances from each query point.

    A k-d tree finds the neighbor index; the squared distance is then
    recomputed with plain array arithmetic so the result matches the
    brute-force double loop bit for bit.
    """
    tree = cKDTree(target)
    _, idx = tree.query(query, k=1)
    delta = query - target[idx]
    return (delta * delta).sum(axis=1)


def chamfer_distance(a: PointCloud, b: PointCloud, squared: bool = True) -> float:
    """Symmetric chamfer distance between two point clouds.

    Default form: mean squared nearest-neighbor distance from A to B plus
    the same from B to A. squared=False uses unsquared (Euclidean)
    nearest-neighbor distances instead.
    """
    a_to_b = _nearest_squared(a.points, b.points)
    b_to_a = _nearest_squared(b.points, a.points)
    if not squared:
        a_to_b = np.sqrt(a_to_b)
        b_to_a = np.sqrt(b_to_a)
    return float(a_to_b.mean() + b_to_a.mean())


def object_sample_seed(name: str, run_seed: int) -> int:
    """Per-object sampling seed: stable hash of the name XOR the run seed."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return (int.from_bytes(digest[:8], "big") ^ (run_seed & 0xFFFFFFFFFFFFFFFF)) & 0x7FFFFFFFFFFFFFFF


def compare_models(
    references: Sequence[MeshAsset],
    candidates_a: Sequence[MeshAsset],
    candidates_b: Sequence[MeshAsset],
    n_points: int = 10_000,
    seed: int = 0,
    squared: bool = True,
) -> ComparisonResult:
    """Score two candidate model outputs against shared references.

    Lists are aligned by object_id; per object all three meshes are sampled
    and normalized, each candidate's chamfer distance to the reference is
    computed, and the smaller distance wins (ties within relative 1e-6).
    """
    ref_by_name = {m.object_id: m for m in references}
    a_by_name = {m.object_id: m for m in candidates_a}
    b_by_name = {m.object_id: m for m in candidates_b}
    if set(ref_by_name) != set(a_by_name) or set(ref_by_name) != set(b_by_name):
        missing_a = sorted(set(ref_by_name) ^ set(a_by_name))
        missing_b = sorted(set(ref_by_name) ^ set(b_by_name))
        raise GeometryError(f"object name mismatch between inputs (a: {missing_a}, b: {missing_b})")

    rows: list[ComparisonRow] = []
    a_wins = b_wins = ties = 0
    for name in sorted(ref_by_name):
        obj_seed = object_sample_seed(name, seed)
        ref_cloud, _ = normalize_cloud(sample_surface_points(ref_by_name[name], n_points, obj_seed))
        a_cloud, _ = normalize_cloud(sample_surface_points(a_by_name[name], n_points, obj_seed + 1))
        b_cloud, _ = normalize_cloud(sample_surface_points(b_by_name[name], n_points, obj_seed + 2))
        cd_a = chamfer_distance(a_cloud, ref_cloud, squared=squared)
        cd_b = chamfer_distance(b_cloud, ref_cloud, squared=squared)

        if abs(cd_a - cd_b) <= TIE_RELATIVE_TOLERANCE * max(cd_a, cd_b, 1e-300):
            winner = "TIE"
            ties += 1
        elif cd_a < cd_b:
            winner = "A"
            a_wins += 1
        else:
            winner = "B"
            b_wins += 1
        rows.append(ComparisonRow(object_name=name, chamfer_a=cd_a, chamfer_b=cd_b, winner=winner))

    return ComparisonResult(rows=rows, a_wins=a_wins, b_wins=b_wins, ties=ties)


def write_comparison_csv(result: ComparisonResult, stream: TextIO) -> None:
    """CSV rows per object plus a trailing aggregate comment line."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["object_name", "cd_a", "cd_b", "winner"])
    for row in result.rows:
        writer.writerow([row.object_name, f"{row.chamfer_a:.9g}", f"{row.chamfer_b:.9g}", row.winner])
    stream.write(f"# aggregate a_wins={result.a_wins} b_wins={result.b_wins} ties={result.ties}\n")


def comparison_to_json(result: ComparisonResult) -> str:
    """Bar-chart-ready JSON: one entry per object with both distances."""
    payload = {
        "objects": [
            {
                "object_name": row.object_name,
                "cd_a": row.chamfer_a,
                "cd_b": row.chamfer_b,
                "winner": row.winner,
            }
            for row in result.rows
        ],
        "aggregate": {"a_wins": result.a_wins, "b_wins": result.b_wins, "ties": result.ties},
    }
    return json.dumps(payload, indent=1)

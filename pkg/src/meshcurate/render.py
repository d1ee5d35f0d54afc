"""Deterministic multiview rendering of mesh assets.

Cameras sit on a sphere around the mesh (spherical Fibonacci lattice with
optional seeded jitter) and the software rasterizer produces bit-stable
float images: z-buffered flat shading lit by a headlight over a white
background, with an optional black wireframe overlay.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .mesh import MeshAsset

__all__ = [
    "CameraPose",
    "ViewStack",
    "RenderError",
    "plan_cameras",
    "render_views",
    "render_object",
    "dump_views",
]

DEFAULT_FOV_DEG = 40.0
DEFAULT_RADIUS_SCALE = 2.5
DEFAULT_RESOLUTION = (224, 224)
MAX_JITTER_DEG = 5.0
AMBIENT = 0.25
BASE_GRAY = 0.5


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class CameraPose:
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    fov_deg: float = DEFAULT_FOV_DEG

    def __post_init__(self) -> None:
        if not 0.0 < self.fov_deg < 180.0:
            raise RenderError(f"fov_deg must be in (0, 180), got {self.fov_deg}")
        pos = np.asarray(self.position, dtype=np.float64)
        target = np.asarray(self.look_at, dtype=np.float64)
        up = np.asarray(self.up, dtype=np.float64)
        view = target - pos
        if not np.any(view):
            raise RenderError("camera position equals look_at")
        view = view / np.linalg.norm(view)
        up_norm = np.linalg.norm(up)
        if up_norm == 0.0 or abs(float(np.dot(up / up_norm, view))) > 1.0 - 1e-9:
            raise RenderError("up vector is parallel to the view direction")

    def as_dict(self) -> dict:
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov_deg": self.fov_deg,
        }


@dataclass
class ViewStack:
    """Ordered rendered views of one object plus the poses that made them."""

    object_id: str
    images: np.ndarray  # (n_views, H, W, 3) float32 in [0, 1]
    poses: list[CameraPose]
    seed: int
    degenerate: bool = False

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 4 or self.images.shape[3] != 3:
            raise RenderError(f"images must have shape (n, H, W, 3), got {self.images.shape}")
        if self.images.shape[0] != len(self.poses):
            raise RenderError(f"{self.images.shape[0]} images for {len(self.poses)} poses")

    @property
    def n_views(self) -> int:
        return int(self.images.shape[0])

    @property
    def resolution(self) -> tuple[int, int]:
        return (int(self.images.shape[1]), int(self.images.shape[2]))


def _fibonacci_directions(n: int) -> np.ndarray:
    """Unit directions of the spherical Fibonacci lattice, lattice order."""
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    radius = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden_angle = math.pi * (3.0 - math.sqrt(5.0))
    theta = golden_angle * i
    return np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=1)


def _perpendicular_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(direction[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, direction)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(direction, e1)
    return e1, e2


def plan_cameras(
    n: int,
    seed: int,
    radius_scale: float = DEFAULT_RADIUS_SCALE,
    *,
    centroid: Sequence[float] = (0.0, 0.0, 0.0),
    bounding_radius: float = 1.0,
    fov_deg: float = DEFAULT_FOV_DEG,
    jitter: bool = True,
) -> list[CameraPose]:
    """Place n cameras on a sphere of radius radius_scale * bounding_radius.

    Directions come from the spherical Fibonacci lattice, ordered by
    ascending latitude then longitude (the canonical camera order the
    sequence encoder sees). With jitter enabled the seed perturbs each
    direction by at most 5 degrees, deterministically.
    """
    if n < 1:
        raise RenderError(f"need at least one camera, got n={n}")
    if bounding_radius <= 0.0:
        bounding_radius = 1.0
    center = np.asarray(centroid, dtype=np.float64)
    radius = radius_scale * bounding_radius

    directions = _fibonacci_directions(n)
    latitude = np.arcsin(np.clip(directions[:, 2], -1.0, 1.0))
    longitude = np.arctan2(directions[:, 1], directions[:, 0])
    order = np.lexsort((longitude, latitude))
    directions = directions[order]

    rng = np.random.default_rng(seed)
    poses: list[CameraPose] = []
    max_jitter = math.radians(MAX_JITTER_DEG)
    for direction in directions:
        if jitter:
            e1, e2 = _perpendicular_basis(direction)
            alpha = rng.uniform(0.0, max_jitter)
            theta = rng.uniform(0.0, 2.0 * math.pi)
            direction = (
                math.cos(alpha) * direction
                + math.sin(alpha) * (math.cos(theta) * e1 + math.sin(theta) * e2)
            )
            direction = direction / np.linalg.norm(direction)
        up = (0.0, 0.0, 1.0) if abs(direction[2]) < 0.99 else (1.0, 0.0, 0.0)
        position = center + radius * direction
        poses.append(
            CameraPose(
                position=tuple(float(v) for v in position),
                look_at=tuple(float(v) for v in center),
                up=up,
                fov_deg=fov_deg,
            )
        )
    return poses


def _camera_frame(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Rows of the world-to-camera rotation (right, up, backward) + origin."""
    position = np.asarray(pose.position, dtype=np.float64)
    target = np.asarray(pose.look_at, dtype=np.float64)
    up_hint = np.asarray(pose.up, dtype=np.float64)
    backward = position - target
    backward = backward / np.linalg.norm(backward)
    right = np.cross(up_hint, backward)
    right = right / np.linalg.norm(right)
    up = np.cross(backward, right)
    return np.stack([right, up, backward]), position


def _shade_faces(asset: MeshAsset, camera_pos: np.ndarray) -> np.ndarray:
    """Flat per-face color: base color lit by a headlight at the camera."""
    v0 = asset.vertices[asset.faces[:, 0]]
    v1 = asset.vertices[asset.faces[:, 1]]
    v2 = asset.vertices[asset.faces[:, 2]]
    normal = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(normal, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    normal = normal / norm

    centroid = (v0 + v1 + v2) / 3.0
    to_light = camera_pos[None, :] - centroid
    light_norm = np.linalg.norm(to_light, axis=1, keepdims=True)
    light_norm[light_norm == 0.0] = 1.0
    to_light = to_light / light_norm
    # Two-sided headlight: interior-facing triangles still read correctly.
    intensity = np.abs((normal * to_light).sum(axis=1))

    if asset.vertex_colors is not None:
        base = asset.vertex_colors[asset.faces].mean(axis=1)
    else:
        base = np.full((len(asset.faces), 3), BASE_GRAY)
    return np.clip(base * (AMBIENT + (1.0 - AMBIENT) * intensity)[:, None], 0.0, 1.0)


def _project(points: np.ndarray, pose: CameraPose, width: int, height: int):
    """World points -> (pixel xy, positive view depth)."""
    rotation, position = _camera_frame(pose)
    cam = (points - position) @ rotation.T
    depth = -cam[:, 2]
    focal = 1.0 / math.tan(math.radians(pose.fov_deg) / 2.0)
    aspect = width / height
    safe = np.where(depth > 1e-9, depth, 1e-9)
    ndc_x = (focal / aspect) * cam[:, 0] / safe
    ndc_y = focal * cam[:, 1] / safe
    px = (ndc_x * 0.5 + 0.5) * width
    py = (1.0 - (ndc_y * 0.5 + 0.5)) * height
    return np.stack([px, py], axis=1), depth


def _rasterize(
    asset: MeshAsset,
    pose: CameraPose,
    resolution: tuple[int, int],
    edge_overlay: bool,
) -> np.ndarray:
    height, width = resolution
    image = np.ones((height, width, 3), dtype=np.float64)
    inv_depth = np.zeros((height, width), dtype=np.float64)

    screen, depth = _project(asset.vertices, pose, width, height)
    _, camera_pos = _camera_frame(pose)
    colors = _shade_faces(asset, camera_pos)

    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5

    for face_index, (i0, i1, i2) in enumerate(asset.faces):
        if depth[i0] <= 1e-9 or depth[i1] <= 1e-9 or depth[i2] <= 1e-9:
            continue  # behind the camera; poses keep meshes in front
        p0, p1, p2 = screen[i0], screen[i1], screen[i2]
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if area == 0.0:
            continue

        min_x = max(int(math.floor(min(p0[0], p1[0], p2[0]) - 0.5)), 0)
        max_x = min(int(math.ceil(max(p0[0], p1[0], p2[0]) + 0.5)), width - 1)
        min_y = max(int(math.floor(min(p0[1], p1[1], p2[1]) - 0.5)), 0)
        max_y = min(int(math.ceil(max(p0[1], p1[1], p2[1]) + 0.5)), height - 1)
        if min_x > max_x or min_y > max_y:
            continue

        gx = xs[min_x : max_x + 1][None, :]
        gy = ys[min_y : max_y + 1][:, None]
        w0 = (p2[0] - p1[0]) * (gy - p1[1]) - (p2[1] - p1[1]) * (gx - p1[0])
        w1 = (p0[0] - p2[0]) * (gy - p2[1]) - (p0[1] - p2[1]) * (gx - p2[0])
        w2 = (p1[0] - p0[0]) * (gy - p0[1]) - (p1[1] - p0[1]) * (gx - p0[0])
        if area > 0.0:
            inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        else:
            inside = (w0 <= 0.0) & (w1 <= 0.0) & (w2 <= 0.0)
        if not inside.any():
            continue

        b0 = w0 / area
        b1 = w1 / area
        b2 = w2 / area
        # 1/depth interpolates linearly in screen space.
        pixel_inv_depth = b0 / depth[i0] + b1 / depth[i1] + b2 / depth[i2]

        patch = inv_depth[min_y : max_y + 1, min_x : max_x + 1]
        win = inside & (pixel_inv_depth > patch)
        if not win.any():
            continue
        patch[win] = pixel_inv_depth[win]
        color_patch = image[min_y : max_y + 1, min_x : max_x + 1]
        color_patch[win] = colors[face_index]

    if edge_overlay:
        _overlay_edges(asset, screen, depth, image, inv_depth)
    return image


def _overlay_edges(
    asset: MeshAsset,
    screen: np.ndarray,
    depth: np.ndarray,
    image: np.ndarray,
    inv_depth: np.ndarray,
) -> None:
    height, width = image.shape[:2]
    edges = np.concatenate(
        [asset.faces[:, [0, 1]], asset.faces[:, [1, 2]], asset.faces[:, [2, 0]]]
    )
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    bias = 1.0 + 1e-3  # let surface edges win the depth test

    for a, b in edges:
        if depth[a] <= 1e-9 or depth[b] <= 1e-9:
            continue
        pa, pb = screen[a], screen[b]
        steps = int(max(abs(pb[0] - pa[0]), abs(pb[1] - pa[1]))) + 1
        t = np.linspace(0.0, 1.0, steps)
        px = np.rint(pa[0] + (pb[0] - pa[0]) * t - 0.5).astype(np.int64)
        py = np.rint(pa[1] + (pb[1] - pa[1]) * t - 0.5).astype(np.int64)
        line_inv_depth = (1.0 - t) / depth[a] + t / depth[b]
        keep = (px >= 0) & (px < width) & (py >= 0) & (py < height)
        px, py, line_inv_depth = px[keep], py[keep], line_inv_depth[keep]
        visible = line_inv_depth * bias >= inv_depth[py, px]
        image[py[visible], px[visible]] = 0.0


def render_views(
    asset: MeshAsset,
    poses: Sequence[CameraPose],
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    edge_overlay: bool = False,
    seed: int = 0,
) -> ViewStack:
    """Rasterize the mesh once per pose.

    Deterministic for fixed inputs. A mesh whose triangles are all
    zero-area renders as background-only images with the stack flagged
    degenerate.
    """
    if len(poses) == 0:
        raise RenderError("render_views requires at least one pose")
    height, width = resolution
    if height < 1 or width < 1:
        raise RenderError(f"bad resolution {resolution}")

    degenerate = bool(np.all(asset.triangle_areas() <= 0.0))
    images = np.empty((len(poses), height, width, 3), dtype=np.float32)
    for k, pose in enumerate(poses):
        if degenerate:
            images[k] = 1.0
        else:
            images[k] = _rasterize(asset, pose, resolution, edge_overlay).astype(np.float32)
    return ViewStack(
        object_id=asset.object_id,
        images=images,
        poses=list(poses),
        seed=seed,
        degenerate=degenerate,
    )


def render_object(
    asset: MeshAsset,
    n_views: int,
    seed: int,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    radius_scale: float = DEFAULT_RADIUS_SCALE,
    edge_overlay: bool = False,
    fov_deg: float = DEFAULT_FOV_DEG,
    jitter: bool = True,
) -> ViewStack:
    """Plan cameras around the asset and render the full stack."""
    poses = plan_cameras(
        n_views,
        seed,
        radius_scale,
        centroid=tuple(asset.centroid()),
        bounding_radius=asset.bounding_radius(),
        fov_deg=fov_deg,
        jitter=jitter,
    )
    return render_views(asset, poses, resolution=resolution, edge_overlay=edge_overlay, seed=seed)


def dump_views(stack: ViewStack, out_dir: Path | str) -> Path:
    """Write view_{k:03d}.png files plus poses.json; returns the directory."""
    from PIL import Image

    target = Path(out_dir) / stack.object_id
    target.mkdir(parents=True, exist_ok=True)
    for k in range(stack.n_views):
        pixels = np.clip(stack.images[k] * 255.0 + 0.5, 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(target / f"view_{k:03d}.png")
    payload = {
        "object_id": stack.object_id,
        "seed": stack.seed,
        "degenerate": stack.degenerate,
        "poses": [pose.as_dict() for pose in stack.poses],
    }
    (target / "poses.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")
    return target

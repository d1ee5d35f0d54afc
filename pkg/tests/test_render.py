import math

import numpy as np
import pytest

from meshcurate.mesh import MeshAsset
from meshcurate.render import (
    CameraPose,
    RenderError,
    ViewStack,
    dump_views,
    plan_cameras,
    render_object,
    render_views,
)

from glb_fixtures import CUBE_FACES, CUBE_VERTICES


@pytest.fixture
def cube() -> MeshAsset:
    return MeshAsset(object_id="cube", vertices=CUBE_VERTICES.astype(np.float64), faces=CUBE_FACES)


class TestPlanCameras:
    def test_requested_count_and_distinct(self):
        poses = plan_cameras(40, seed=7)
        assert len(poses) == 40
        positions = {pose.position for pose in poses}
        assert len(positions) == 40

    def test_single_pose_unjittered_is_plus_z(self):
        poses = plan_cameras(1, seed=0, jitter=False)
        assert len(poses) == 1
        x, y, z = poses[0].position
        assert (x, y) == (0.0, 0.0)
        assert z == pytest.approx(2.5)

    def test_same_seed_bit_identical(self):
        first = plan_cameras(16, seed=3)
        second = plan_cameras(16, seed=3)
        assert first == second

    def test_different_seed_differs(self):
        assert plan_cameras(16, seed=3) != plan_cameras(16, seed=4)

    def test_jitter_bounded_by_five_degrees(self):
        clean = plan_cameras(24, seed=0, jitter=False)
        jittered = plan_cameras(24, seed=11, jitter=True)
        for a, b in zip(clean, jittered):
            u = np.asarray(a.position) / np.linalg.norm(a.position)
            v = np.asarray(b.position) / np.linalg.norm(b.position)
            angle = math.degrees(math.acos(np.clip(np.dot(u, v), -1.0, 1.0)))
            assert angle <= 5.0 + 1e-9

    def test_ordered_by_latitude_then_longitude(self):
        poses = plan_cameras(32, seed=0, jitter=False)
        keys = []
        for pose in poses:
            x, y, z = pose.position
            r = math.sqrt(x * x + y * y + z * z)
            keys.append((math.asin(z / r), math.atan2(y, x)))
        assert keys == sorted(keys)

    def test_radius_scales_with_bounding_radius(self):
        poses = plan_cameras(4, seed=0, bounding_radius=2.0, radius_scale=3.0, jitter=False)
        for pose in poses:
            assert np.linalg.norm(pose.position) == pytest.approx(6.0)

    def test_rejects_zero_cameras(self):
        with pytest.raises(RenderError):
            plan_cameras(0, seed=0)


class TestCameraPose:
    def test_rejects_position_equal_to_target(self):
        with pytest.raises(RenderError):
            CameraPose(position=(1, 1, 1), look_at=(1, 1, 1))

    def test_rejects_parallel_up(self):
        with pytest.raises(RenderError):
            CameraPose(position=(0, 0, 2), look_at=(0, 0, 0), up=(0, 0, 1))

    def test_rejects_bad_fov(self):
        with pytest.raises(RenderError):
            CameraPose(position=(0, 0, 2), look_at=(0, 0, 0), up=(0, 1, 0), fov_deg=180.0)


class TestRenderViews:
    def test_cube_silhouette_matches_analytic_projection(self, cube):
        # Head-on view of the cube: the silhouette is exactly the projected
        # front face, whose NDC half-extent follows from the pinhole model.
        # The oracle counts pixel centers covered by that analytic square.
        radius = 2.5 * math.sqrt(3.0) / 2.0
        fov = 40.0
        pose = CameraPose(position=(0.0, 0.0, radius), look_at=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), fov_deg=fov)
        size = 64
        stack = render_views(cube, [pose], resolution=(size, size))

        half_px = (0.5 / (radius - 0.5)) / math.tan(math.radians(fov) / 2.0) * (size / 2.0)
        centers = np.arange(size) + 0.5
        inside_1d = (centers >= size / 2.0 - half_px) & (centers <= size / 2.0 + half_px)
        expected = int(inside_1d.sum()) ** 2

        mask = (stack.images[0] < 1.0).any(axis=2)
        observed = int(mask.sum())
        assert abs(observed - expected) <= 0.02 * size * size

    def test_bit_identical_across_runs(self, cube):
        poses = plan_cameras(6, seed=5, centroid=(0, 0, 0), bounding_radius=cube.bounding_radius())
        first = render_views(cube, poses, resolution=(48, 48))
        second = render_views(cube, poses, resolution=(48, 48))
        assert first.images.tobytes() == second.images.tobytes()

    def test_empty_pose_list_rejected(self, cube):
        with pytest.raises(RenderError):
            render_views(cube, [])

    def test_output_range_and_finite(self, cube):
        stack = render_object(cube, n_views=5, seed=2, resolution=(32, 32))
        assert np.isfinite(stack.images).all()
        assert stack.images.min() >= 0.0
        assert stack.images.max() <= 1.0

    def test_rotation_consistency_exact(self, cube):
        # 90-degree rotation about z maps coordinates exactly in floating
        # point, so rotating mesh and cameras together must reproduce the
        # images bit for bit.
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        poses = plan_cameras(5, seed=9, bounding_radius=cube.bounding_radius())
        baseline = render_views(cube, poses, resolution=(40, 40))

        rotated_mesh = MeshAsset(
            object_id="cube-rot",
            vertices=cube.vertices @ rot.T,
            faces=cube.faces,
        )
        rotated_poses = [
            CameraPose(
                position=tuple(rot @ np.asarray(p.position)),
                look_at=tuple(rot @ np.asarray(p.look_at)),
                up=tuple(rot @ np.asarray(p.up)),
                fov_deg=p.fov_deg,
            )
            for p in poses
        ]
        rotated = render_views(rotated_mesh, rotated_poses, resolution=(40, 40))
        assert baseline.images.tobytes() == rotated.images.tobytes()

    def test_degenerate_mesh_renders_background_and_flags(self):
        flat = MeshAsset(
            object_id="flat",
            vertices=np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]),
            faces=np.array([[0, 1, 2]]),
        )
        stack = render_views(flat, plan_cameras(2, seed=0), resolution=(16, 16))
        assert stack.degenerate
        assert np.all(stack.images == 1.0)

    def test_edge_overlay_darkens_and_background_clean(self, cube):
        poses = plan_cameras(1, seed=0, bounding_radius=cube.bounding_radius(), jitter=False)
        plain = render_views(cube, poses, resolution=(64, 64))
        edged = render_views(cube, poses, resolution=(64, 64), edge_overlay=True)
        assert (edged.images == 0.0).any()
        assert edged.images.sum() < plain.images.sum()

    def test_vertex_colors_tint_render(self):
        colored = MeshAsset(
            object_id="red-cube",
            vertices=CUBE_VERTICES.astype(np.float64),
            faces=CUBE_FACES,
            vertex_colors=np.tile([0.9, 0.1, 0.1], (8, 1)),
        )
        stack = render_object(colored, n_views=1, seed=0, resolution=(32, 32), jitter=False)
        mask = (stack.images[0] < 1.0).any(axis=2)
        mean_color = stack.images[0][mask].mean(axis=0)
        assert mean_color[0] > mean_color[1] * 2


def test_view_stack_validation():
    with pytest.raises(RenderError):
        ViewStack(object_id="x", images=np.zeros((2, 8, 8, 3)), poses=[], seed=0)


def test_dump_views_writes_pngs_and_poses(tmp_path, cube):
    stack = render_object(cube, n_views=3, seed=1, resolution=(16, 16))
    out = dump_views(stack, tmp_path)
    files = sorted(p.name for p in out.iterdir())
    assert files == ["poses.json", "view_000.png", "view_001.png", "view_002.png"]

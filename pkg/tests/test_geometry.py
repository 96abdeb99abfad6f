"""Back-projection and projection: hand-computed cases plus round trips."""

import numpy as np
import pytest

from mvfusion import (
    CAMERA_TO_WORLD,
    WORLD_TO_CAMERA,
    CameraIntrinsics,
    InputError,
    InvalidDepthError,
    OutOfBoundsError,
    Pixel,
    Pose,
    ValidationError,
    backproject_frame,
    backproject_pixel,
    project_point,
)
from mvfusion.scene_io import CameraFrame

from conftest import simple_intrinsics
from oracles import random_rotation


def random_valid_sample(rng):
    """Random intrinsics, rigid pose, in-bounds pixel, and positive depth."""
    w = int(rng.integers(16, 641))
    h = int(rng.integers(16, 481))
    intr = CameraIntrinsics(
        fx=float(rng.uniform(50, 500)),
        fy=float(rng.uniform(50, 500)),
        cx=float(rng.uniform(0, w - 1e-6)),
        cy=float(rng.uniform(0, h - 1e-6)),
        width=w,
        height=h,
    )
    conv = CAMERA_TO_WORLD if rng.random() < 0.5 else WORLD_TO_CAMERA
    pose = Pose(random_rotation(rng), rng.uniform(-5, 5, 3), conv)
    px = Pixel(float(rng.uniform(0, w - 1e-6)), float(rng.uniform(0, h - 1e-6)))
    depth = float(rng.uniform(0.1, 10.0))
    return intr, pose, px, depth


class TestBackprojectPixel:
    def test_principal_ray(self):
        intr = simple_intrinsics()
        p = backproject_pixel(intr, Pose.identity(), Pixel(intr.cx, intr.cy), 2.0)
        np.testing.assert_allclose(p, [0.0, 0.0, 2.0], atol=1e-12)

    def test_hand_computed_with_translation(self):
        # K^-1 @ (150, 50, 1) * depth 1 = ((150-50)/100, 0, 1) = (1, 0, 1);
        # camera-to-world translation (1, 0, 0) shifts x to 2.
        intr = CameraIntrinsics(fx=100, fy=100, cx=50, cy=50, width=200, height=100)
        pose = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        p = backproject_pixel(intr, pose, Pixel(150.0, 50.0), 1.0)
        np.testing.assert_allclose(p, [2.0, 0.0, 1.0], atol=1e-12)

    def test_rejects_nonpositive_depth(self):
        intr = simple_intrinsics()
        with pytest.raises(InvalidDepthError):
            backproject_pixel(intr, Pose.identity(), Pixel(1.0, 1.0), 0.0)
        with pytest.raises(InvalidDepthError):
            backproject_pixel(intr, Pose.identity(), Pixel(1.0, 1.0), -2.0)

    def test_rejects_out_of_bounds_pixel(self):
        intr = simple_intrinsics(w=64, h=48)
        for px in [Pixel(64.0, 0.0), Pixel(0.0, 48.0), Pixel(-0.1, 0.0)]:
            with pytest.raises(OutOfBoundsError):
                backproject_pixel(intr, Pose.identity(), px, 1.0)


class TestProjectPoint:
    def test_principal_axis(self):
        intr = simple_intrinsics()
        res = project_point(intr, Pose.identity(), np.array([0.0, 0.0, 2.0]))
        assert res is not None
        px, depth = res
        assert px.u == pytest.approx(intr.cx, abs=1e-12)
        assert px.v == pytest.approx(intr.cy, abs=1e-12)
        assert depth == pytest.approx(2.0, abs=1e-12)

    def test_behind_camera_is_none(self):
        intr = simple_intrinsics()
        assert project_point(intr, Pose.identity(), np.array([0.0, 0.0, -1.0])) is None
        assert project_point(intr, Pose.identity(), np.array([0.0, 0.0, 0.0])) is None

    def test_round_trip_randomized(self, rng):
        for _ in range(300):
            intr, pose, px, depth = random_valid_sample(rng)
            world = backproject_pixel(intr, pose, px, depth)
            res = project_point(intr, pose, world)
            assert res is not None
            px2, depth2 = res
            assert abs(px2.u - px.u) <= 1e-6
            assert abs(px2.v - px.v) <= 1e-6
            assert abs(depth2 - depth) <= 1e-9 * depth


class TestPoseConventions:
    def test_convention_consistency(self, rng):
        """A camera-to-world pose and its world-to-camera inverse agree."""
        for _ in range(50):
            intr, pose, px, depth = random_valid_sample(rng)
            a = backproject_pixel(intr, pose, px, depth)
            b = backproject_pixel(intr, pose.inverse(), px, depth)
            np.testing.assert_allclose(a, b, atol=1e-9)

    def test_rigid_invariance_of_distances(self, rng):
        """Moving the world frame moves points but not their separations."""
        intr = simple_intrinsics()
        for _ in range(25):
            pose = Pose(random_rotation(rng), rng.uniform(-2, 2, 3))
            px_a = Pixel(3.0, 5.0)
            px_b = Pixel(40.0, 30.0)
            a = backproject_pixel(intr, pose, px_a, 2.0)
            b = backproject_pixel(intr, pose, px_b, 3.0)

            change = Pose(random_rotation(rng), rng.uniform(-4, 4, 3))
            moved = Pose(
                change.rotation @ pose.rotation,
                change.rotation @ pose.translation + change.translation,
            )
            a2 = backproject_pixel(intr, moved, px_a, 2.0)
            b2 = backproject_pixel(intr, moved, px_b, 3.0)
            d, d2 = np.linalg.norm(a - b), np.linalg.norm(a2 - b2)
            assert abs(d - d2) <= 1e-9 * d

    def test_rotation_must_be_orthonormal(self):
        with pytest.raises(ValidationError):
            Pose(2.0 * np.eye(3), np.zeros(3))
        with pytest.raises(ValidationError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # reflection


class TestBackprojectFrame:
    def _frame(self, depth, color=None, feature_map=None):
        h, w = depth.shape
        intr = CameraIntrinsics(fx=30.0, fy=30.0, cx=(w - 1) / 2, cy=(h - 1) / 2,
                                width=w, height=h)
        if color is None:
            color = np.zeros((h, w, 3), dtype=np.uint8)
        return CameraFrame(frame_id=5, intrinsics=intr, pose=Pose.identity(),
                           depth=depth, color=color, feature_map=feature_map)

    def test_all_zero_depth_yields_empty_cloud(self):
        cloud = backproject_frame(self._frame(np.zeros((4, 4), dtype=np.float32)))
        assert len(cloud) == 0

    def test_matches_per_pixel_backprojection(self):
        depth = np.ones((2, 2), dtype=np.float32)
        frame = self._frame(depth)
        cloud = backproject_frame(frame, stride=1)
        assert len(cloud) == 4
        i = 0
        for v in range(2):
            for u in range(2):
                expected = backproject_pixel(
                    frame.intrinsics, frame.pose, Pixel(float(u), float(v)), 1.0
                )
                np.testing.assert_allclose(cloud.positions[i], expected, atol=1e-12)
                i += 1
        assert np.all(cloud.source_view == 5)

    def test_stride_bounds_point_count(self, rng):
        depth = rng.uniform(0.5, 2.0, (240, 320)).astype(np.float32)
        frame = self._frame(depth)
        cloud = backproject_frame(frame, stride=2)
        assert len(cloud) <= 160 * 120

    def test_valid_pixels_only(self):
        depth = np.array([[0.0, 1.0], [2.0, 0.0]], dtype=np.float32)
        cloud = backproject_frame(self._frame(depth))
        assert len(cloud) == 2

    def test_features_come_from_feature_map(self):
        depth = np.ones((2, 3), dtype=np.float32)
        fmap = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
        cloud = backproject_frame(self._frame(depth, feature_map=fmap))
        np.testing.assert_array_equal(cloud.features, fmap.reshape(6, 4))

    def test_rgb_features_when_no_map(self):
        depth = np.ones((2, 2), dtype=np.float32)
        color = np.full((2, 2, 3), 7, dtype=np.uint8)
        cloud = backproject_frame(self._frame(depth, color=color))
        assert cloud.features.shape == (4, 3)
        assert np.all(cloud.features == 7.0)

    def test_bad_stride_rejected(self):
        with pytest.raises(InputError):
            backproject_frame(self._frame(np.ones((2, 2), dtype=np.float32)), stride=0)

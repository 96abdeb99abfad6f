"""Synthetic scene generator: determinism, analytic depths, labeling."""

import numpy as np
import pytest

from mvfusion import (
    BoxSpec,
    Pose,
    RoomSpec,
    SphereSpec,
    SpecError,
    SyntheticSpec,
    generate_synthetic_scene,
    project_point,
    render_view,
)
from mvfusion.synthetic import load_spec, spec_from_json

from conftest import cube_spec


class TestDeterminism:
    def test_same_seed_same_scene(self):
        a = generate_synthetic_scene(cube_spec(), seed=11)
        b = generate_synthetic_scene(cube_spec(), seed=11)
        np.testing.assert_array_equal(a.points.positions, b.points.positions)
        np.testing.assert_array_equal(a.points.labels, b.points.labels)
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.depth, fb.depth)
            np.testing.assert_array_equal(fa.color, fb.color)

    def test_different_seed_moves_points(self):
        a = generate_synthetic_scene(cube_spec(), seed=1)
        b = generate_synthetic_scene(cube_spec(), seed=2)
        assert not np.array_equal(a.points.positions, b.points.positions)


class TestAnalyticDepth:
    def test_unit_cube_center_pixel_depth(self):
        """Camera on +x axis staring at a unit cube: depth = distance - 0.5.

        The cube's near face is a constant-depth plane for a fronto-parallel
        camera, so any pixel that hits it reads exactly distance - 0.5.
        """
        dist = 3.0
        spec = SyntheticSpec(
            name="axis-cube",
            objects=[BoxSpec(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0),
                             class_id=1, color=(255, 0, 0))],
            image_width=33, image_height=33, focal_px=40.0,
        )
        # camera at (dist, 0, 0) looking along -x: columns are the camera
        # axes in world coords: right +y, down -z, forward -x
        rot = np.array([[0.0, 0.0, -1.0],
                        [1.0, 0.0, 0.0],
                        [0.0, -1.0, 0.0]])
        pose = Pose(rotation=rot, translation=np.array([dist, 0.0, 0.0]))
        frame = render_view(spec, pose)
        center = frame.depth[16, 16]
        assert abs(float(center) - (dist - 0.5)) <= 1e-6

    def test_sphere_center_depth(self):
        dist, radius = 4.0, 0.75
        spec = SyntheticSpec(
            name="axis-sphere",
            objects=[SphereSpec(center=(0.0, 0.0, 0.0), radius=radius,
                                class_id=1, color=(0, 255, 0))],
            image_width=33, image_height=33, focal_px=40.0,
        )
        rot = np.array([[0.0, 0.0, -1.0],
                        [1.0, 0.0, 0.0],
                        [0.0, -1.0, 0.0]])
        pose = Pose(rotation=rot, translation=np.array([dist, 0.0, 0.0]))
        frame = render_view(spec, pose)
        assert abs(float(frame.depth[16, 16]) - (dist - radius)) <= 1e-6

    def test_depth_agrees_with_projection(self, cube_scene):
        """Projecting any cloud point into a frame finds consistent depth
        at the nearest pixel whenever the point is unoccluded."""
        frame = cube_scene.frames[0]
        intr = frame.intrinsics
        checked = 0
        for p, lbl in zip(cube_scene.points.positions, cube_scene.points.labels):
            res = project_point(intr, frame.pose, p)
            if res is None:
                continue
            px, z = res
            ui, vi = round(px.u), round(px.v)
            if not (0 <= ui < intr.width and 0 <= vi < intr.height):
                continue
            d = float(frame.depth[vi, ui])
            if d > 0 and d >= z - 0.02:  # unoccluded (rendered surface not closer)
                assert abs(d - z) <= 0.05
                checked += 1
        assert checked > 50


class TestSceneContents:
    def test_labels_partition_class_set(self):
        spec = cube_spec(
            objects=[
                BoxSpec(center=(-0.6, 0, 0.3), size=(0.5, 0.5, 0.6),
                        class_id=1, color=(200, 0, 0)),
                SphereSpec(center=(0.6, 0, 0.4), radius=0.35,
                           class_id=3, color=(0, 200, 0)),
            ],
            room=RoomSpec(size=(4.0, 4.0, 2.0), class_id=0),
        )
        scene = generate_synthetic_scene(spec, seed=5)
        assert set(np.unique(scene.points.labels)) == {0, 1, 3}
        assert set(np.unique(scene.points.labels)) == spec.class_ids()

    def test_every_frame_sees_something(self):
        scene = generate_synthetic_scene(cube_spec(camera_count=10), seed=5)
        for f in scene.frames:
            assert np.count_nonzero(f.depth > 0) >= 1

    def test_zero_objects_rejected(self):
        with pytest.raises(SpecError):
            SyntheticSpec(name="empty", objects=[])

    def test_room_floor_is_rendered(self):
        spec = cube_spec(room=RoomSpec(size=(6.0, 6.0, 2.5), class_id=0,
                                       color=(10, 10, 10)))
        scene = generate_synthetic_scene(spec, seed=5)
        frame = scene.frames[0]
        # most rays hit floor or walls, so valid depth dominates
        assert np.count_nonzero(frame.depth > 0) > frame.depth.size * 0.5
        assert 0 in np.unique(scene.points.labels)


class TestSpecJson:
    def test_load_round_trip(self, tmp_path):
        doc = {
            "name": "jsonscene",
            "objects": [
                {"kind": "box", "center": [0, 0, 0.5], "size": [1, 1, 1],
                 "class_id": 1, "color": [200, 40, 40]},
                {"kind": "sphere", "center": [1, 0, 0.4], "radius": 0.4,
                 "class_id": 2, "color": [40, 200, 40]},
            ],
            "room": {"size": [5, 5, 2.2], "class_id": 0, "color": [150, 150, 150]},
            "cameras": {"count": 6, "radius": 2.0, "height": 1.5, "look_at": [0, 0, 0.4]},
            "image": {"width": 40, "height": 30, "focal_px": 35.0},
            "point_count": 900,
        }
        import json

        path = tmp_path / "spec.json"
        path.write_text(json.dumps(doc))
        spec = load_spec(path)
        assert spec.name == "jsonscene"
        assert spec.camera_count == 6
        assert len(spec.objects) == 2
        scene = generate_synthetic_scene(spec, seed=0)
        assert len(scene.frames) == 6

    def test_unknown_keys_rejected(self):
        with pytest.raises(SpecError):
            spec_from_json({"name": "x", "objects": [], "bogus": 1})

    def test_bad_kind_rejected(self):
        with pytest.raises(SpecError):
            spec_from_json({"objects": [{"kind": "cone", "class_id": 1}]})

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mvfusion import (
    BoxSpec,
    CameraIntrinsics,
    Pose,
    RoomSpec,
    SyntheticSpec,
    generate_synthetic_scene,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def simple_intrinsics(w=64, h=48, f=50.0):
    return CameraIntrinsics(fx=f, fy=f, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0,
                            width=w, height=h)


@pytest.fixture
def identity_pose():
    return Pose.identity()


def cube_spec(**kwargs):
    """One unit cube at the origin's z=0.5 shelf, small images."""
    defaults = dict(
        name="cube",
        objects=[
            BoxSpec(center=(0.0, 0.0, 0.5), size=(1.0, 1.0, 1.0),
                    class_id=1, color=(200, 40, 40))
        ],
        camera_count=4,
        orbit_radius=3.0,
        orbit_height=1.0,
        look_at=(0.0, 0.0, 0.5),
        image_width=48,
        image_height=36,
        point_count=600,
    )
    defaults.update(kwargs)
    return SyntheticSpec(**defaults)


@pytest.fixture
def cube_scene():
    return generate_synthetic_scene(cube_spec(), seed=7)


def fusion_room_spec(**kwargs):
    """Three classes separable only by color + height combined.

    Class 0 is the room (red floor, blue walls), class 1 a red box, class 2
    a green box at the same height as class 1: color alone cannot split
    0 from 1, height alone cannot split 1 from 2.
    """
    defaults = dict(
        name="fusion3",
        objects=[
            BoxSpec(center=(-0.55, 0.0, 0.7), size=(0.7, 0.7, 0.7),
                    class_id=1, color=(200, 40, 40)),
            BoxSpec(center=(0.55, 0.0, 0.7), size=(0.7, 0.7, 0.7),
                    class_id=2, color=(40, 200, 40)),
        ],
        room=RoomSpec(size=(4.0, 4.0, 1.6), class_id=0,
                      color=(200, 40, 40), wall_color=(40, 40, 200)),
        camera_count=8,
        orbit_radius=1.55,
        orbit_height=1.35,
        look_at=(0.0, 0.0, 0.35),
        image_width=128,
        image_height=96,
        focal_px=70.0,
        point_count=3000,
    )
    defaults.update(kwargs)
    return SyntheticSpec(**defaults)


@pytest.fixture(scope="session")
def fusion_scene():
    return generate_synthetic_scene(fusion_room_spec(), seed=42)

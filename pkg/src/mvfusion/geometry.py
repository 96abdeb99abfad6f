"""Pinhole camera model and pixel <-> world mappings.

A pixel (u, v) with camera-space depth Z lifts to the camera-frame point

    X_cam = Z * K^-1 @ (u, v, 1)^T = Z * ((u - cx)/fx, (v - cy)/fy, 1)

and then to world coordinates through the frame's rigid pose.  Poses carry
an explicit convention: a camera-to-world pose maps camera points directly
(X_w = R @ X_cam + t), a world-to-camera pose is applied inverted
(X_w = R^T @ (X_cam - t)).

Integer pixel (i, j) is identified with continuous (u, v) = (i, j); there is
no half-pixel offset.  Datasets using pixel-center-at-0.5 conventions should
shift their principal point accordingly before constructing intrinsics.

All functions are pure; nothing here mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .clouds import FeatureCloud
from .errors import InputError, InvalidDepthError, OutOfBoundsError, ValidationError

CAMERA_TO_WORLD = "camera_to_world"
WORLD_TO_CAMERA = "world_to_camera"

# Max |entry| of R^T R - I accepted when constructing a Pose.
ROTATION_TOL = 1e-6


class Pixel(NamedTuple):
    """Continuous pixel coordinates: u = column, v = row."""

    u: float
    v: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units plus the image size they refer to."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise InputError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise InputError(f"image size must be >= 1: {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        """The 3x3 matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, out_w: int, out_h: int) -> "CameraIntrinsics":
        """Intrinsics after resampling the image to out_w x out_h."""
        sx = out_w / self.width
        sy = out_h / self.height
        return CameraIntrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=out_w,
            height=out_h,
        )


@dataclass(frozen=True)
class Pose:
    """A rigid transform with an explicit direction convention.

    rotation:    (3, 3) orthonormal, det +1 (checked to ROTATION_TOL).
    translation: (3,) meters.
    convention:  CAMERA_TO_WORLD or WORLD_TO_CAMERA.
    """

    rotation: np.ndarray
    translation: np.ndarray
    convention: str = CAMERA_TO_WORLD

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        if rot.shape != (3, 3):
            raise InputError(f"rotation must be 3x3, got {rot.shape}")
        if self.convention not in (CAMERA_TO_WORLD, WORLD_TO_CAMERA):
            raise InputError(f"unknown pose convention: {self.convention!r}")
        err = np.max(np.abs(rot.T @ rot - np.eye(3)))
        if err > ROTATION_TOL:
            raise ValidationError(f"rotation is not orthonormal: max |R^T R - I| = {err:.3g}")
        if np.linalg.det(rot) < 0:
            raise ValidationError("rotation has determinant -1 (reflection)")

    def inverse(self) -> "Pose":
        """Same rigid transform expressed in the opposite convention."""
        other = WORLD_TO_CAMERA if self.convention == CAMERA_TO_WORLD else CAMERA_TO_WORLD
        return Pose(
            rotation=self.rotation.T,
            translation=-self.rotation.T @ self.translation,
            convention=other,
        )

    def matrix(self) -> np.ndarray:
        """The 4x4 homogeneous matrix in the pose's own convention."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def identity(cls, convention: str = CAMERA_TO_WORLD) -> "Pose":
        return cls(np.eye(3), np.zeros(3), convention)

    @classmethod
    def from_matrix(cls, m: np.ndarray, convention: str = CAMERA_TO_WORLD) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InputError(f"pose matrix must be 4x4, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3], convention)


def _cam_to_world(pose: Pose, pts_cam: np.ndarray) -> np.ndarray:
    """Map (N, 3) camera-frame points to world coordinates."""
    if pose.convention == CAMERA_TO_WORLD:
        return pts_cam @ pose.rotation.T + pose.translation
    return (pts_cam - pose.translation) @ pose.rotation


def _world_to_cam(pose: Pose, pts_world: np.ndarray) -> np.ndarray:
    """Map (N, 3) world points into the camera frame."""
    if pose.convention == CAMERA_TO_WORLD:
        return (pts_world - pose.translation) @ pose.rotation
    return pts_world @ pose.rotation.T + pose.translation


def _rays(intr: CameraIntrinsics, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """K^-1 @ (u, v, 1) per pixel, shape (N, 3); third component is 1."""
    return np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)],
        axis=-1,
    )


def backproject_pixel(
    intr: CameraIntrinsics, pose: Pose, px: Pixel, depth_m: float
) -> np.ndarray:
    """Lift one pixel with known depth to a world point.

    Raises InvalidDepthError for depth <= 0 and OutOfBoundsError for a pixel
    outside [0, width) x [0, height).
    """
    if depth_m <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth_m}")
    u, v = float(px[0]), float(px[1])
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise OutOfBoundsError(
            f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image"
        )
    ray = _rays(intr, np.array([u]), np.array([v]))
    pts_cam = ray * depth_m
    return _cam_to_world(pose, pts_cam)[0]


def project_point(
    intr: CameraIntrinsics, pose: Pose, p: np.ndarray
) -> tuple[Pixel, float] | None:
    """Project a world point to continuous pixel coordinates and depth.

    Returns None when the point lies behind the camera (camera-space
    z <= 0); that is a normal outcome, not an error.  The returned pixel is
    NOT clamped to image bounds; callers decide what in-frame means.
    """
    p = np.asarray(p, dtype=np.float64).reshape(1, 3)
    cam = _world_to_cam(pose, p)[0]
    z = cam[2]
    if z <= 0:
        return None
    u = intr.fx * cam[0] / z + intr.cx
    v = intr.fy * cam[1] / z + intr.cy
    return Pixel(float(u), float(v)), float(z)


def project_points(
    intr: CameraIntrinsics, pose: Pose, pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points.

    Returns (uv, depth, in_front): uv is (N, 2) continuous pixels, depth is
    camera-space z, in_front marks depth > 0.  uv rows with in_front False
    are of no geometric meaning (computed against clamped z to avoid
    division warnings).
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    cam = _world_to_cam(pose, pts)
    z = cam[:, 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    uv = np.stack(
        [intr.fx * cam[:, 0] / safe_z + intr.cx, intr.fy * cam[:, 1] / safe_z + intr.cy],
        axis=-1,
    )
    return uv, z, in_front


def backproject_frame(frame, stride: int = 1) -> FeatureCloud:
    """Lift every valid-depth pixel of a frame into a FeatureCloud.

    Pixels are scanned row-major at the given stride; depth == 0 marks a
    missing measurement and is skipped.  Each point carries the frame's
    attached per-pixel feature row when a feature map is present, otherwise
    its raw RGB triplet as floats.  source_view is the frame id.
    """
    if stride < 1:
        raise InputError(f"stride must be >= 1, got {stride}")
    intr = frame.intrinsics
    depth = np.asarray(frame.depth, dtype=np.float64)[::stride, ::stride]
    vs, us = np.meshgrid(
        np.arange(0, intr.height, stride, dtype=np.float64),
        np.arange(0, intr.width, stride, dtype=np.float64),
        indexing="ij",
    )
    valid = depth > 0
    us, vs, zs = us[valid], vs[valid], depth[valid]
    pts_cam = _rays(intr, us, vs) * zs[:, None]
    positions = _cam_to_world(frame.pose, pts_cam)

    if frame.feature_map is not None:
        fmap = frame.feature_map
        if fmap.shape[:2] != frame.depth.shape:
            raise InputError(
                f"feature map {fmap.shape[:2]} does not match depth {frame.depth.shape}"
            )
        feats = fmap[::stride, ::stride][valid].astype(np.float64)
    else:
        feats = frame.color[::stride, ::stride][valid].astype(np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]

    view = np.full(len(positions), frame.frame_id, dtype=np.int64)
    return FeatureCloud(positions=positions, features=feats, source_view=view)

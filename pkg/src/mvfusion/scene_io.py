"""Scene and frame containers plus every on-disk format the pipeline uses.

Formats
-------
Feature map ("FMAP"): magic ``FMAP`` | u32 version = 1 | u32 H | u32 W |
    u32 D | H*W*D float32, all little-endian, row-major with the channel
    axis fastest.  Also doubles as the raw container for depth (D = 1,
    meters) and color (D = 3, 0..255) when PNG decoding is undesirable.

PLY: ``binary_little_endian 1.0`` with properties x, y, z (float32) and
    red, green, blue (uchar).

Depth PNG: 16-bit single-channel, value / 1000.0 = meters, 0 = invalid.

Pose file: 4x4 row-major whitespace-separated text, one matrix per file.
Intrinsics file: one 3x3 or 4x4 whitespace-separated matrix; only fx, fy,
    cx, cy are consumed (image size comes from the frame images).

Scene directory layout (``<root>/<scene_id>/``)::

    intrinsics.txt
    points.ply            scene point cloud
    labels.txt            per-point class ids, optional
    pose/<fid>.txt
    depth/<fid>.png       or depth/<fid>.bin  (FMAP, D=1, float32 meters)
    color/<fid>.png       or color/<fid>.bin  (FMAP, D=3, float32 0..255)
    feature/<fid>.fmap    optional per-frame 2D feature maps

Depth and color images are assumed pre-aligned to the depth intrinsics;
no cross-calibration is applied here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .clouds import PointCloud
from .errors import FormatError, InputError, SceneLoadError, ValidationError
from .geometry import CAMERA_TO_WORLD, CameraIntrinsics, Pose

_FMAP_MAGIC = b"FMAP"
_FMAP_VERSION = 1

# Rotations read from pose files may be non-orthonormal up to this much
# (text round-off, sloppy exporters); worse than this is rejected, anything
# between Pose's own tolerance and this is snapped to the nearest rotation.
_POSE_FILE_ROT_TOL = 1e-3

# Distinct colors for per-view / per-label PLY painting.
PALETTE = np.array(
    [
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
        (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
        (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
    ],
    dtype=np.uint8,
)


@dataclass
class CameraFrame:
    """One RGB-D view: id, intrinsics, pose, depth, color, optional features.

    depth: (H, W) float32 meters, 0 = invalid.
    color: (H, W, 3) uint8.
    feature_map: (H, W, D) float32 or None.
    """

    frame_id: int
    intrinsics: CameraIntrinsics
    pose: Pose
    depth: np.ndarray
    color: np.ndarray
    feature_map: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.color = np.asarray(self.color, dtype=np.uint8)
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.depth.shape != (h, w):
            raise InputError(f"depth shape {self.depth.shape} != intrinsics {h}x{w}")
        if self.color.shape != (h, w, 3):
            raise InputError(f"color shape {self.color.shape} != ({h}, {w}, 3)")
        if np.any(self.depth < 0):
            raise InputError("depth images may not contain negative values")
        if self.feature_map is not None:
            self.feature_map = np.asarray(self.feature_map, dtype=np.float32)
            if self.feature_map.shape[:2] != (h, w):
                raise InputError(
                    f"feature map {self.feature_map.shape} does not cover {h}x{w} image"
                )


@dataclass
class Scene:
    """A point cloud plus the RGB-D frames observing it."""

    scene_id: str
    points: PointCloud
    frames: list[CameraFrame]

    @property
    def labels(self) -> np.ndarray | None:
        return self.points.labels

    def frame_by_id(self, frame_id: int) -> CameraFrame:
        for f in self.frames:
            if f.frame_id == frame_id:
                return f
        raise InputError(f"scene {self.scene_id} has no frame {frame_id}")


# ---------------------------------------------------------------------------
# FMAP binary feature maps
# ---------------------------------------------------------------------------

def write_feature_map(path: str | Path, values: np.ndarray) -> None:
    """Write an (H, W, D) array in the FMAP layout (float32, bit-exact)."""
    values = np.asarray(values)
    if values.ndim != 3:
        raise InputError(f"feature map must be (H, W, D), got {values.shape}")
    h, w, d = values.shape
    if min(h, w, d) < 1:
        raise InputError(f"feature map dims must be >= 1, got {values.shape}")
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_FMAP_MAGIC)
        fh.write(struct.pack("<IIII", _FMAP_VERSION, h, w, d))
        fh.write(payload)


def read_feature_map(path: str | Path) -> np.ndarray:
    """Read an FMAP file back as (H, W, D) float32."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != _FMAP_MAGIC:
        raise FormatError(f"{path}: not an FMAP file (bad magic)")
    version, h, w, d = struct.unpack("<IIII", raw[4:20])
    if version != _FMAP_VERSION:
        raise FormatError(f"{path}: unsupported FMAP version {version}")
    expected = 20 + 4 * h * w * d
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - 20} bytes, expected {expected - 20}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=20).reshape(h, w, d).copy()


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------

def _cloud_colors(cloud, color_mode: str) -> np.ndarray:
    if color_mode == "rgb":
        colors = getattr(cloud, "colors", None)
        if colors is not None:
            return colors
        feats = getattr(cloud, "features", None)
        if feats is not None and feats.shape[1] == 3:
            return np.clip(np.rint(feats), 0, 255).astype(np.uint8)
        raise InputError("rgb color mode needs colors or 3-channel features")
    if color_mode == "per-view-palette":
        views = getattr(cloud, "source_view", None)
        if views is None:
            raise InputError("per-view-palette needs a cloud with source_view")
        _, rank = np.unique(views, return_inverse=True)
        return PALETTE[rank % len(PALETTE)]
    if color_mode == "label-palette":
        labels = getattr(cloud, "labels", None)
        if labels is None:
            raise InputError("label-palette needs a cloud with labels")
        return PALETTE[np.asarray(labels, dtype=np.int64) % len(PALETTE)]
    raise InputError(f"unknown color mode: {color_mode!r}")


def write_ply(cloud, path: str | Path, color_mode: str = "rgb") -> None:
    """Write a cloud as binary little-endian PLY (xyz float32 + rgb uchar).

    cloud is a PointCloud or FeatureCloud; color_mode is one of "rgb",
    "per-view-palette", "label-palette".
    """
    n = len(cloud)
    if n == 0:
        raise InputError("refusing to write an empty PLY")
    colors = _cloud_colors(cloud, color_mode)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    rec = np.zeros(
        n,
        dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
               ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    pos = np.asarray(cloud.positions, dtype="<f4")
    rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    rec["red"], rec["green"], rec["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(rec.tobytes())
    except OSError as exc:
        raise InputError(f"cannot write PLY to {path}: {exc}") from exc


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a PLY written by write_ply: returns (positions f64, colors u8)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: only binary_little_endian 1.0 is supported")
    n = None
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
    if n is None:
        raise FormatError(f"{path}: no vertex element in header")
    body = raw[end + len(b"end_header\n"):]
    rec = np.frombuffer(
        body,
        dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
               ("red", "u1"), ("green", "u1"), ("blue", "u1")],
        count=n,
    )
    positions = np.stack(
        [rec["x"], rec["y"], rec["z"]], axis=-1
    ).astype(np.float64)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=-1)
    return positions, colors


# ---------------------------------------------------------------------------
# Depth / color images and text matrices
# ---------------------------------------------------------------------------

def write_depth_png(path: str | Path, depth_m: np.ndarray) -> None:
    """Store depth in meters as 16-bit millimeter PNG (0 = invalid)."""
    mm = np.rint(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    if np.any(mm < 0) or np.any(mm > 65535):
        raise InputError("depth out of 16-bit millimeter range")
    Image.fromarray(mm.astype(np.uint16)).save(path)


def read_depth_png(path: str | Path) -> np.ndarray:
    """Read a millimeter PNG back to float32 meters."""
    arr = np.array(Image.open(path))
    if arr.ndim != 2:
        raise FormatError(f"{path}: depth PNG must be single-channel")
    return (arr.astype(np.float64) / 1000.0).astype(np.float32)


def _read_depth(path: Path) -> np.ndarray:
    if path.suffix == ".png":
        return read_depth_png(path)
    fm = read_feature_map(path)
    if fm.shape[2] != 1:
        raise FormatError(f"{path}: raw depth must have D=1, got D={fm.shape[2]}")
    return fm[:, :, 0]


def _read_color(path: Path) -> np.ndarray:
    if path.suffix == ".png":
        img = Image.open(path).convert("RGB")
        return np.array(img, dtype=np.uint8)
    fm = read_feature_map(path)
    if fm.shape[2] != 3:
        raise FormatError(f"{path}: raw color must have D=3, got D={fm.shape[2]}")
    return np.clip(np.rint(fm), 0, 255).astype(np.uint8)


def write_matrix_txt(path: str | Path, m: np.ndarray) -> None:
    # %.17g keeps float64 values exact through the text round trip
    np.savetxt(path, np.asarray(m, dtype=np.float64), fmt="%.17g")


def read_matrix_txt(path: str | Path) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise SceneLoadError(f"cannot read matrix from {path}: {exc}") from exc


def read_intrinsics_txt(path: str | Path, width: int, height: int) -> CameraIntrinsics:
    m = read_matrix_txt(path)
    if m.shape not in ((3, 3), (4, 4)):
        raise SceneLoadError(f"{path}: intrinsics must be 3x3 or 4x4, got {m.shape}")
    return CameraIntrinsics(
        fx=float(m[0, 0]), fy=float(m[1, 1]),
        cx=float(m[0, 2]), cy=float(m[1, 2]),
        width=width, height=height,
    )


def read_pose_txt(path: str | Path, convention: str = CAMERA_TO_WORLD) -> Pose:
    """Read a 4x4 pose, validating and (mildly) re-orthonormalizing it.

    Rotations off by more than _POSE_FILE_ROT_TOL are rejected; smaller
    drift (text round-off) is snapped to the nearest rotation via SVD.
    """
    m = read_matrix_txt(path)
    if m.shape != (4, 4):
        raise ValidationError(f"{path}: pose must be 4x4, got {m.shape}")
    rot = m[:3, :3]
    err = np.max(np.abs(rot.T @ rot - np.eye(3)))
    if err > _POSE_FILE_ROT_TOL or np.linalg.det(rot) < 0:
        raise ValidationError(
            f"{path}: rotation is not orthonormal (max |R^T R - I| = {err:.3g})"
        )
    if err > 1e-9:
        u, _, vt = np.linalg.svd(rot)
        rot = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return Pose(rotation=rot, translation=m[:3, 3], convention=convention)


# ---------------------------------------------------------------------------
# Scene directories
# ---------------------------------------------------------------------------

def save_scene(
    scene: Scene,
    root_path: str | Path,
    depth_format: str = "bin",
    color_format: str = "bin",
) -> Path:
    """Write a scene directory in the documented layout; returns its path.

    "bin" stores depth/color in the lossless FMAP container; "png" uses
    16-bit millimeter depth and 8-bit RGB images.
    """
    if depth_format not in ("bin", "png") or color_format not in ("bin", "png"):
        raise InputError("depth_format and color_format must be 'bin' or 'png'")
    base = Path(root_path) / scene.scene_id
    for sub in ("pose", "depth", "color"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    if any(f.feature_map is not None for f in scene.frames):
        (base / "feature").mkdir(exist_ok=True)

    if not scene.frames:
        raise InputError("cannot save a scene with no frames")
    intr = scene.frames[0].intrinsics
    write_matrix_txt(base / "intrinsics.txt", intr.matrix())
    write_ply(scene.points, base / "points.ply", color_mode="rgb")
    if scene.points.labels is not None:
        np.savetxt(base / "labels.txt", scene.points.labels, fmt="%d")

    for f in scene.frames:
        write_matrix_txt(base / "pose" / f"{f.frame_id}.txt", f.pose.matrix())
        if depth_format == "png":
            write_depth_png(base / "depth" / f"{f.frame_id}.png", f.depth)
        else:
            write_feature_map(base / "depth" / f"{f.frame_id}.bin", f.depth[:, :, None])
        if color_format == "png":
            Image.fromarray(f.color).save(base / "color" / f"{f.frame_id}.png")
        else:
            write_feature_map(
                base / "color" / f"{f.frame_id}.bin", f.color.astype(np.float32)
            )
        if f.feature_map is not None:
            write_feature_map(base / "feature" / f"{f.frame_id}.fmap", f.feature_map)
    return base


def _frame_file(base: Path, sub: str, fid: int, exts: tuple[str, ...]) -> Path:
    for ext in exts:
        p = base / sub / f"{fid}{ext}"
        if p.exists():
            return p
    raise SceneLoadError(f"missing {sub} file for frame {fid} under {base / sub}")


def load_scene(
    root_path: str | Path,
    scene_id: str,
    pose_convention: str = CAMERA_TO_WORLD,
) -> Scene:
    """Load a scene directory; frames come back sorted by frame id.

    Pose files are treated as camera-to-world by default (ScanNet
    convention); pass pose_convention to read them the other way.
    """
    base = Path(root_path) / scene_id
    if not base.is_dir():
        raise SceneLoadError(f"scene directory not found: {base}")
    intr_path = base / "intrinsics.txt"
    if not intr_path.exists():
        raise SceneLoadError(f"missing intrinsics file: {intr_path}")
    points_path = base / "points.ply"
    if not points_path.exists():
        raise SceneLoadError(f"missing point cloud file: {points_path}")

    positions, colors = read_ply(points_path)
    labels = None
    labels_path = base / "labels.txt"
    if labels_path.exists():
        labels = np.loadtxt(labels_path, dtype=np.int64).reshape(-1)
        if len(labels) != len(positions):
            raise ValidationError(
                f"{labels_path}: {len(labels)} labels for {len(positions)} points"
            )
    points = PointCloud(positions=positions, colors=colors, labels=labels)

    pose_dir = base / "pose"
    if not pose_dir.is_dir():
        raise SceneLoadError(f"missing pose directory: {pose_dir}")
    frame_ids = sorted(int(p.stem) for p in pose_dir.glob("*.txt"))
    if not frame_ids:
        raise SceneLoadError(f"no pose files under {pose_dir}")

    frames = []
    for fid in frame_ids:
        depth = _read_depth(_frame_file(base, "depth", fid, (".png", ".bin")))
        color = _read_color(_frame_file(base, "color", fid, (".png", ".bin")))
        h, w = depth.shape
        intr = read_intrinsics_txt(intr_path, width=w, height=h)
        pose = read_pose_txt(pose_dir / f"{fid}.txt", convention=pose_convention)
        fmap_path = base / "feature" / f"{fid}.fmap"
        fmap = read_feature_map(fmap_path) if fmap_path.exists() else None
        frames.append(
            CameraFrame(
                frame_id=fid, intrinsics=intr, pose=pose,
                depth=depth, color=color, feature_map=fmap,
            )
        )
    return Scene(scene_id=scene_id, points=points, frames=frames)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def resample_frame(frame: CameraFrame, out_w: int, out_h: int) -> CameraFrame:
    """Resample a frame to out_w x out_h, scaling intrinsics to match.

    Color (and any attached feature map) is interpolated bilinearly; depth
    uses nearest-neighbor so values are never blended across depth
    discontinuities.
    """
    if out_w < 1 or out_h < 1:
        raise InputError(f"output size must be >= 1, got {out_w}x{out_h}")
    in_w, in_h = frame.intrinsics.width, frame.intrinsics.height
    if (out_w, out_h) == (in_w, in_h):
        return replace(frame)

    # Source coordinate of each output pixel under u_dst = u_src * out/in.
    us = np.arange(out_w, dtype=np.float64) * (in_w / out_w)
    vs = np.arange(out_h, dtype=np.float64) * (in_h / out_h)

    ui = np.clip(np.rint(us).astype(np.int64), 0, in_w - 1)
    vi = np.clip(np.rint(vs).astype(np.int64), 0, in_h - 1)
    depth = frame.depth[vi[:, None], ui[None, :]]

    u0 = np.clip(np.floor(us).astype(np.int64), 0, in_w - 1)
    v0 = np.clip(np.floor(vs).astype(np.int64), 0, in_h - 1)
    u1 = np.minimum(u0 + 1, in_w - 1)
    v1 = np.minimum(v0 + 1, in_h - 1)
    fu = (us - u0)[None, :, None]
    fv = (vs - v0)[:, None, None]

    def bilinear(img: np.ndarray) -> np.ndarray:
        img = img.astype(np.float64)
        top = img[v0[:, None], u0[None, :]] * (1 - fu) + img[v0[:, None], u1[None, :]] * fu
        bot = img[v1[:, None], u0[None, :]] * (1 - fu) + img[v1[:, None], u1[None, :]] * fu
        return top * (1 - fv) + bot * fv

    color = np.clip(np.rint(bilinear(frame.color)), 0, 255).astype(np.uint8)
    fmap = None
    if frame.feature_map is not None:
        fmap = bilinear(frame.feature_map).astype(np.float32)

    return CameraFrame(
        frame_id=frame.frame_id,
        intrinsics=frame.intrinsics.scaled(out_w, out_h),
        pose=frame.pose,
        depth=depth,
        color=color,
        feature_map=fmap,
    )

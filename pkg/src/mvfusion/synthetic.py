"""Deterministic synthetic RGB-D scenes for desk-scale experiments.

A scene spec is a handful of axis-aligned boxes and spheres (each with a
class id and a flat color), an optional open-top room enclosing them, and a
ring of cameras orbiting the scene center.  Depth images come from exact
ray/primitive intersection, never rasterization, so analytic depth checks
hold to float32 precision.  The scene point cloud is sampled uniformly from
primitive surfaces with ground-truth labels.

Everything is driven by a single integer seed; two runs with the same spec
and seed produce identical scenes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clouds import PointCloud
from .errors import SpecError
from .geometry import CAMERA_TO_WORLD, CameraIntrinsics, Pose
from .scene_io import CameraFrame, Scene

_EPS = 1e-9


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned box given by center and full edge lengths."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    class_id: int
    color: tuple[int, int, int]

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) - np.asarray(self.size) / 2.0

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) + np.asarray(self.size) / 2.0

    def area(self) -> float:
        sx, sy, sz = self.size
        return 2.0 * (sx * sy + sy * sz + sx * sz)


@dataclass(frozen=True)
class SphereSpec:
    center: tuple[float, float, float]
    radius: float
    class_id: int
    color: tuple[int, int, int]

    def area(self) -> float:
        return 4.0 * math.pi * self.radius**2


@dataclass(frozen=True)
class RoomSpec:
    """Open-top room: floor and four inward-facing walls, no ceiling.

    Floor and walls share one class id; walls may carry their own color
    (defaults to the floor's).
    """

    size: tuple[float, float, float]
    class_id: int = 0
    color: tuple[int, int, int] = (160, 160, 160)
    wall_color: tuple[int, int, int] | None = None

    @property
    def lo(self) -> np.ndarray:
        sx, sy, _ = self.size
        return np.array([-sx / 2.0, -sy / 2.0, 0.0])

    @property
    def hi(self) -> np.ndarray:
        sx, sy, sz = self.size
        return np.array([sx / 2.0, sy / 2.0, sz])

    @property
    def wall_rgb(self) -> tuple[int, int, int]:
        return self.color if self.wall_color is None else self.wall_color

    def floor_area(self) -> float:
        sx, sy, _ = self.size
        return sx * sy

    def area(self) -> float:
        sx, sy, sz = self.size
        return sx * sy + 2.0 * sz * (sx + sy)


@dataclass
class SyntheticSpec:
    name: str = "synthetic"
    objects: list = field(default_factory=list)
    room: RoomSpec | None = None
    camera_count: int = 8
    orbit_radius: float = 2.5
    orbit_height: float = 1.8
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.5)
    image_width: int = 64
    image_height: int = 48
    focal_px: float | None = None
    point_count: int = 2000

    def __post_init__(self) -> None:
        if not self.objects:
            raise SpecError("synthetic spec must define at least one object")
        if self.camera_count < 1:
            raise SpecError("camera_count must be >= 1")
        if self.orbit_radius <= 0:
            raise SpecError("orbit_radius must be positive")
        if self.image_width < 2 or self.image_height < 2:
            raise SpecError("image size must be at least 2x2")
        if self.point_count < 1:
            raise SpecError("point_count must be >= 1")

    def intrinsics(self) -> CameraIntrinsics:
        f = self.focal_px if self.focal_px is not None else 0.8 * self.image_width
        return CameraIntrinsics(
            fx=f, fy=f,
            cx=(self.image_width - 1) / 2.0,
            cy=(self.image_height - 1) / 2.0,
            width=self.image_width,
            height=self.image_height,
        )

    def class_ids(self) -> set[int]:
        ids = {o.class_id for o in self.objects}
        if self.room is not None:
            ids.add(self.room.class_id)
        return ids


# ---------------------------------------------------------------------------
# Exact ray intersections.  Rays use unnormalized camera directions with
# z_cam = 1, so the ray parameter t IS the camera-space depth.
# ---------------------------------------------------------------------------

def _slab_hits(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Entry/exit parameters of rays against an AABB; (tmin, tmax) arrays."""
    d = np.where(np.abs(dirs) < 1e-300, 1e-300, dirs)
    t1 = (lo - origin) / d
    t2 = (hi - origin) / d
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    return tmin, tmax


def _hit_box(origin: np.ndarray, dirs: np.ndarray, box: BoxSpec) -> np.ndarray:
    """Depth of the first box intersection per ray, inf where missed."""
    tmin, tmax = _slab_hits(origin, dirs, box.lo, box.hi)
    hit = tmax >= np.maximum(tmin, _EPS)
    t = np.where(tmin > _EPS, tmin, tmax)  # inside the box: exit face
    return np.where(hit & (t > _EPS), t, np.inf)


def _hit_room(
    origin: np.ndarray, dirs: np.ndarray, room: RoomSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Depth of the inward room surface and a floor-vs-wall flag.

    Rays leaving through the open top miss; rays from cameras outside the
    room miss entirely (the shell faces inward only).
    """
    tmin, tmax = _slab_hits(origin, dirs, room.lo, room.hi)
    inside = (tmin < _EPS) & (tmax > _EPS)
    t = np.where(inside, tmax, np.inf)
    exit_z = origin[2] + t * dirs[..., 2]
    through_top = exit_z >= room.hi[2] - 1e-7
    t = np.where(through_top, np.inf, t)
    is_floor = np.isfinite(t) & (exit_z <= room.lo[2] + 1e-7)
    return t, is_floor


def _hit_sphere(origin: np.ndarray, dirs: np.ndarray, sph: SphereSpec) -> np.ndarray:
    oc = origin - np.asarray(sph.center, dtype=np.float64)
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * np.sum(dirs * oc, axis=-1)
    c = float(oc @ oc) - sph.radius**2
    disc = b * b - 4.0 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t_near = (-b - sq) / (2.0 * a)
    t_far = (-b + sq) / (2.0 * a)
    t = np.where(t_near > _EPS, t_near, t_far)
    return np.where(ok & (t > _EPS), t, np.inf)


def _orbit_pose(spec: SyntheticSpec, index: int) -> Pose:
    """Camera-to-world pose for orbit slot `index`, looking at spec.look_at."""
    theta = 2.0 * math.pi * index / spec.camera_count
    eye = np.array(
        [
            spec.orbit_radius * math.cos(theta),
            spec.orbit_radius * math.sin(theta),
            spec.orbit_height,
        ]
    )
    forward = np.asarray(spec.look_at, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < _EPS:
        raise SpecError("camera coincides with look_at point")
    forward /= norm
    world_up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, world_up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise SpecError("camera looks straight along the world up axis")
    right /= rn
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)  # columns: x, y, z camera axes
    return Pose(rotation=rot, translation=eye, convention=CAMERA_TO_WORLD)


def render_view(spec: SyntheticSpec, pose: Pose, frame_id: int = 0) -> CameraFrame:
    """Render the spec's primitives from an arbitrary camera-to-world pose."""
    intr = spec.intrinsics()
    us, vs = np.meshgrid(
        np.arange(intr.width, dtype=np.float64),
        np.arange(intr.height, dtype=np.float64),
        indexing="xy",
    )
    dirs_cam = np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1
    )
    if pose.convention != CAMERA_TO_WORLD:
        pose = pose.inverse()
    dirs_world = dirs_cam @ pose.rotation.T
    origin = pose.translation

    depth = np.full(us.shape, np.inf)
    color = np.zeros((*us.shape, 3), dtype=np.uint8)
    prims = list(spec.objects) + ([spec.room] if spec.room is not None else [])
    for prim in prims:
        if isinstance(prim, BoxSpec):
            t = _hit_box(origin, dirs_world, prim)
        elif isinstance(prim, SphereSpec):
            t = _hit_sphere(origin, dirs_world, prim)
        elif isinstance(prim, RoomSpec):
            t, is_floor = _hit_room(origin, dirs_world, prim)
        else:
            raise SpecError(f"unknown primitive type: {type(prim).__name__}")
        closer = t < depth
        depth = np.where(closer, t, depth)
        if isinstance(prim, RoomSpec):
            color[closer & is_floor] = prim.color
            color[closer & ~is_floor] = prim.wall_rgb
        else:
            color[closer] = prim.color

    depth = np.where(np.isfinite(depth), depth, 0.0).astype(np.float32)
    if not np.any(depth > 0):
        raise SpecError(f"camera {frame_id} sees no geometry; adjust the orbit")
    return CameraFrame(
        frame_id=frame_id, intrinsics=intr, pose=pose, depth=depth, color=color
    )


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------

def _sample_box_faces(rng, lo, hi, n, faces=None):
    """Uniform area-weighted samples on selected faces of an AABB."""
    size = hi - lo
    all_faces = []  # (axis, side at lo/hi, area)
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        area = size[others[0]] * size[others[1]]
        for side in (0, 1):
            all_faces.append((axis, side, area))
    if faces is not None:
        all_faces = [f for i, f in enumerate(all_faces) if i in faces]
    areas = np.array([f[2] for f in all_faces])
    counts = rng.multinomial(n, areas / areas.sum())
    out = []
    for (axis, side, _), cnt in zip(all_faces, counts):
        if cnt == 0:
            continue
        pts = lo + rng.random((cnt, 3)) * size
        pts[:, axis] = hi[axis] if side else lo[axis]
        out.append(pts)
    if not out:
        return np.zeros((0, 3))
    return np.concatenate(out)


def _sample_primitive(rng, prim, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Surface samples plus their colors for one primitive."""
    if isinstance(prim, BoxSpec):
        pts = _sample_box_faces(rng, prim.lo, prim.hi, n)
    elif isinstance(prim, SphereSpec):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = np.asarray(prim.center) + prim.radius * v
    elif isinstance(prim, RoomSpec):
        # faces indexed (axis, side); 4 = floor, 5 = the omitted ceiling
        n_floor = max(1, round(n * prim.floor_area() / prim.area()))
        floor = _sample_box_faces(rng, prim.lo, prim.hi, n_floor, faces={4})
        walls = _sample_box_faces(
            rng, prim.lo, prim.hi, max(1, n - n_floor), faces={0, 1, 2, 3}
        )
        colors = np.concatenate(
            [
                np.tile(np.asarray(prim.color, dtype=np.uint8), (len(floor), 1)),
                np.tile(np.asarray(prim.wall_rgb, dtype=np.uint8), (len(walls), 1)),
            ]
        )
        return np.concatenate([floor, walls]), colors
    else:
        raise SpecError(f"unknown primitive type: {type(prim).__name__}")
    return pts, np.tile(np.asarray(prim.color, dtype=np.uint8), (len(pts), 1))


def generate_synthetic_scene(spec: SyntheticSpec, seed: int) -> Scene:
    """Render all orbit frames and sample the labeled scene point cloud."""
    rng = np.random.default_rng(seed)
    prims = ([spec.room] if spec.room is not None else []) + list(spec.objects)
    areas = np.array([p.area() for p in prims])
    counts = np.maximum(1, np.rint(spec.point_count * areas / areas.sum()).astype(int))

    positions, colors, labels = [], [], []
    for prim, cnt in zip(prims, counts):
        pts, prim_colors = _sample_primitive(rng, prim, int(cnt))
        positions.append(pts)
        colors.append(prim_colors)
        labels.append(np.full(len(pts), prim.class_id, dtype=np.int64))

    cloud = PointCloud(
        # float32 storage so PLY round trips are bit-exact
        positions=np.concatenate(positions).astype(np.float32).astype(np.float64),
        colors=np.concatenate(colors),
        labels=np.concatenate(labels),
    )
    frames = [
        render_view(spec, _orbit_pose(spec, i), frame_id=i)
        for i in range(spec.camera_count)
    ]
    return Scene(scene_id=spec.name, points=cloud, frames=frames)


# ---------------------------------------------------------------------------
# JSON spec files (consumed by the `synth` subcommand)
# ---------------------------------------------------------------------------

def _require_keys(d: dict, allowed: set[str], ctx: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise SpecError(f"{ctx}: unknown keys {sorted(unknown)}")


def spec_from_json(doc: dict) -> SyntheticSpec:
    """Build a SyntheticSpec from a parsed JSON document (strict keys)."""
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")
    _require_keys(
        doc,
        {"name", "objects", "room", "cameras", "image", "point_count"},
        "spec",
    )
    objects = []
    for i, o in enumerate(doc.get("objects", [])):
        _require_keys(
            o, {"kind", "center", "size", "radius", "class_id", "color"}, f"objects[{i}]"
        )
        kind = o.get("kind")
        try:
            if kind == "box":
                objects.append(
                    BoxSpec(
                        center=tuple(o["center"]), size=tuple(o["size"]),
                        class_id=int(o["class_id"]), color=tuple(o["color"]),
                    )
                )
            elif kind == "sphere":
                objects.append(
                    SphereSpec(
                        center=tuple(o["center"]), radius=float(o["radius"]),
                        class_id=int(o["class_id"]), color=tuple(o["color"]),
                    )
                )
            else:
                raise SpecError(f"objects[{i}]: kind must be 'box' or 'sphere'")
        except (KeyError, TypeError) as exc:
            raise SpecError(f"objects[{i}]: {exc}") from exc

    room = None
    if doc.get("room") is not None:
        r = doc["room"]
        _require_keys(r, {"size", "class_id", "color", "wall_color"}, "room")
        room = RoomSpec(
            size=tuple(r["size"]),
            class_id=int(r.get("class_id", 0)),
            color=tuple(r.get("color", (160, 160, 160))),
            wall_color=tuple(r["wall_color"]) if r.get("wall_color") else None,
        )

    cams = doc.get("cameras", {})
    _require_keys(cams, {"count", "radius", "height", "look_at"}, "cameras")
    img = doc.get("image", {})
    _require_keys(img, {"width", "height", "focal_px"}, "image")

    kwargs = dict(
        name=str(doc.get("name", "synthetic")),
        objects=objects,
        room=room,
        point_count=int(doc.get("point_count", 2000)),
    )
    if "count" in cams:
        kwargs["camera_count"] = int(cams["count"])
    if "radius" in cams:
        kwargs["orbit_radius"] = float(cams["radius"])
    if "height" in cams:
        kwargs["orbit_height"] = float(cams["height"])
    if "look_at" in cams:
        kwargs["look_at"] = tuple(cams["look_at"])
    if "width" in img:
        kwargs["image_width"] = int(img["width"])
    if "height" in img:
        kwargs["image_height"] = int(img["height"])
    if "focal_px" in img and img["focal_px"] is not None:
        kwargs["focal_px"] = float(img["focal_px"])
    return SyntheticSpec(**kwargs)


def load_spec(path: str | Path) -> SyntheticSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    return spec_from_json(doc)

"""Dynamic greedy view selection.

A scene point counts as covered by a frame when its projection lands inside
the image, in front of the camera, and the frame's depth map agrees with
the projected depth within a tolerance.  Frames are then picked greedily by
marginal gain until the covered fraction passes a threshold, so the number
of views adapts to the scene instead of being fixed.

The overlap criterion (in-bounds + in-front + depth-consistent, 5 cm
default tolerance) is this library's definition; occlusion is handled by
the depth check, and 2D content plays no role.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import project_points
from .scene_io import CameraFrame, Scene

TERMINATED_THRESHOLD = "threshold_met"
TERMINATED_EXHAUSTED = "exhausted"
TERMINATED_CAPPED = "capped"


@dataclass(frozen=True)
class CoverageParams:
    threshold: float = 0.90
    depth_tolerance: float = 0.05
    stride: int = 1
    max_views: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.threshold <= 1:
            raise InputError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.depth_tolerance <= 0:
            raise InputError(f"depth_tolerance must be positive, got {self.depth_tolerance}")
        if self.stride < 1:
            raise InputError(f"stride must be >= 1, got {self.stride}")
        if self.max_views is not None and self.max_views < 1:
            raise InputError(f"max_views must be >= 1, got {self.max_views}")

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "depth_tolerance": self.depth_tolerance,
            "stride": self.stride,
            "max_views": self.max_views,
        }


@dataclass
class CoveragePlan:
    """Greedy selection result: frame order, per-step gains, coverage curve."""

    scene_id: str
    params: CoverageParams
    selected: list[int]
    gain: list[int]
    coverage_after: list[float]
    termination: str
    covered_mask: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> str:
        doc = {
            "scene_id": self.scene_id,
            "params": self.params.to_dict(),
            "selected": self.selected,
            "gain": self.gain,
            "coverage_after": self.coverage_after,
            "termination": self.termination,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CoveragePlan":
        doc = json.loads(text)
        return cls(
            scene_id=doc["scene_id"],
            params=CoverageParams(**doc["params"]),
            selected=[int(i) for i in doc["selected"]],
            gain=[int(g) for g in doc["gain"]],
            coverage_after=[float(c) for c in doc["coverage_after"]],
            termination=doc["termination"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "CoveragePlan":
        return cls.from_json(Path(path).read_text())


def frame_covers(
    scene: Scene, frame: CameraFrame, params: CoverageParams
) -> np.ndarray:
    """Boolean mask over scene points: which ones this frame sees.

    With stride > 1 the depth lookup snaps to the stride-subsampled pixel
    grid, mimicking coverage computed on a decimated depth map.
    """
    intr = frame.intrinsics
    uv, z, in_front = project_points(intr, frame.pose, scene.points.positions)
    s = params.stride
    if s > 1:
        ui = (np.rint(uv[:, 0] / s) * s).astype(np.int64)
        vi = (np.rint(uv[:, 1] / s) * s).astype(np.int64)
    else:
        ui = np.rint(uv[:, 0]).astype(np.int64)
        vi = np.rint(uv[:, 1]).astype(np.int64)
    in_bounds = (ui >= 0) & (ui < intr.width) & (vi >= 0) & (vi < intr.height)
    ok = in_front & in_bounds
    depth_img = np.zeros(len(z))
    depth_img[ok] = frame.depth[vi[ok], ui[ok]]
    return ok & (depth_img > 0) & (np.abs(z - depth_img) <= params.depth_tolerance)


def greedy_select(
    masks: dict[int, np.ndarray],
    n_points: int,
    threshold: float,
    max_views: int | None = None,
) -> tuple[list[int], list[int], list[float], str, np.ndarray]:
    """Greedy maximum-coverage over precomputed per-frame masks.

    Picks the frame with the largest number of newly covered points each
    step (ties -> lowest frame id), never picks a zero-gain frame, and stops
    at the coverage threshold, at max_views, or when no frame helps.
    """
    if not masks:
        raise InputError("no frames to select from")
    if n_points < 1:
        raise InputError("scene has no points to cover")
    covered = np.zeros(n_points, dtype=bool)
    remaining = dict(sorted(masks.items()))
    selected: list[int] = []
    gains: list[int] = []
    coverage: list[float] = []
    termination = TERMINATED_EXHAUSTED
    while remaining:
        best_id, best_gain = -1, 0
        for fid, mask in remaining.items():
            g = int(np.count_nonzero(mask & ~covered))
            if g > best_gain:  # strict: ties keep the earlier (lower) id
                best_id, best_gain = fid, g
        if best_gain == 0:
            termination = TERMINATED_EXHAUSTED
            break
        covered |= remaining.pop(best_id)
        selected.append(best_id)
        gains.append(best_gain)
        coverage.append(float(np.count_nonzero(covered) / n_points))
        if coverage[-1] >= threshold:
            termination = TERMINATED_THRESHOLD
            break
        if max_views is not None and len(selected) >= max_views:
            termination = TERMINATED_CAPPED
            break
    return selected, gains, coverage, termination, covered


def select_views(scene: Scene, params: CoverageParams) -> CoveragePlan:
    """Compute per-frame coverage masks once, then run the greedy loop."""
    if not scene.frames:
        raise InputError(f"scene {scene.scene_id} has no frames")
    masks = {f.frame_id: frame_covers(scene, f, params) for f in scene.frames}
    selected, gains, coverage, termination, covered = greedy_select(
        masks, len(scene.points), params.threshold, params.max_views
    )
    return CoveragePlan(
        scene_id=scene.scene_id,
        params=params,
        selected=selected,
        gain=gains,
        coverage_after=coverage,
        termination=termination,
        covered_mask=covered,
    )

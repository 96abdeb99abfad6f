"""Pipeline configuration: one strict JSON document.

Unknown keys anywhere in the document are rejected so experiment configs
never silently drift.  Every section is optional and falls back to the
shipped defaults (coverage threshold 0.90, k = 3, 64/64 feature dims, 5 cm
voxels, Adam at 0.001 with cosine annealing, 320x240 resampling).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import InputError
from .features import FusionConfig
from .sparsenet import TrainConfig, VoxelGridSpec
from .view_select import CoverageParams


@dataclass(frozen=True)
class ExtractorConfig:
    features_2d: str = "filterbank"
    features_3d: str = "geometric"
    seed: int = 0
    external_dir: str | None = None

    def __post_init__(self) -> None:
        if self.features_2d not in ("filterbank", "random", "external", "none"):
            raise InputError(f"unknown 2D extractor: {self.features_2d!r}")
        if self.features_3d not in ("geometric", "random", "rgb", "none"):
            raise InputError(f"unknown 3D extractor: {self.features_3d!r}")


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple[int, ...] = (32, 32)
    num_classes: int | None = None

    def __post_init__(self) -> None:
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise InputError("hidden widths must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    scene_root: str = "scenes"
    output_dir: str = "output"
    coverage: CoverageParams = field(default_factory=CoverageParams)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    voxel: VoxelGridSpec = field(default_factory=VoxelGridSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    net: NetConfig = field(default_factory=NetConfig)
    extractors: ExtractorConfig = field(default_factory=ExtractorConfig)
    resample: tuple[int, int] | None = (320, 240)
    backproject_stride: int = 1

    def __post_init__(self) -> None:
        if self.backproject_stride < 1:
            raise InputError("backproject_stride must be >= 1")
        if self.resample is not None:
            w, h = self.resample
            if w < 1 or h < 1:
                raise InputError(f"resample size must be >= 1, got {w}x{h}")


def _section(doc: dict, key: str, allowed: set[str]) -> dict:
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise InputError(f"config section {key!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise InputError(f"config section {key!r} has unknown keys {sorted(unknown)}")
    return sec


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise InputError("config must be a JSON object")
    top_allowed = {
        "paths", "coverage", "fusion", "voxel", "train", "net",
        "extractors", "resample", "backproject_stride",
    }
    unknown = set(doc) - top_allowed
    if unknown:
        raise InputError(f"config has unknown keys {sorted(unknown)}")

    paths = _section(doc, "paths", {"scene_root", "output_dir"})
    coverage = _section(
        doc, "coverage", {"threshold", "depth_tolerance", "stride", "max_views"}
    )
    fusion = _section(doc, "fusion", {"k", "d2", "d3", "aggregation"})
    voxel = _section(doc, "voxel", {"voxel_size", "origin"})
    train = _section(
        doc, "train",
        {"learning_rate", "beta1", "beta2", "eps", "epochs", "schedule",
         "min_lr", "seed"},
    )
    net = _section(doc, "net", {"hidden", "num_classes"})
    extractors = _section(
        doc, "extractors", {"features_2d", "features_3d", "seed", "external_dir"}
    )

    if "origin" in voxel:
        voxel = dict(voxel, origin=tuple(voxel["origin"]))
    if "hidden" in net:
        net = dict(net, hidden=tuple(net["hidden"]))

    resample: tuple[int, int] | None = (320, 240)
    if "resample" in doc:
        r = doc["resample"]
        if r is None:
            resample = None
        else:
            if not isinstance(r, dict) or set(r) - {"width", "height"}:
                raise InputError("resample must be null or {width, height}")
            resample = (int(r["width"]), int(r["height"]))

    try:
        return PipelineConfig(
            scene_root=str(paths.get("scene_root", "scenes")),
            output_dir=str(paths.get("output_dir", "output")),
            coverage=CoverageParams(**coverage),
            fusion=FusionConfig(**fusion),
            voxel=VoxelGridSpec(**voxel),
            train=TrainConfig(**train),
            net=NetConfig(**net),
            extractors=ExtractorConfig(**extractors),
            resample=resample,
            backproject_stride=int(doc.get("backproject_stride", 1)),
        )
    except TypeError as exc:
        raise InputError(f"bad config value: {exc}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)


def apply_overrides(cfg: PipelineConfig, **overrides) -> PipelineConfig:
    """Field-level overrides from CLI flags; None values are ignored."""
    out = cfg
    if overrides.get("threshold") is not None:
        out = replace(out, coverage=replace(out.coverage, threshold=overrides["threshold"]))
    if overrides.get("k") is not None:
        out = replace(out, fusion=replace(out.fusion, k=overrides["k"]))
    if overrides.get("voxel_size") is not None:
        out = replace(out, voxel=replace(out.voxel, voxel_size=overrides["voxel_size"]))
    if overrides.get("stride") is not None:
        out = replace(out, backproject_stride=overrides["stride"])
    if overrides.get("seed") is not None:
        seed = overrides["seed"]
        out = replace(
            out,
            train=replace(out.train, seed=seed),
            extractors=replace(out.extractors, seed=seed),
        )
    if overrides.get("features_2d") is not None:
        out = replace(out, extractors=replace(out.extractors, features_2d=overrides["features_2d"]))
    if overrides.get("features_3d") is not None:
        out = replace(out, extractors=replace(out.extractors, features_3d=overrides["features_3d"]))
    return out

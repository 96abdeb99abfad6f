"""End-to-end orchestration of the fusion pipeline.

Stages, in order: resample frames, select views by coverage, back-project
the selected views, integrate 2D features onto the original cloud, fuse
with 3D features, voxelize, train/infer the sparse net, devoxelize, score.
Each stage reads only documented artifacts of its predecessors, so any
stage can be replayed in isolation.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .clouds import FeatureCloud, concat_feature_clouds
from .config import PipelineConfig
from .errors import InputError
from .evaluation import ConfusionMatrix, metrics_report, save_metrics
from .features import attach_features, fuse, integrate_2d, make_extractor_2d, make_extractor_3d
from .geometry import backproject_frame
from .scene_io import Scene, resample_frame, write_feature_map, write_ply
from .sparsenet import (
    create_net,
    devoxelize,
    forward,
    save_checkpoint,
    save_loss_history,
    train,
    voxelize,
)
from .view_select import CoveragePlan, select_views

logger = logging.getLogger(__name__)


@contextmanager
def _stage(name: str):
    start = time.perf_counter()
    yield
    logger.info("stage %-12s %.3f s", name, time.perf_counter() - start)


def prepare_scene(scene: Scene, config: PipelineConfig) -> Scene:
    """Resample all frames to the configured working resolution."""
    if config.resample is None:
        return scene
    w, h = config.resample
    frames = [resample_frame(f, w, h) for f in scene.frames]
    return Scene(scene_id=scene.scene_id, points=scene.points, frames=frames)


def backproject_selected(
    scene: Scene,
    plan: CoveragePlan,
    stride: int = 1,
    extractor_2d=None,
) -> FeatureCloud:
    """Merge back-projected clouds of the plan's frames, in plan order.

    With an extractor, each frame first gets a feature map and points carry
    feature rows; otherwise they carry raw RGB.
    """
    if not plan.selected:
        raise InputError("coverage plan selects no frames")
    clouds = []
    for fid in plan.selected:
        frame = scene.frame_by_id(fid)
        if extractor_2d is not None:
            frame = attach_features(frame, extractor_2d)
        clouds.append(backproject_frame(frame, stride=stride))
    return concat_feature_clouds(clouds)


def compute_f2d(
    scene: Scene, plan: CoveragePlan, config: PipelineConfig
) -> tuple[np.ndarray, FeatureCloud | None]:
    """Integrated 2D features for every original point (zeros when ablated)."""
    n = len(scene.points)
    kind = config.extractors.features_2d
    if kind == "none":
        return np.zeros((n, config.fusion.d2)), None
    extractor = make_extractor_2d(
        kind, config.fusion.d2, config.extractors.seed, config.extractors.external_dir
    )
    cloud = backproject_selected(
        scene, plan, stride=config.backproject_stride, extractor_2d=extractor
    )
    return integrate_2d(scene.points, cloud, config.fusion), cloud


def compute_f3d(scene: Scene, config: PipelineConfig) -> np.ndarray:
    """Per-point 3D features of the original cloud (zeros when ablated)."""
    kind = config.extractors.features_3d
    if kind == "none":
        return np.zeros((len(scene.points), config.fusion.d3))
    extractor = make_extractor_3d(kind, config.fusion.d3, config.extractors.seed)
    return extractor.extract(scene.points)


def run_segment(
    scene: Scene,
    config: PipelineConfig,
    output_dir: str | Path | None = None,
) -> dict:
    """Run the full pipeline on one scene; returns results and writes artifacts.

    The result dict holds the plan, per-point predictions, the trained net,
    the loss history, and (when the scene has labels) the metrics report.
    When output_dir is given, the documented artifacts are written there.
    """
    with _stage("resample"):
        scene = prepare_scene(scene, config)
    with _stage("select"):
        plan = select_views(scene, config.coverage)
    with _stage("backproject"):
        f2d, backproj = compute_f2d(scene, plan, config)
    with _stage("features3d"):
        f3d = compute_f3d(scene, config)
    with _stage("fuse"):
        fused = fuse(f2d, f3d)
    with _stage("voxelize"):
        tensor = voxelize(
            scene.points.positions, fused, config.voxel, labels=scene.labels
        )

    if config.net.num_classes is not None:
        num_classes = config.net.num_classes
    elif scene.labels is not None:
        num_classes = int(scene.labels.max()) + 1
    else:
        raise InputError(
            "scene has no labels; set net.num_classes to run inference-only"
        )

    net = create_net(
        fused.shape[1], config.net.hidden, num_classes, seed=config.train.seed
    )
    history = []
    if scene.labels is not None:
        with _stage("train"):
            net, history = train(net, [tensor], config.train)
    with _stage("infer"):
        logits = forward(net, tensor)
        preds = devoxelize(logits, tensor.point_map)

    report = None
    cm = None
    if scene.labels is not None:
        cm = ConfusionMatrix(num_classes).accumulate(scene.labels, preds)
        report = metrics_report(cm)

    result = {
        "scene_id": scene.scene_id,
        "plan": plan,
        "predictions": preds,
        "net": net,
        "history": history,
        "metrics": report,
        "fused_dim": fused.shape[1],
    }

    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        sid = scene.scene_id
        plan.save(out / f"plan_{sid}.json")
        if backproj is not None:
            write_ply(backproj, out / f"backproj_{sid}.ply", color_mode="per-view-palette")
            write_feature_map(
                out / f"backproj_{sid}_features.fmap",
                backproj.features[:, None, :].astype(np.float32),
            )
        write_feature_map(
            out / f"fused_{sid}.fmap", fused[:, None, :].astype(np.float32)
        )
        save_checkpoint(net, out / f"checkpoint_{sid}.dmfn")
        if history:
            save_loss_history(history, out / f"loss_{sid}.csv")
        np.savetxt(out / f"pred_{sid}.txt", preds, fmt="%d")
        if cm is not None:
            save_metrics(cm, out / f"metrics_{sid}.json")
    return result

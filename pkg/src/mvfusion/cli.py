"""Command-line entry points: synth, select, backproject, segment, eval.

Exit codes: 0 success, 1 internal error, 2 bad input (malformed config,
spec, or files).  Every subcommand is deterministic for identical inputs
and seeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, apply_overrides, load_config
from .errors import InputError
from .evaluation import ConfusionMatrix, metrics_report
from .features import make_extractor_2d
from .pipeline import backproject_selected, prepare_scene, run_segment
from .scene_io import load_scene, save_scene, write_feature_map, write_ply
from .synthetic import generate_synthetic_scene, load_spec
from .view_select import CoveragePlan, select_views


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override train/extractor seed")
    p.add_argument("--stride", type=int, default=None, help="back-projection pixel stride")
    p.add_argument("--voxel-size", type=float, default=None, help="voxel edge in meters")
    p.add_argument("--k", type=int, default=None, help="neighbors per point for integration")
    p.add_argument("--threshold", type=float, default=None, help="coverage threshold")
    p.add_argument(
        "--features-2d", choices=["filterbank", "random", "external", "none"], default=None
    )
    p.add_argument(
        "--features-3d", choices=["geometric", "random", "rgb", "none"], default=None
    )


def _config_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config)
    return apply_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        stride=getattr(args, "stride", None),
        voxel_size=getattr(args, "voxel_size", None),
        k=getattr(args, "k", None),
        threshold=getattr(args, "threshold", None),
        features_2d=getattr(args, "features_2d", None),
        features_3d=getattr(args, "features_3d", None),
    )


def cmd_synth(args) -> int:
    spec = load_spec(args.spec_file)
    scene = generate_synthetic_scene(spec, seed=args.seed if args.seed is not None else 0)
    path = save_scene(scene, args.out_dir)
    print(f"wrote scene {scene.scene_id!r} ({len(scene.points)} points, "
          f"{len(scene.frames)} frames) to {path}")
    return 0


def _load_prepared(cfg: PipelineConfig, scene_id: str):
    scene = load_scene(cfg.scene_root, scene_id)
    return prepare_scene(scene, cfg)


def cmd_select(args) -> int:
    cfg = _config_from_args(args)
    scene = _load_prepared(cfg, args.scene)
    plan = select_views(scene, cfg.coverage)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan_path = out / f"plan_{args.scene}.json"
    plan.save(plan_path)
    last = plan.coverage_after[-1] if plan.coverage_after else 0.0
    print(f"selected {len(plan.selected)} views, coverage {last:.3f} "
          f"({plan.termination}); plan at {plan_path}")
    return 0


def cmd_backproject(args) -> int:
    cfg = _config_from_args(args)
    scene = _load_prepared(cfg, args.scene)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.plan is not None:
        plan = CoveragePlan.load(args.plan)
    else:
        plan = select_views(scene, cfg.coverage)
        plan.save(out / f"plan_{args.scene}.json")

    kind = cfg.extractors.features_2d
    extractor = None
    if kind != "none":
        extractor = make_extractor_2d(
            kind, cfg.fusion.d2, cfg.extractors.seed, cfg.extractors.external_dir
        )
    cloud = backproject_selected(
        scene, plan, stride=cfg.backproject_stride, extractor_2d=extractor
    )
    ply_path = out / f"backproj_{args.scene}.ply"
    write_ply(cloud, ply_path, color_mode="per-view-palette")
    write_feature_map(
        out / f"backproj_{args.scene}_features.fmap",
        cloud.features[:, None, :].astype(np.float32),
    )
    print(f"back-projected {len(cloud)} points from {len(plan.selected)} views "
          f"to {ply_path}")
    return 0


def cmd_segment(args) -> int:
    cfg = _config_from_args(args)
    scene = load_scene(cfg.scene_root, args.scene)
    result = run_segment(scene, cfg, output_dir=cfg.output_dir)
    if result["metrics"] is not None:
        print(f"scene {args.scene}: mIoU {result['metrics']['miou']:.4f}, "
              f"mean accuracy {result['metrics']['mean_accuracy']:.4f}")
    else:
        print(f"scene {args.scene}: predictions written (no labels, no metrics)")
    return 0


def _read_labels(path: str) -> np.ndarray:
    try:
        tokens = Path(path).read_text().split()
        return np.array([int(tok) for tok in tokens], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read labels from {path}: {exc}") from exc


def cmd_eval(args) -> int:
    gt = _read_labels(args.gt_file)
    pred = _read_labels(args.pred_file)
    if args.num_classes is not None:
        num_classes = args.num_classes
    else:
        combined = np.concatenate([gt, pred])
        if args.ignore_label is not None:
            combined = combined[combined != args.ignore_label]
        if len(combined) == 0:
            raise InputError("no scored labels; pass --num-classes")
        num_classes = int(combined.max()) + 1
    cm = ConfusionMatrix(num_classes, ignore_label=args.ignore_label)
    cm.accumulate(gt, pred)
    print(json.dumps(metrics_report(cm), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvfusion",
        description="Multi-view 2D->3D feature fusion and sparse-voxel segmentation",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage timings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("spec_file", help="JSON scene spec")
    p.add_argument("out_dir", help="scene root to write into")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select", help="greedy view selection, writes a plan JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--scene", required=True)
    _add_override_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("backproject", help="merge selected views into a point cloud")
    p.add_argument("--config", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--plan", default=None, help="reuse an existing plan JSON")
    _add_override_flags(p)
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("segment", help="full pipeline: select, fuse, train, score")
    p.add_argument("--config", required=True)
    p.add_argument("--scene", required=True)
    _add_override_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score a prediction file against ground truth")
    p.add_argument("gt_file")
    p.add_argument("pred_file")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--ignore-label", type=int, default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

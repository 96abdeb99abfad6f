"""Orchestration-level checks on small synthetic scenes."""

import numpy as np
import pytest

from mvfusion import (
    CoverageParams,
    FusionConfig,
    InputError,
    TrainConfig,
    VoxelGridSpec,
    backproject_frame,
    backproject_selected,
    select_views,
)
from mvfusion.config import ExtractorConfig, NetConfig, PipelineConfig
from mvfusion.pipeline import compute_f2d, prepare_scene, run_segment


def desk_config(**over):
    base = dict(
        coverage=CoverageParams(threshold=0.9),
        fusion=FusionConfig(k=3, d2=8, d3=8),
        voxel=VoxelGridSpec(voxel_size=0.05),
        train=TrainConfig(learning_rate=0.05, epochs=15, schedule="constant", seed=0),
        net=NetConfig(hidden=(16, 16)),
        extractors=ExtractorConfig(features_2d="filterbank", features_3d="geometric"),
        resample=None,
    )
    base.update(over)
    return PipelineConfig(**base)


class TestPrepareScene:
    def test_resamples_all_frames(self, fusion_scene):
        cfg = desk_config(resample=(64, 48))
        prepared = prepare_scene(fusion_scene, cfg)
        assert all(f.depth.shape == (48, 64) for f in prepared.frames)
        assert all(f.intrinsics.width == 64 for f in prepared.frames)
        # original scene untouched
        assert fusion_scene.frames[0].depth.shape == (96, 128)

    def test_none_is_identity(self, fusion_scene):
        assert prepare_scene(fusion_scene, desk_config()) is fusion_scene


class TestBackprojectSelected:
    def test_merged_cloud_matches_per_frame_recompute(self, fusion_scene):
        plan = select_views(fusion_scene, CoverageParams(threshold=0.9))
        merged = backproject_selected(fusion_scene, plan, stride=3)
        parts = [
            backproject_frame(fusion_scene.frame_by_id(fid), stride=3)
            for fid in plan.selected
        ]
        np.testing.assert_array_equal(
            merged.positions, np.concatenate([p.positions for p in parts])
        )
        np.testing.assert_array_equal(
            merged.source_view, np.concatenate([p.source_view for p in parts])
        )

    def test_point_count_is_sum_of_valid_pixels(self, fusion_scene):
        plan = select_views(fusion_scene, CoverageParams(threshold=0.9))
        merged = backproject_selected(fusion_scene, plan, stride=2)
        expected = sum(
            int((fusion_scene.frame_by_id(fid).depth[::2, ::2] > 0).sum())
            for fid in plan.selected
        )
        assert len(merged) == expected

    def test_empty_plan_rejected(self, fusion_scene):
        plan = select_views(fusion_scene, CoverageParams(threshold=0.9))
        plan.selected = []
        with pytest.raises(InputError):
            backproject_selected(fusion_scene, plan)


class TestRunSegment:
    def test_artifacts_written(self, fusion_scene, tmp_path):
        cfg = desk_config()
        result = run_segment(fusion_scene, cfg, output_dir=tmp_path)
        assert result["metrics"] is not None
        assert len(result["predictions"]) == len(fusion_scene.points)
        assert (tmp_path / "plan_fusion3.json").exists()
        assert (tmp_path / "checkpoint_fusion3.dmfn").exists()
        assert (tmp_path / "metrics_fusion3.json").exists()

    def test_deterministic(self, fusion_scene):
        cfg = desk_config()
        r1 = run_segment(fusion_scene, cfg)
        r2 = run_segment(fusion_scene, cfg)
        np.testing.assert_array_equal(r1["predictions"], r2["predictions"])
        assert r1["history"] == r2["history"]

    def test_zero_padded_ablations(self, fusion_scene):
        cfg = desk_config(
            extractors=ExtractorConfig(features_2d="none", features_3d="geometric")
        )
        f2d, cloud = compute_f2d(fusion_scene, select_views(fusion_scene, cfg.coverage), cfg)
        assert cloud is None
        assert f2d.shape == (len(fusion_scene.points), 8)
        assert not f2d.any()

    def test_fused_dim_is_d2_plus_d3(self, fusion_scene):
        result = run_segment(fusion_scene, desk_config())
        assert result["fused_dim"] == 16

    def test_stage_timings_logged(self, fusion_scene, caplog):
        import logging

        with caplog.at_level(logging.INFO, logger="mvfusion.pipeline"):
            run_segment(fusion_scene, desk_config())
        messages = [r.getMessage() for r in caplog.records]
        for stage in ("select", "backproject", "voxelize", "train", "infer"):
            assert any(stage in m for m in messages), stage

    def test_unlabeled_scene_needs_num_classes(self, fusion_scene):
        from mvfusion.scene_io import Scene
        from mvfusion.clouds import PointCloud

        bare = Scene(
            scene_id="bare",
            points=PointCloud(fusion_scene.points.positions,
                              colors=fusion_scene.points.colors),
            frames=fusion_scene.frames,
        )
        with pytest.raises(InputError):
            run_segment(bare, desk_config())
        result = run_segment(bare, desk_config(net=NetConfig(hidden=(16, 16),
                                                             num_classes=3)))
        assert result["metrics"] is None
        assert len(result["predictions"]) == len(bare.points)

"""Multi-view RGB-D to 3D fusion and sparse-voxel semantic segmentation.

The library lifts per-pixel 2D features from a dynamically selected set of
RGB-D views into a scene's point cloud, fuses them with per-point 3D
features, and segments the result with a small submanifold sparse
convolution network.  Everything runs at desk scale on a CPU and is
verifiable against independent oracles.
"""

from .clouds import FeatureCloud, PointCloud, concat_feature_clouds
from .config import PipelineConfig, config_from_dict, load_config
from .errors import (
    FormatError,
    InputError,
    InvalidDepthError,
    OutOfBoundsError,
    ReducedNeighborhoodWarning,
    SceneLoadError,
    SpecError,
    ValidationError,
)
from .evaluation import ConfusionMatrix, mean_class_accuracy, metrics_report, miou
from .features import (
    FusionConfig,
    KnnIndex,
    attach_features,
    build_knn_index,
    fuse,
    integrate_2d,
    make_extractor_2d,
    make_extractor_3d,
)
from .geometry import (
    CAMERA_TO_WORLD,
    WORLD_TO_CAMERA,
    CameraIntrinsics,
    Pixel,
    Pose,
    backproject_frame,
    backproject_pixel,
    project_point,
    project_points,
)
from .pipeline import backproject_selected, prepare_scene, run_segment
from .scene_io import (
    CameraFrame,
    Scene,
    load_scene,
    read_feature_map,
    read_ply,
    resample_frame,
    save_scene,
    write_feature_map,
    write_ply,
)
from .sparsenet import (
    SparseConvLayer,
    SparseSegNet,
    SparseTensor,
    TrainConfig,
    VoxelGridSpec,
    create_net,
    cross_entropy,
    devoxelize,
    forward,
    load_checkpoint,
    save_checkpoint,
    sparse_conv,
    train,
    voxelize,
)
from .synthetic import (
    BoxSpec,
    RoomSpec,
    SphereSpec,
    SyntheticSpec,
    generate_synthetic_scene,
    render_view,
)
from .view_select import CoverageParams, CoveragePlan, frame_covers, greedy_select, select_views

__version__ = "0.1.0"

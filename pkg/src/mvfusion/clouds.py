"""Point cloud containers.

Two array-of-struct views of a scene: ``PointCloud`` is the scene's native
geometry (positions plus optional colors and class labels), ``FeatureCloud``
carries a dense feature row per point, e.g. the cloud formed by lifting
image pixels into world space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class PointCloud:
    """N points in the world frame with optional per-point attributes.

    positions: (N, 3) float, meters.
    colors:    (N, 3) uint8 or None.
    labels:    (N,) integer class ids or None.
    """

    positions: np.ndarray
    colors: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InputError(f"positions must be (N, 3), got {self.positions.shape}")
        if not np.all(np.isfinite(self.positions)):
            raise InputError("positions contain non-finite values")
        n = len(self.positions)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8)
            if self.colors.shape != (n, 3):
                raise InputError(f"colors must be ({n}, 3), got {self.colors.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise InputError(f"labels must be ({n},), got {self.labels.shape}")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class FeatureCloud:
    """M points, each carrying a D-dimensional feature row.

    positions:   (M, 3) float, meters.
    features:    (M, D) float.
    source_view: (M,) frame ids the points were lifted from, or None.
    """

    positions: np.ndarray
    features: np.ndarray
    source_view: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InputError(f"positions must be (M, 3), got {self.positions.shape}")
        if self.features.ndim != 2:
            raise InputError(f"features must be (M, D), got {self.features.shape}")
        if len(self.features) != len(self.positions):
            raise InputError(
                f"row mismatch: {len(self.positions)} positions vs "
                f"{len(self.features)} feature rows"
            )
        if self.features.shape[1] < 1:
            raise InputError("feature dimension must be >= 1")
        if self.source_view is not None:
            self.source_view = np.asarray(self.source_view, dtype=np.int64)
            if self.source_view.shape != (len(self.positions),):
                raise InputError("source_view length must match point count")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def concat_feature_clouds(clouds: list[FeatureCloud]) -> FeatureCloud:
    """Stack feature clouds in list order; dims must agree."""
    if not clouds:
        raise InputError("cannot concatenate zero clouds")
    dims = {c.dim for c in clouds}
    if len(dims) != 1:
        raise InputError(f"feature dims disagree: {sorted(dims)}")
    views: np.ndarray | None = None
    if all(c.source_view is not None for c in clouds):
        views = np.concatenate([c.source_view for c in clouds])
    return FeatureCloud(
        positions=np.concatenate([c.positions for c in clouds]),
        features=np.concatenate([c.features for c in clouds]),
        source_view=views,
    )

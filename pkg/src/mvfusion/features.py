"""Feature extraction stand-ins, exact KNN, and 2D/3D feature fusion.

The fusion recipe: for every point of the original cloud, find its k
nearest back-projected pixels in Euclidean space, sum their feature rows
into a 2D descriptor, and concatenate that with the point's 3D descriptor
(2D block first).  The sum is deliberately unnormalized; a mean is
available behind FusionConfig.aggregation for experiments.

KNN queries are exact: a kd-tree proposes candidates, which are re-ranked
by squared distances recomputed in plain float64 numpy so results (indices
AND distances) match a brute-force scan bit for bit.  Ties at equal
distance break toward the lowest point index.

Feature extractors are frozen: pure functions of their inputs plus an
explicit seed, never trained.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .clouds import FeatureCloud, PointCloud
from .errors import InputError, ReducedNeighborhoodWarning
from .scene_io import CameraFrame, read_feature_map


@dataclass(frozen=True)
class FusionConfig:
    k: int = 3
    d2: int = 64
    d3: int = 64
    aggregation: str = "sum"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if self.d2 < 1 or self.d3 < 1:
            raise InputError(f"feature dims must be >= 1, got d2={self.d2}, d3={self.d3}")
        if self.aggregation not in ("sum", "mean"):
            raise InputError(f"aggregation must be 'sum' or 'mean', got {self.aggregation!r}")

    @property
    def fused_dim(self) -> int:
        return self.d2 + self.d3


# ---------------------------------------------------------------------------
# Exact k-nearest-neighbor index
# ---------------------------------------------------------------------------

class KnnIndex:
    """Immutable exact-KNN index over an (M, 3) point set."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise InputError(f"points must be (M, 3), got {points.shape}")
        if len(points) == 0:
            raise InputError("cannot build a KNN index over zero points")
        self._points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self._points)

    def query(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Exact k nearest neighbors of each query row.

        Returns (distances, indices), both (Q, k), ordered by ascending
        distance with index as the tie-break.  k may not exceed the number
        of indexed points.
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        m = len(self._points)
        if not 1 <= k <= m:
            raise InputError(f"k must be in [1, {m}], got {k}")

        # kd-tree pass bounds the kth distance; the slightly padded ball
        # then provably contains the true neighbor set, which is re-ranked
        # with exact arithmetic below.
        d_scipy = self._tree.query(queries, k=k)[0]
        d_kth = d_scipy if k == 1 else d_scipy[:, -1]
        radius = d_kth * (1.0 + 1e-9) + 1e-12
        candidates = self._tree.query_ball_point(queries, radius)

        q = len(queries)
        out_d = np.empty((q, k))
        out_i = np.empty((q, k), dtype=np.int64)
        for row in range(q):
            cand = np.asarray(candidates[row], dtype=np.int64)
            diff = self._points[cand] - queries[row]
            d2 = np.sum(diff * diff, axis=1)
            order = np.lexsort((cand, d2))[:k]
            out_i[row] = cand[order]
            out_d[row] = np.sqrt(d2[order])
        return out_d, out_i


def build_knn_index(points: np.ndarray) -> KnnIndex:
    return KnnIndex(points)


# ---------------------------------------------------------------------------
# Feature integration and fusion
# ---------------------------------------------------------------------------

def integrate_2d(
    original: PointCloud, backproj: FeatureCloud, cfg: FusionConfig
) -> np.ndarray:
    """Aggregate each original point's k nearest back-projected features.

    Output is (N, d2).  When fewer than k back-projected points exist, all
    of them are used and a ReducedNeighborhoodWarning is issued.  Summation
    runs in a canonical order (distance, then neighbor position) so the
    result is bit-identical under any permutation of the back-projected
    rows.
    """
    if len(backproj) == 0:
        raise InputError("back-projected cloud is empty")
    if backproj.dim != cfg.d2:
        raise InputError(
            f"back-projected features are {backproj.dim}-dim, config says d2={cfg.d2}"
        )
    k = cfg.k
    m = len(backproj)
    if k > m:
        warnings.warn(
            f"requested k={k} neighbors but only {m} back-projected points "
            f"exist; using all {m}",
            ReducedNeighborhoodWarning,
            stacklevel=2,
        )
        k = m

    index = KnnIndex(backproj.positions)
    _, idx = index.query(original.positions, k)

    n = len(original)
    flat = idx.ravel()
    pos = backproj.positions[flat]
    rows = np.repeat(np.arange(n), k)
    diff = pos - original.positions[rows]
    d2 = np.sum(diff * diff, axis=1)
    # lexsort: last key is primary -> (row, d^2, x, y, z)
    order = np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0], d2, rows))
    sorted_idx = flat[order].reshape(n, k)
    gathered = backproj.features[sorted_idx]
    out = gathered.sum(axis=1)
    if cfg.aggregation == "mean":
        out = out / k
    return out


def fuse(f2d: np.ndarray, f3d: np.ndarray) -> np.ndarray:
    """Concatenate per-point 2D and 3D descriptors, 2D block first."""
    f2d = np.asarray(f2d)
    f3d = np.asarray(f3d)
    if f2d.ndim != 2 or f3d.ndim != 2:
        raise InputError("fuse expects two 2-D feature matrices")
    if len(f2d) != len(f3d):
        raise InputError(f"row mismatch: {len(f2d)} vs {len(f3d)}")
    return np.concatenate([f2d, f3d], axis=1)


# ---------------------------------------------------------------------------
# 2D feature extractors (stand-ins for a frozen learned backbone)
# ---------------------------------------------------------------------------

def _to_dim(channels: np.ndarray, dim: int) -> np.ndarray:
    """Truncate or zero-pad the channel axis to exactly `dim`."""
    have = channels.shape[-1]
    if have >= dim:
        return channels[..., :dim]
    pad = [(0, 0)] * (channels.ndim - 1) + [(0, dim - have)]
    return np.pad(channels, pad)


class FilterBank2D:
    """Hand-designed per-pixel channels: RGB, luminance, gradients, local mean.

    Channel order: r, g, b (0..1), luminance, grad_x, grad_y, 3x3 mean of
    luminance; truncated or zero-padded to `dim`.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise InputError("dim must be >= 1")
        self.dim = dim

    def extract(self, frame: CameraFrame) -> np.ndarray:
        rgb = frame.color.astype(np.float64) / 255.0
        lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
        padded = np.pad(lum, 1, mode="edge")
        gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
        gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
        win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
        local_mean = win.mean(axis=(-2, -1))
        chans = np.concatenate(
            [rgb, lum[:, :, None], gx[:, :, None], gy[:, :, None], local_mean[:, :, None]],
            axis=-1,
        )
        return _to_dim(chans, self.dim).astype(np.float32)


class RandomProjection2D:
    """Seeded linear projection of each pixel's 3x3 RGB patch."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._w = rng.normal(size=(27, dim)) / np.sqrt(27.0)

    def extract(self, frame: CameraFrame) -> np.ndarray:
        rgb = frame.color.astype(np.float64) / 255.0
        padded = np.pad(rgb, ((1, 1), (1, 1), (0, 0)), mode="edge")
        h, w = rgb.shape[:2]
        patches = np.empty((h, w, 27))
        i = 0
        for dv in (-1, 0, 1):
            for du in (-1, 0, 1):
                patches[:, :, i : i + 3] = padded[1 + dv : 1 + dv + h, 1 + du : 1 + du + w]
                i += 3
        return (patches @ self._w).astype(np.float32)


class ExternalFeatures2D:
    """Reads precomputed per-frame feature maps (<dir>/<frame_id>.fmap)."""

    def __init__(self, directory: str | Path, dim: int | None = None):
        self.directory = Path(directory)
        self.dim = dim

    def extract(self, frame: CameraFrame) -> np.ndarray:
        fmap = read_feature_map(self.directory / f"{frame.frame_id}.fmap")
        if fmap.shape[:2] != frame.depth.shape:
            raise InputError(
                f"external feature map {fmap.shape[:2]} does not match "
                f"frame {frame.frame_id} images {frame.depth.shape}"
            )
        if self.dim is not None and fmap.shape[2] != self.dim:
            raise InputError(
                f"external feature map has D={fmap.shape[2]}, expected {self.dim}"
            )
        return fmap


def attach_features(frame: CameraFrame, extractor) -> CameraFrame:
    """Return a copy of the frame with extractor output as its feature map."""
    fmap = extractor.extract(frame)
    if fmap.shape[:2] != frame.depth.shape:
        raise InputError("extractor returned a feature map of the wrong size")
    return replace(frame, feature_map=np.asarray(fmap, dtype=np.float32))


def make_extractor_2d(kind: str, dim: int, seed: int = 0, external_dir=None):
    """Factory for the 2D extractor variants; kind 'none' returns None."""
    if kind == "filterbank":
        return FilterBank2D(dim)
    if kind == "random":
        return RandomProjection2D(dim, seed)
    if kind == "external":
        if external_dir is None:
            raise InputError("external 2D features need external_dir")
        return ExternalFeatures2D(external_dir, dim)
    if kind == "none":
        return None
    raise InputError(f"unknown 2D extractor kind: {kind!r}")


# ---------------------------------------------------------------------------
# 3D feature extractors
# ---------------------------------------------------------------------------

class GeometricFeatures3D:
    """Per-point height above floor, local density, and normal verticality.

    Channels: height above the cloud's minimum z; inverse distance to the
    k-th neighbor (crowding); |z| of the smallest-covariance eigenvector of
    the k-neighborhood (1 on flats, ~0 on vertical walls).  Padded to dim.
    """

    def __init__(self, dim: int, k: int = 8):
        if dim < 1:
            raise InputError("dim must be >= 1")
        self.dim = dim
        self.k = k

    def extract(self, cloud: PointCloud) -> np.ndarray:
        pos = cloud.positions
        n = len(pos)
        height = pos[:, 2] - pos[:, 2].min()
        k = min(self.k + 1, n)  # +1: each point is its own nearest neighbor
        _, idx = KnnIndex(pos).query(pos, k)
        neigh = pos[idx]
        d_far = np.linalg.norm(neigh[:, -1] - pos, axis=1)
        density = 1.0 / (d_far + 1e-6)
        centered = neigh - neigh.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", centered, centered) / max(k - 1, 1)
        _, vecs = np.linalg.eigh(cov)
        normal_z = np.abs(vecs[:, 2, 0])  # eigenvector of smallest eigenvalue
        chans = np.stack([height, density, normal_z], axis=1)
        return _to_dim(chans, self.dim)


class RandomProjection3D:
    """Seeded linear projection of raw positions."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._w = rng.normal(size=(3, dim)) / np.sqrt(3.0)

    def extract(self, cloud: PointCloud) -> np.ndarray:
        return cloud.positions @ self._w


class RgbPassthrough3D:
    """The cloud's own colors, normalized to 0..1 and padded to dim."""

    def __init__(self, dim: int):
        self.dim = dim

    def extract(self, cloud: PointCloud) -> np.ndarray:
        if cloud.colors is None:
            raise InputError("rgb passthrough needs a cloud with colors")
        return _to_dim(cloud.colors.astype(np.float64) / 255.0, self.dim)


def make_extractor_3d(kind: str, dim: int, seed: int = 0):
    """Factory for the 3D extractor variants; kind 'none' returns None."""
    if kind == "geometric":
        return GeometricFeatures3D(dim)
    if kind == "random":
        return RandomProjection3D(dim, seed)
    if kind == "rgb":
        return RgbPassthrough3D(dim)
    if kind == "none":
        return None
    raise InputError(f"unknown 3D extractor kind: {kind!r}")

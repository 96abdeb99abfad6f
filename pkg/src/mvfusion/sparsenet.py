"""Sparse voxel tensors and a small submanifold-convolution segmentation net.

Points quantize to voxel coordinates floor((p - origin) / voxel_size);
per-voxel features are member means and per-voxel labels majority votes
(ties break toward the smallest class id).  Convolutions are submanifold:
outputs exist only on occupied input coordinates,

    out(v) = bias + sum over the 27 offsets o of feat(v + o) @ W[o]

with missing neighbors skipped.  The whole net (conv -> ReLU -> conv ->
linear head) has hand-written gradients, trained by Adam under a constant
or cosine-annealed learning rate.  Accumulation orders are fixed (voxels in
sorted coordinate order, offsets in lexicographic order), so results are
bit-reproducible.

Checkpoint format: magic ``DMFN`` | u32 version = 1 | u32 conv count |
per conv (u32 c_in | u32 c_out | 27*c_in*c_out float32 weights | c_out
float32 bias) | u32 head c_in | u32 num_classes | head weights | head bias,
all little-endian.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

# 3x3x3 neighborhood offsets, lexicographic; index 13 is the center.
OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
CENTER_OFFSET = 13


@dataclass(frozen=True)
class VoxelGridSpec:
    voxel_size: float = 0.05
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.voxel_size <= 0:
            raise InputError(f"voxel_size must be positive, got {self.voxel_size}")


@dataclass
class SparseTensor:
    """Occupied voxel coordinates with aligned per-voxel feature rows.

    coords:    (V, 3) int64, unique, lexicographically sorted.
    features:  (V, C) float64.
    spec:      the grid that produced the coordinates.
    point_map: (N,) voxel row index of every input point, or None.
    labels:    (V,) majority class ids, or None.
    counts:    (V,) member point counts, or None.
    """

    coords: np.ndarray
    features: np.ndarray
    spec: VoxelGridSpec
    point_map: np.ndarray | None = None
    labels: np.ndarray | None = None
    counts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise InputError(f"coords must be (V, 3), got {self.coords.shape}")
        if len(self.coords) != len(self.features):
            raise InputError("coords and features row counts differ")

    @property
    def num_voxels(self) -> int:
        return len(self.coords)

    @property
    def num_channels(self) -> int:
        return self.features.shape[1]

    def with_features(self, features: np.ndarray) -> "SparseTensor":
        return SparseTensor(
            coords=self.coords, features=features, spec=self.spec,
            point_map=self.point_map, labels=self.labels, counts=self.counts,
        )


def voxelize(
    points: np.ndarray,
    features: np.ndarray,
    spec: VoxelGridSpec,
    labels: np.ndarray | None = None,
) -> SparseTensor:
    """Quantize points into a sparse tensor of per-voxel mean features."""
    points = np.asarray(points, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise InputError(f"points must be (N, 3) with N >= 1, got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise InputError("points contain non-finite coordinates")
    if features.ndim != 2 or len(features) != len(points):
        raise InputError("features must be (N, C) aligned with points")

    rel = (points - np.asarray(spec.origin)) / spec.voxel_size
    coords = np.floor(rel).astype(np.int64)
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    v = len(uniq)
    counts = np.bincount(inverse, minlength=v)

    sums = np.zeros((v, features.shape[1]))
    np.add.at(sums, inverse, features)
    means = sums / counts[:, None]

    vox_labels = None
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (len(points),):
            raise InputError("labels must be (N,) aligned with points")
        if np.any(labels < 0):
            raise InputError("labels must be non-negative")
        n_classes = int(labels.max()) + 1
        votes = np.bincount(inverse * n_classes + labels, minlength=v * n_classes)
        # argmax returns the first maximum, i.e. the smallest class id on ties
        vox_labels = votes.reshape(v, n_classes).argmax(axis=1)

    return SparseTensor(
        coords=uniq, features=means, spec=spec,
        point_map=inverse, labels=vox_labels, counts=counts,
    )


# ---------------------------------------------------------------------------
# Kernel maps and submanifold convolution
# ---------------------------------------------------------------------------

def build_kernel_map(coords: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per offset, the (output row, input row) pairs of occupied neighbors.

    The map is shift-invariant: coordinates are rebased to their minimum
    before hashing, so translating all coords by a constant yields the
    identical map.  Both row arrays are strictly increasing in output row,
    and within one offset every row appears at most once on each side.
    """
    coords = np.asarray(coords, dtype=np.int64)
    base = coords.min(axis=0)
    rel = coords - base
    dims = rel.max(axis=0) + 3  # room for +/-1 offsets after the +1 shift
    if float(dims[0]) * float(dims[1]) * float(dims[2]) >= 2**62:
        raise InputError("voxel coordinate span too large to index")
    keys = np.ravel_multi_index((rel + 1).T, dims)
    sort_order = np.argsort(keys)
    sorted_keys = keys[sort_order]

    pairs = []
    for off in OFFSETS:
        nrel = rel + off + 1
        in_grid = np.all((nrel >= 0) & (nrel < dims), axis=1)
        nkeys = np.ravel_multi_index(np.clip(nrel, 0, dims - 1).T, dims)
        pos = np.searchsorted(sorted_keys, nkeys)
        pos = np.clip(pos, 0, len(sorted_keys) - 1)
        found = in_grid & (sorted_keys[pos] == nkeys)
        i_out = np.nonzero(found)[0]
        i_in = sort_order[pos[found]]
        pairs.append((i_out, i_in))
    return pairs


@dataclass
class SparseConvLayer:
    """3x3x3 submanifold convolution weights: (27, C_in, C_out) + bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 3 or self.weight.shape[0] != len(OFFSETS):
            raise InputError(f"weight must be (27, C_in, C_out), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[2],):
            raise InputError("bias length must equal C_out")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise InputError("layer parameters must be finite")

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[2]

    @classmethod
    def create(cls, c_in: int, c_out: int, rng: np.random.Generator) -> "SparseConvLayer":
        std = math.sqrt(2.0 / (len(OFFSETS) * c_in))
        return cls(weight=rng.normal(0.0, std, (len(OFFSETS), c_in, c_out)),
                   bias=np.zeros(c_out))


def sparse_conv_features(
    feats: np.ndarray,
    layer: SparseConvLayer,
    kernel_map: list[tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Apply a conv layer to raw feature rows given a precomputed kernel map."""
    if feats.shape[1] != layer.c_in:
        raise InputError(f"layer expects {layer.c_in} channels, got {feats.shape[1]}")
    out = np.tile(layer.bias, (len(feats), 1))
    for oi, (i_out, i_in) in enumerate(kernel_map):
        if len(i_out):
            # i_out rows are unique within one offset: plain indexed add
            out[i_out] += feats[i_in] @ layer.weight[oi]
    return out


def sparse_conv(x: SparseTensor, layer: SparseConvLayer) -> SparseTensor:
    """Submanifold convolution: output features on the same coordinates."""
    kernel_map = build_kernel_map(x.coords)
    return x.with_features(sparse_conv_features(x.features, layer, kernel_map))


def _conv_backward(
    feats_in: np.ndarray,
    d_out: np.ndarray,
    layer: SparseConvLayer,
    kernel_map: list[tuple[np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_feats_in, d_weight, d_bias)."""
    d_in = np.zeros_like(feats_in)
    d_w = np.zeros_like(layer.weight)
    for oi, (i_out, i_in) in enumerate(kernel_map):
        if len(i_out):
            d_w[oi] = feats_in[i_in].T @ d_out[i_out]
            # i_in rows are unique within one offset too (v -> v + o is 1:1)
            d_in[i_in] += d_out[i_out] @ layer.weight[oi].T
    return d_in, d_w, d_out.sum(axis=0)


# ---------------------------------------------------------------------------
# Network, loss, training
# ---------------------------------------------------------------------------

@dataclass
class SparseSegNet:
    """conv -> ReLU -> ... -> conv -> linear head, all hand-differentiated."""

    convs: list[SparseConvLayer]
    head_weight: np.ndarray
    head_bias: np.ndarray

    def __post_init__(self) -> None:
        self.head_weight = np.asarray(self.head_weight, dtype=np.float64)
        self.head_bias = np.asarray(self.head_bias, dtype=np.float64)
        if not self.convs:
            raise InputError("net needs at least one conv layer")
        if self.head_weight.shape[0] != self.convs[-1].c_out:
            raise InputError("head input dim must match last conv output dim")
        if self.head_bias.shape != (self.head_weight.shape[1],):
            raise InputError("head bias length must equal num_classes")

    @property
    def num_classes(self) -> int:
        return self.head_weight.shape[1]

    @property
    def in_channels(self) -> int:
        return self.convs[0].c_in

    def parameters(self) -> list[np.ndarray]:
        params = []
        for c in self.convs:
            params.extend([c.weight, c.bias])
        params.extend([self.head_weight, self.head_bias])
        return params


def create_net(
    in_channels: int,
    hidden: tuple[int, ...],
    num_classes: int,
    seed: int = 0,
) -> SparseSegNet:
    """Seeded He-initialized net with one conv per hidden width."""
    if num_classes < 2:
        raise InputError("need at least two classes")
    rng = np.random.default_rng(seed)
    convs = []
    c = in_channels
    for h in hidden:
        convs.append(SparseConvLayer.create(c, h, rng))
        c = h
    head_w = rng.normal(0.0, math.sqrt(1.0 / c), (c, num_classes))
    return SparseSegNet(convs=convs, head_weight=head_w, head_bias=np.zeros(num_classes))


def _forward_cached(net: SparseSegNet, x: SparseTensor):
    kernel_map = build_kernel_map(x.coords)
    acts = [x.features]  # input of conv i lives at acts[i]
    h = x.features
    for i, conv in enumerate(net.convs):
        h = sparse_conv_features(h, conv, kernel_map)
        if i < len(net.convs) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    logits = h @ net.head_weight + net.head_bias
    return logits, acts, kernel_map


def forward(net: SparseSegNet, x: SparseTensor) -> np.ndarray:
    """Per-voxel class logits, shape (V, num_classes)."""
    if x.num_channels != net.in_channels:
        raise InputError(
            f"net expects {net.in_channels} input channels, got {x.num_channels}"
        )
    return _forward_cached(net, x)[0]


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax at the true class, plus d(loss)/d(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    v, c = logits.shape
    if labels.shape != (v,):
        raise InputError(f"labels must be ({v},), got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise InputError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    logp = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(v), labels].mean())
    grad = softmax.copy()
    grad[np.arange(v), labels] -= 1.0
    return loss, grad / v


def loss_and_gradients(
    net: SparseSegNet, x: SparseTensor, labels: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Cross-entropy loss and gradients in parameters() order."""
    logits, acts, kernel_map = _forward_cached(net, x)
    loss, d_logits = cross_entropy(logits, labels)

    d_head_w = acts[-1].T @ d_logits
    d_head_b = d_logits.sum(axis=0)
    d_h = d_logits @ net.head_weight.T

    conv_grads: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(len(net.convs) - 1, -1, -1):
        if i < len(net.convs) - 1:
            d_h = d_h * (acts[i + 1] > 0)  # ReLU mask on this conv's output
        d_h, d_w, d_b = _conv_backward(acts[i], d_h, net.convs[i], kernel_map)
        conv_grads.append((d_w, d_b))
    conv_grads.reverse()

    grads: list[np.ndarray] = []
    for d_w, d_b in conv_grads:
        grads.extend([d_w, d_b])
    grads.extend([d_head_w, d_head_b])
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 500
    schedule: str = "cosine"
    min_lr: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise InputError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.schedule not in ("constant", "cosine"):
            raise InputError(f"schedule must be 'constant' or 'cosine', got {self.schedule!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a zero-based epoch index."""
        if self.schedule == "constant":
            return self.learning_rate
        t = epoch / max(self.epochs - 1, 1)
        return self.min_lr + 0.5 * (self.learning_rate - self.min_lr) * (
            1.0 + math.cos(math.pi * t)
        )


class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train(
    net: SparseSegNet,
    dataset: list[SparseTensor],
    cfg: TrainConfig,
) -> tuple[SparseSegNet, list[tuple[int, float, float]]]:
    """Train in place over labeled sparse tensors; returns (net, history).

    History rows are (epoch, mean loss, learning rate).  Items are visited
    in dataset order with one Adam step each; everything is deterministic
    for a fixed config.
    """
    if not dataset:
        raise InputError("training needs at least one sparse tensor")
    for x in dataset:
        if x.labels is None:
            raise InputError("every training tensor needs voxel labels")
    params = net.parameters()
    opt = Adam(params, cfg)
    history: list[tuple[int, float, float]] = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        losses = []
        for x in dataset:
            loss, grads = loss_and_gradients(net, x, x.labels)
            opt.step(params, grads, lr)
            losses.append(loss)
        history.append((epoch, float(np.mean(losses)), lr))
    return net, history


def devoxelize(logits: np.ndarray, point_map: np.ndarray) -> np.ndarray:
    """Per-point class predictions: each point inherits its voxel's argmax."""
    logits = np.asarray(logits)
    point_map = np.asarray(point_map, dtype=np.int64)
    if point_map.min(initial=0) < 0 or (
        len(point_map) and point_map.max() >= len(logits)
    ):
        raise InputError("point_map refers to voxels outside the logits")
    # np.argmax takes the first maximum: ties resolve to the smallest class
    return logits.argmax(axis=1)[point_map]


# ---------------------------------------------------------------------------
# Checkpoints and loss history
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"DMFN"
_CKPT_VERSION = 1


def save_checkpoint(net: SparseSegNet, path: str | Path) -> None:
    """Serialize the net with float32 weights (see module docstring)."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(net.convs)))
        for conv in net.convs:
            fh.write(struct.pack("<II", conv.c_in, conv.c_out))
            fh.write(np.ascontiguousarray(conv.weight, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(conv.bias, dtype="<f4").tobytes())
        fh.write(struct.pack("<II", net.head_weight.shape[0], net.num_classes))
        fh.write(np.ascontiguousarray(net.head_weight, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(net.head_bias, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> SparseSegNet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    version, n_convs = struct.unpack("<II", raw[4:12])
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 12

    def take(count: int) -> np.ndarray:
        nonlocal offset
        end = offset + 4 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated checkpoint")
        vals = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset = end
        return vals.astype(np.float64)

    convs = []
    for _ in range(n_convs):
        if offset + 8 > len(raw):
            raise FormatError(f"{path}: truncated checkpoint")
        c_in, c_out = struct.unpack_from("<II", raw, offset)
        offset += 8
        w = take(len(OFFSETS) * c_in * c_out).reshape(len(OFFSETS), c_in, c_out)
        b = take(c_out)
        convs.append(SparseConvLayer(weight=w, bias=b))
    if offset + 8 > len(raw):
        raise FormatError(f"{path}: truncated checkpoint")
    h_in, n_classes = struct.unpack_from("<II", raw, offset)
    offset += 8
    head_w = take(h_in * n_classes).reshape(h_in, n_classes)
    head_b = take(n_classes)
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return SparseSegNet(convs=convs, head_weight=head_w, head_bias=head_b)


def save_loss_history(history: list[tuple[int, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "lr"])
        for epoch, loss, lr in history:
            writer.writerow([epoch, repr(float(loss)), repr(float(lr))])


def load_loss_history(path: str | Path) -> list[tuple[int, float, float]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "loss", "lr"]:
            raise FormatError(f"{path}: unexpected loss-history header {header}")
        for row in reader:
            out.append((int(row[0]), float(row[1]), float(row[2])))
    return out

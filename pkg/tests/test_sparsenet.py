"""Voxelization, submanifold convolution, gradients, training, checkpoints."""

import numpy as np
import pytest

from mvfusion import (
    FormatError,
    InputError,
    SparseConvLayer,
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
from mvfusion.sparsenet import (
    CENTER_OFFSET,
    OFFSETS,
    load_loss_history,
    loss_and_gradients,
    save_loss_history,
)

from oracles import dense_conv3d_oracle, fd_gradient, max_rel_err


class TestVoxelize:
    def test_same_cell_features_average(self):
        pts = np.array([[0.01, 0.01, 0.01], [0.04, 0.04, 0.04]])
        feats = np.array([[0.0], [2.0]])
        t = voxelize(pts, feats, VoxelGridSpec(voxel_size=0.05))
        assert t.num_voxels == 1
        np.testing.assert_array_equal(t.features, [[1.0]])

    def test_floor_arithmetic_splits_cells(self):
        pts = np.array([[0.00, 0.01, 0.01], [0.06, 0.01, 0.01]])
        t = voxelize(pts, np.zeros((2, 1)), VoxelGridSpec(voxel_size=0.05))
        assert t.num_voxels == 2
        np.testing.assert_array_equal(t.coords[:, 0], [0, 1])

    def test_majority_vote_and_tie_rule(self):
        spec = VoxelGridSpec(voxel_size=1.0)
        pts = np.zeros((3, 3)) + 0.25
        t = voxelize(pts, np.zeros((3, 1)), spec, labels=np.array([1, 1, 2]))
        assert t.labels[0] == 1
        t2 = voxelize(pts[:2], np.zeros((2, 1)), spec, labels=np.array([1, 2]))
        assert t2.labels[0] == 1  # tie -> smallest class id

    def test_point_map_conservation(self, rng):
        pts = rng.uniform(-1, 1, (500, 3))
        t = voxelize(pts, rng.normal(size=(500, 4)), VoxelGridSpec(voxel_size=0.2))
        assert t.point_map.shape == (500,)
        assert t.counts.sum() == 500
        np.testing.assert_array_equal(np.bincount(t.point_map), t.counts)
        # every point's coordinates quantize to its assigned voxel
        expect = np.floor(pts / 0.2).astype(np.int64)
        np.testing.assert_array_equal(t.coords[t.point_map], expect)

    def test_coords_unique_and_sorted(self, rng):
        pts = rng.uniform(-1, 1, (200, 3))
        t = voxelize(pts, np.zeros((200, 1)), VoxelGridSpec(voxel_size=0.3))
        assert len(np.unique(t.coords, axis=0)) == t.num_voxels
        order = np.lexsort((t.coords[:, 2], t.coords[:, 1], t.coords[:, 0]))
        np.testing.assert_array_equal(order, np.arange(t.num_voxels))

    def test_nonfinite_rejected(self):
        with pytest.raises(InputError):
            voxelize(np.array([[np.nan, 0, 0]]), np.zeros((1, 1)), VoxelGridSpec())


def random_sparse_tensor(rng, n_vox=40, c=3, span=6):
    coords = rng.integers(-span, span, (n_vox * 2, 3))
    coords = np.unique(coords, axis=0)[:n_vox]
    feats = rng.normal(size=(len(coords), c))
    return SparseTensor(coords=coords, features=feats, spec=VoxelGridSpec())


class TestSparseConv:
    def test_identity_center_weight(self, rng):
        t = random_sparse_tensor(rng, c=4)
        w = np.zeros((27, 4, 4))
        w[CENTER_OFFSET] = np.eye(4)
        out = sparse_conv(t, SparseConvLayer(weight=w, bias=np.zeros(4)))
        np.testing.assert_array_equal(out.features, t.features)

    def test_isolated_voxel_gets_bias(self):
        t = SparseTensor(coords=np.array([[0, 0, 0]]), features=np.array([[1.0, 2.0]]),
                         spec=VoxelGridSpec())
        w = np.zeros((27, 2, 3))
        w[0] = 1.0  # non-center weight, no neighbor there
        bias = np.array([0.5, -1.0, 2.0])
        out = sparse_conv(t, SparseConvLayer(weight=w, bias=bias))
        np.testing.assert_array_equal(out.features, bias[None, :])

    def test_matches_dense_oracle_full_grid(self, rng):
        n = 5
        coords = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1).reshape(-1, 3)
        feats = rng.normal(size=(len(coords), 2))
        t = SparseTensor(coords=coords, features=feats, spec=VoxelGridSpec())
        layer = SparseConvLayer(weight=rng.normal(size=(27, 2, 3)),
                                bias=rng.normal(size=3))
        out = sparse_conv(t, layer)

        grid = np.zeros((n, n, n, 2))
        grid[coords[:, 0], coords[:, 1], coords[:, 2]] = feats
        occupied = np.zeros((n, n, n), dtype=bool)
        occupied[coords[:, 0], coords[:, 1], coords[:, 2]] = True
        ref = dense_conv3d_oracle(grid, occupied, layer.weight, layer.bias)
        assert np.abs(out.features - ref).max() <= 1e-5

    def test_matches_dense_oracle_random_occupancy(self, rng):
        n = 8
        for _ in range(10):
            occupied = rng.random((n, n, n)) < 0.4
            if not occupied.any():
                continue
            coords = np.argwhere(occupied)
            feats = rng.normal(size=(len(coords), 3))
            t = SparseTensor(coords=coords, features=feats, spec=VoxelGridSpec())
            layer = SparseConvLayer(weight=rng.normal(size=(27, 3, 2)),
                                    bias=rng.normal(size=2))
            out = sparse_conv(t, layer)
            grid = np.zeros((n, n, n, 3))
            grid[coords[:, 0], coords[:, 1], coords[:, 2]] = feats
            ref = dense_conv3d_oracle(grid, occupied, layer.weight, layer.bias)
            assert np.abs(out.features - ref).max() <= 1e-5

    def test_translation_equivariance_bit_exact(self, rng):
        t = random_sparse_tensor(rng, n_vox=30, c=2)
        layer = SparseConvLayer(weight=rng.normal(size=(27, 2, 2)),
                                bias=rng.normal(size=2))
        out1 = sparse_conv(t, layer)
        shifted = SparseTensor(coords=t.coords + np.array([17, -40, 3]),
                               features=t.features, spec=t.spec)
        out2 = sparse_conv(shifted, layer)
        np.testing.assert_array_equal(out1.features, out2.features)

    def test_channel_mismatch_rejected(self, rng):
        t = random_sparse_tensor(rng, c=3)
        layer = SparseConvLayer(weight=np.zeros((27, 4, 2)), bias=np.zeros(2))
        with pytest.raises(InputError):
            sparse_conv(t, layer)


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        logits = np.zeros((6, 4))
        loss, _ = cross_entropy(logits, np.array([0, 1, 2, 3, 0, 1]))
        assert loss == pytest.approx(np.log(4.0), abs=1e-12)

    def test_confident_correct_loss_vanishes(self):
        logits = np.zeros((3, 3))
        labels = np.array([0, 1, 2])
        logits[np.arange(3), labels] = 80.0
        loss, _ = cross_entropy(logits, labels)
        assert loss < 1e-12

    def test_softmax_rows_sum_to_one(self, rng):
        logits = rng.normal(size=(9, 5)) * 30
        loss, grad = cross_entropy(logits, rng.integers(0, 5, 9))
        assert loss >= 0.0
        # grad = (softmax - onehot)/V, so rows sum to zero
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.normal(size=(5, 3))
        labels = rng.integers(0, 3, 5)
        _, grad = cross_entropy(logits, labels)
        fd = fd_gradient(lambda: cross_entropy(logits, labels)[0], logits)
        assert max_rel_err(grad, fd) <= 1e-4

    def test_out_of_range_labels_rejected(self):
        with pytest.raises(InputError):
            cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(InputError):
            cross_entropy(np.zeros((2, 3)), np.array([-1, 0]))


class TestNetGradients:
    def test_all_parameters_match_finite_differences(self, rng):
        t = random_sparse_tensor(rng, n_vox=10, c=3, span=2)
        labels = rng.integers(0, 3, t.num_voxels)
        t.labels = labels
        net = create_net(3, (4, 5), num_classes=3, seed=2)
        _, grads = loss_and_gradients(net, t, labels)
        params = net.parameters()
        assert len(grads) == len(params)
        for p, g in zip(params, grads):
            fd = fd_gradient(lambda: loss_and_gradients(net, t, labels)[0], p)
            assert max_rel_err(g, fd) <= 1e-3

    def test_forward_deterministic(self, rng):
        t = random_sparse_tensor(rng, n_vox=25, c=4)
        net = create_net(4, (6,), num_classes=3, seed=0)
        a = forward(net, t)
        b = forward(net, t)
        np.testing.assert_array_equal(a, b)

    def test_zero_weight_net_outputs_bias(self, rng):
        t = random_sparse_tensor(rng, n_vox=12, c=2)
        net = create_net(2, (3,), num_classes=4, seed=0)
        for conv in net.convs:
            conv.weight[:] = 0.0
            conv.bias[:] = 0.0
        net.head_weight[:] = 0.0
        net.head_bias[:] = np.array([0.1, 0.2, 0.3, 0.4])
        logits = forward(net, t)
        assert logits.shape == (12, 4)
        np.testing.assert_allclose(logits, np.tile(net.head_bias, (12, 1)), atol=1e-15)


class TestTraining:
    def test_default_lr_is_adam_paper_value(self):
        assert TrainConfig().learning_rate == 0.001

    def test_cosine_schedule_endpoints(self):
        cfg = TrainConfig(learning_rate=0.1, epochs=11, schedule="cosine", min_lr=0.01)
        assert cfg.lr_at(0) == pytest.approx(0.1)
        assert cfg.lr_at(10) == pytest.approx(0.01)
        assert cfg.lr_at(5) == pytest.approx(0.055)

    def test_separable_problem_loss_decreases(self, rng):
        # two blobs, labels determined by x coordinate: linearly separable
        pts = np.concatenate([
            rng.uniform(0.0, 0.4, (60, 3)),
            rng.uniform(0.6, 1.0, (60, 3)),
        ])
        labels = np.concatenate([np.zeros(60, np.int64), np.ones(60, np.int64)])
        feats = np.column_stack([pts, pts[:, :1] > 0.5])
        t = voxelize(pts, feats, VoxelGridSpec(voxel_size=0.1), labels=labels)
        net = create_net(4, (6,), num_classes=2, seed=3)
        cfg = TrainConfig(learning_rate=0.01, epochs=10, schedule="constant", seed=3)
        _, history = train(net, [t], cfg)
        losses = [h[1] for h in history]
        assert len(losses) == 10
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_training_deterministic(self, rng):
        t = random_sparse_tensor(rng, n_vox=20, c=3)
        t.labels = np.arange(20) % 2

        def run():
            net = create_net(3, (4,), num_classes=2, seed=5)
            net, history = train(net, [t], TrainConfig(epochs=5, schedule="constant"))
            return net.head_weight.copy(), history

        w1, h1 = run()
        w2, h2 = run()
        np.testing.assert_array_equal(w1, w2)
        assert h1 == h2

    def test_unlabeled_dataset_rejected(self, rng):
        t = random_sparse_tensor(rng)
        net = create_net(3, (4,), num_classes=2, seed=0)
        with pytest.raises(InputError):
            train(net, [t], TrainConfig(epochs=1))


class TestDevoxelize:
    def test_points_inherit_voxel_argmax(self):
        logits = np.array([[0.0, 1.0, 5.0], [3.0, 0.0, 0.0]])
        point_map = np.array([0, 0, 1, 0])
        np.testing.assert_array_equal(devoxelize(logits, point_map), [2, 2, 0, 2])

    def test_tie_goes_to_class_zero(self):
        logits = np.zeros((1, 4))
        np.testing.assert_array_equal(devoxelize(logits, np.zeros(3, np.int64)),
                                      [0, 0, 0])

    def test_round_trip_majority_labels(self, rng):
        pts = rng.uniform(0, 1, (100, 3))
        labels = rng.integers(0, 3, 100)
        t = voxelize(pts, np.zeros((100, 1)), VoxelGridSpec(voxel_size=0.25),
                     labels=labels)
        onehot = np.eye(3)[t.labels]
        preds = devoxelize(onehot, t.point_map)
        np.testing.assert_array_equal(preds, t.labels[t.point_map])

    def test_bad_point_map_rejected(self):
        with pytest.raises(InputError):
            devoxelize(np.zeros((2, 3)), np.array([0, 2]))


class TestCheckpoint:
    def test_round_trip_float32_exact(self, tmp_path, rng):
        net = create_net(5, (7, 6), num_classes=4, seed=8)
        path = tmp_path / "net.dmfn"
        save_checkpoint(net, path)
        again = load_checkpoint(path)
        assert len(again.convs) == 2
        for a, b in zip(net.convs, again.convs):
            np.testing.assert_array_equal(b.weight, a.weight.astype(np.float32))
            np.testing.assert_array_equal(b.bias, a.bias.astype(np.float32))
        np.testing.assert_array_equal(again.head_weight,
                                      net.head_weight.astype(np.float32))
        # a second save of the loaded net is byte-identical
        path2 = tmp_path / "net2.dmfn"
        save_checkpoint(again, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.dmfn"
        p.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(FormatError):
            load_checkpoint(p)

    def test_truncation_detected(self, tmp_path):
        net = create_net(2, (3,), num_classes=2, seed=0)
        p = tmp_path / "t.dmfn"
        save_checkpoint(net, p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(FormatError):
            load_checkpoint(p)


def test_loss_history_round_trip(tmp_path):
    history = [(0, 1.5, 0.001), (1, 0.75, 0.0009)]
    path = tmp_path / "loss.csv"
    save_loss_history(history, path)
    assert load_loss_history(path) == history


def test_offsets_center_index():
    np.testing.assert_array_equal(OFFSETS[CENTER_OFFSET], [0, 0, 0])
    assert len(OFFSETS) == 27

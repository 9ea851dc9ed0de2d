"""Numerics: model init, training, aggregation, dataset handling."""

import gzip
import struct

import numpy as np
import pytest

import oracles
from dmlflow import mlkit


REFERENCE_ARCH = (784, 64, 32, 10)


class TestCounts:
    def test_param_count_reference_arch(self):
        assert mlkit.count_params(REFERENCE_ARCH) == 52650
        assert mlkit.count_params(REFERENCE_ARCH) == oracles.brute_param_count(REFERENCE_ARCH)

    def test_forward_flops_reference_arch(self):
        assert mlkit.count_forward_flops(REFERENCE_ARCH) == 105088
        assert mlkit.count_forward_flops(REFERENCE_ARCH) == oracles.brute_forward_flops(REFERENCE_ARCH)

    @pytest.mark.parametrize("arch", [(2, 3), (5, 4, 3), (10, 10, 10, 10, 10)])
    def test_counts_match_brute_force(self, arch):
        assert mlkit.count_params(arch) == oracles.brute_param_count(arch)
        assert mlkit.count_forward_flops(arch) == oracles.brute_forward_flops(arch)


class TestInit:
    def test_deterministic(self):
        a = mlkit.mlp_init(REFERENCE_ARCH, seed=7)
        b = mlkit.mlp_init(REFERENCE_ARCH, seed=7)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        c = mlkit.mlp_init(REFERENCE_ARCH, seed=8)
        assert not np.array_equal(a.weights[0], c.weights[0])

    def test_shapes_and_dtype(self):
        p = mlkit.mlp_init((5, 4, 3), seed=0)
        assert [w.shape for w in p.weights] == [(5, 4), (4, 3)]
        assert [b.shape for b in p.biases] == [(4,), (3,)]
        assert all(w.dtype == np.float32 for w in p.weights)
        assert p.arch == (5, 4, 3)

    def test_weight_bounds_and_zero_biases(self):
        p = mlkit.mlp_init((100, 50, 10), seed=1)
        for w in p.weights:
            bound = np.sqrt(1.0 / w.shape[0])
            assert np.all(np.abs(w) <= bound)
            # a degenerate draw would cluster near zero
            assert np.abs(w).max() > 0.5 * bound
        for b in p.biases:
            assert np.all(b == 0.0)

    def test_tensor_round_trip(self):
        p = mlkit.mlp_init((6, 5, 4), seed=2)
        q = mlkit.ModelParams.from_tensors(p.to_tensors())
        assert q.arch == p.arch
        for a, b in zip(p.weights + p.biases, q.weights + q.biases):
            assert np.array_equal(a, b)

    def test_from_tensors_rejects_bad_lists(self):
        with pytest.raises(mlkit.ModelMismatchError):
            mlkit.ModelParams.from_tensors([])
        with pytest.raises(mlkit.ModelMismatchError):
            mlkit.ModelParams.from_tensors([np.zeros((2, 3))])
        with pytest.raises(mlkit.ModelMismatchError):
            mlkit.ModelParams.from_tensors([np.zeros((2, 3)), np.zeros(4)])


class TestForwardLoss:
    def test_forward_shape(self):
        p = mlkit.mlp_init((8, 6, 4), seed=0)
        x = np.random.default_rng(0).normal(size=(5, 8)).astype(np.float32)
        assert mlkit.forward(p, x).shape == (5, 4)

    def test_output_layer_is_linear(self):
        # a network with hugely negative output bias must produce
        # negative logits, which a terminal ReLU would clamp away
        p = mlkit.mlp_init((3, 2), seed=0)
        p.biases[0][:] = -100.0
        logits = mlkit.forward(p, np.ones((1, 3), dtype=np.float32))
        assert np.all(logits < 0)

    def test_cross_entropy_hand_case(self):
        logits = np.zeros((1, 2))
        loss, dlogits = mlkit.softmax_cross_entropy(logits, np.array([0]))
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)
        assert dlogits == pytest.approx(np.array([[-0.5, 0.5]]))

    def test_cross_entropy_shift_invariant(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(4, 5))
        labels = rng.integers(0, 5, size=4)
        base, _ = mlkit.softmax_cross_entropy(logits, labels)
        shifted, _ = mlkit.softmax_cross_entropy(logits + 1000.0, labels)
        assert shifted == pytest.approx(base, rel=1e-9)
        assert np.isfinite(shifted)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(7)
        arch = (5, 4, 3)
        params = mlkit.mlp_init(arch, seed=3, dtype=np.float64)
        x = rng.normal(0.5, 0.3, (8, 5))
        y = rng.integers(0, 3, 8)
        _, grads = mlkit.backward(params, x, y)

        def loss_fn():
            return mlkit.softmax_cross_entropy(mlkit.forward(params, x), y)[0]

        numeric = oracles.central_difference_grads(
            loss_fn, params.weights + params.biases, eps=1e-6)
        analytic = grads.weights + grads.biases
        for num, ana in zip(numeric, analytic):
            scale = np.abs(num).max() + 1e-12
            assert np.abs(num - ana).max() / scale < 1e-3


class TestTraining:
    def _data(self, n=128, seed=0):
        return mlkit.synthetic_dataset(n, classes=3, dim=6, seed=seed)

    def test_deterministic(self):
        data = self._data()
        h = mlkit.Hyperparams(lr=0.05, momentum=0.5, batch_size=16)
        p = mlkit.mlp_init((6, 5, 3), seed=0)
        a = mlkit.train_epochs(p, data, h, 3, np.random.default_rng(9))
        b = mlkit.train_epochs(p, data, h, 3, np.random.default_rng(9))
        for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
            assert np.array_equal(wa, wb)

    def test_input_params_not_mutated(self):
        data = self._data()
        h = mlkit.Hyperparams(lr=0.05)
        p = mlkit.mlp_init((6, 5, 3), seed=0)
        before = p.copy()
        mlkit.train_epochs(p, data, h, 1, np.random.default_rng(0))
        for a, b in zip(p.weights + p.biases, before.weights + before.biases):
            assert np.array_equal(a, b)

    def test_velocity_carries_within_call_resets_between(self):
        data = self._data()
        p = mlkit.mlp_init((6, 5, 3), seed=0)

        # without momentum, one 2-epoch call equals two chained 1-epoch
        # calls consuming the same rng stream
        h0 = mlkit.Hyperparams(lr=0.05, momentum=0.0, batch_size=16)
        whole = mlkit.train_epochs(p, data, h0, 2, np.random.default_rng(4))
        rng = np.random.default_rng(4)
        split = mlkit.train_epochs(p, data, h0, 1, rng)
        split = mlkit.train_epochs(split, data, h0, 1, rng)
        for a, b in zip(whole.weights, split.weights):
            assert np.array_equal(a, b)

        # with momentum, the chained version restarts from zero velocity
        # at the call boundary and must diverge
        h5 = mlkit.Hyperparams(lr=0.05, momentum=0.5, batch_size=16)
        whole = mlkit.train_epochs(p, data, h5, 2, np.random.default_rng(4))
        rng = np.random.default_rng(4)
        split = mlkit.train_epochs(p, data, h5, 1, rng)
        split = mlkit.train_epochs(split, data, h5, 1, rng)
        assert any(not np.array_equal(a, b)
                   for a, b in zip(whole.weights, split.weights))

    def test_loss_decreases_on_easy_data(self):
        data = self._data(n=256)
        h = mlkit.Hyperparams(lr=0.1, momentum=0.5, batch_size=32)
        p = mlkit.mlp_init((6, 16, 3), seed=0)
        loss0, _ = mlkit.softmax_cross_entropy(
            mlkit.forward(p, data.images), data.labels)
        p = mlkit.train_epochs(p, data, h, 10, np.random.default_rng(0))
        loss1, _ = mlkit.softmax_cross_entropy(
            mlkit.forward(p, data.images), data.labels)
        assert loss1 < 0.5 * loss0
        assert mlkit.evaluate(p, data) > 0.8

    def test_divergence_raises(self):
        data = self._data()
        h = mlkit.Hyperparams(lr=1e30, momentum=0.0, batch_size=16)
        p = mlkit.mlp_init((6, 5, 3), seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(mlkit.TrainingDivergedError):
                mlkit.train_epochs(p, data, h, 5, np.random.default_rng(0))

    def test_hyperparams_validation(self):
        with pytest.raises(ValueError):
            mlkit.Hyperparams(lr=-0.1)
        with pytest.raises(ValueError):
            mlkit.Hyperparams(lr=np.inf)
        with pytest.raises(ValueError):
            mlkit.Hyperparams(momentum=1.0)
        with pytest.raises(ValueError):
            mlkit.Hyperparams(batch_size=0)


class TestEvaluate:
    def test_known_predictions(self):
        # identity-ish single layer: logits = x @ W, W routes feature i
        # to class i
        p = mlkit.ModelParams(
            [np.eye(2, dtype=np.float32)], [np.zeros(2, dtype=np.float32)])
        images = np.array([[0.9, 0.1], [0.2, 0.8]], dtype=np.float32)
        assert mlkit.evaluate(p, mlkit.Dataset(images, np.array([0, 1]))) == 1.0
        assert mlkit.evaluate(p, mlkit.Dataset(images, np.array([1, 0]))) == 0.0

    def test_tie_breaks_to_lowest_index(self):
        p = mlkit.ModelParams(
            [np.ones((2, 3), dtype=np.float32)], [np.zeros(3, dtype=np.float32)])
        images = np.array([[0.5, 0.5]], dtype=np.float32)
        assert mlkit.evaluate(p, mlkit.Dataset(images, np.array([0]))) == 1.0
        assert mlkit.evaluate(p, mlkit.Dataset(images, np.array([2]))) == 0.0


class TestFedavg:
    def test_matches_brute_mean(self):
        rng = np.random.default_rng(11)
        models = []
        for _ in range(5):
            p = mlkit.mlp_init((7, 5, 3), seed=int(rng.integers(1 << 30)))
            for w in p.weights:
                w += rng.normal(size=w.shape).astype(np.float32)
            models.append(p)
        avg = mlkit.fedavg(models)
        flat = [m.to_tensors() for m in models]
        expect = oracles.brute_mean(flat)
        got = avg.to_tensors()
        assert len(got) == len(expect)
        for g, e in zip(got, expect):
            assert g.dtype == np.float32
            assert np.abs(g.astype(np.float64) - e).max() <= 1e-7

    def test_single_model_identity(self):
        p = mlkit.mlp_init((4, 3), seed=0)
        avg = mlkit.fedavg([p])
        for a, b in zip(avg.to_tensors(), p.to_tensors()):
            assert np.array_equal(a, b)

    def test_order_invariant(self):
        ms = [mlkit.mlp_init((4, 3), seed=s) for s in range(3)]
        a = mlkit.fedavg(ms).to_tensors()
        b = mlkit.fedavg(ms[::-1]).to_tensors()
        for x, y in zip(a, b):
            assert np.allclose(x, y, atol=1e-7)

    def test_arch_mismatch_raises(self):
        a = mlkit.mlp_init((4, 3), seed=0)
        b = mlkit.mlp_init((4, 2), seed=0)
        with pytest.raises(mlkit.ModelMismatchError):
            mlkit.fedavg([a, b])


class TestDatasets:
    def test_dataset_count_mismatch(self):
        with pytest.raises(ValueError):
            mlkit.Dataset(np.zeros((3, 2)), np.zeros(4, dtype=np.int64))

    def test_synthetic_properties(self):
        d = mlkit.synthetic_dataset(100, classes=4, dim=9, seed=5)
        assert d.images.shape == (100, 9)
        assert d.images.dtype == np.float32
        assert d.labels.dtype == np.int64
        assert len(d) == 100
        assert d.images.min() >= 0.0 and d.images.max() <= 1.0
        assert set(np.unique(d.labels)) <= set(range(4))
        e = mlkit.synthetic_dataset(100, classes=4, dim=9, seed=5)
        assert np.array_equal(d.images, e.images)
        f = mlkit.synthetic_dataset(100, classes=4, dim=9, seed=6)
        assert not np.array_equal(d.images, f.images)

    def test_partition_disjoint_and_covering(self):
        data = mlkit.Dataset(
            np.arange(103, dtype=np.float32).reshape(-1, 1),
            np.zeros(103, dtype=np.int64))
        shards = mlkit.partition(data, 10, seed=0)
        assert [len(s) for s in shards] == [11, 11, 11] + [10] * 7
        seen = np.concatenate([s.images[:, 0] for s in shards])
        assert sorted(seen.tolist()) == list(range(103))

    def test_partition_deterministic(self):
        data = mlkit.synthetic_dataset(64, dim=4)
        a = mlkit.partition(data, 4, seed=3)
        b = mlkit.partition(data, 4, seed=3)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.images, sb.images)
        c = mlkit.partition(data, 4, seed=4)
        assert any(not np.array_equal(sa.images, sc.images)
                   for sa, sc in zip(a, c))

    def test_partition_validation(self):
        data = mlkit.synthetic_dataset(8, dim=2)
        with pytest.raises(ValueError):
            mlkit.partition(data, 0, seed=0)
        with pytest.raises(ValueError):
            mlkit.partition(data, 9, seed=0)


def _write_idx_pair(tmp_path, count=7, rows=3, cols=2, gz=False):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(count, rows, cols)).astype(np.uint8)
    labels = rng.integers(0, 10, size=count).astype(np.uint8)
    img_bytes = struct.pack(">IIII", 0x00000803, count, rows, cols) + pixels.tobytes()
    lab_bytes = struct.pack(">II", 0x00000801, count) + labels.tobytes()
    if gz:
        img_path = tmp_path / "images.gz"
        lab_path = tmp_path / "labels.gz"
        img_path.write_bytes(gzip.compress(img_bytes))
        lab_path.write_bytes(gzip.compress(lab_bytes))
    else:
        img_path = tmp_path / "images"
        lab_path = tmp_path / "labels"
        img_path.write_bytes(img_bytes)
        lab_path.write_bytes(lab_bytes)
    return img_path, lab_path, pixels, labels


class TestIdx:
    @pytest.mark.parametrize("gz", [False, True])
    def test_load_round_trip(self, tmp_path, gz):
        img, lab, pixels, labels = _write_idx_pair(tmp_path, gz=gz)
        data = mlkit.load_idx(img, lab)
        assert data.images.shape == (7, 6)
        assert data.images.dtype == np.float32
        expect = pixels.reshape(7, 6).astype(np.float32) / 255.0
        assert np.array_equal(data.images, expect)
        assert np.array_equal(data.labels, labels.astype(np.int64))

    def test_bad_magic(self, tmp_path):
        img, lab, _, _ = _write_idx_pair(tmp_path)
        broken = tmp_path / "broken"
        broken.write_bytes(b"\x00\x00\x08\x04" + img.read_bytes()[4:])
        with pytest.raises(mlkit.IdxFormatError):
            mlkit.load_idx(broken, lab)

    def test_truncated_payload(self, tmp_path):
        img, lab, _, _ = _write_idx_pair(tmp_path)
        cut = tmp_path / "cut"
        cut.write_bytes(img.read_bytes()[:-5])
        with pytest.raises(mlkit.IdxFormatError):
            mlkit.load_idx(cut, lab)

    def test_count_mismatch(self, tmp_path):
        img, _, _, _ = _write_idx_pair(tmp_path)
        other = tmp_path / "other_labels"
        other.write_bytes(struct.pack(">II", 0x00000801, 3) + b"\x00\x01\x02")
        with pytest.raises(mlkit.IdxFormatError):
            mlkit.load_idx(img, other)

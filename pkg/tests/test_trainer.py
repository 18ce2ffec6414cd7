import threading

import numpy as np
import pytest

from remap.arch import Activation, Conv2D, Dense, Dropout, MaxPool, count_parameters
from remap.data import halves_dataset
from remap.trainer import (Network, TrainerError, TrainingConfig, build_network,
                           gradient_check, softmax_cross_entropy, train)

from .conftest import arch_of


def small_batch(shape=(4, 4, 1), n=8, k=10, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, *shape)), rng.integers(0, k, size=n)


class TestBuildNetwork:
    def test_head_only_tensors(self):
        arch = arch_of([], input_shape=(4, 4, 1))
        net = build_network(arch, seed=0)
        tensors = list(net.parameters())
        assert [(v.shape) for _, _, v in tensors] == [(16, 10), (10,)]
        assert net.parameter_count() == 170

    def test_same_seed_bit_identical(self, conv_arch):
        a = build_network(conv_arch, seed=11)
        b = build_network(conv_arch, seed=11)
        for (_, _, va), (_, _, vb) in zip(a.parameters(), b.parameters()):
            assert np.array_equal(va, vb)

    def test_different_seed_differs(self, conv_arch):
        a = build_network(conv_arch, seed=11)
        b = build_network(conv_arch, seed=12)
        assert any(not np.array_equal(va, vb)
                   for (_, _, va), (_, _, vb) in zip(a.parameters(), b.parameters()))

    def test_element_counts_match_count_parameters(self, corpus):
        for arch in corpus:
            net = build_network(arch, seed=1)
            assert net.parameter_count() == count_parameters(arch)

    def test_he_uniform_bounds_and_zero_biases(self):
        arch = arch_of([Dense(64)], input_shape=(8, 8, 1))
        net = build_network(arch, seed=5)
        dense = net.layers[0]
        bound = np.sqrt(6.0 / 64)  # fan_in = 8*8*1 = 64
        assert np.abs(dense.w).max() <= bound
        assert np.all(dense.b == 0)

    def test_invalid_arch_rejected(self):
        with pytest.raises(TrainerError):
            build_network(arch_of([Dense(16), MaxPool(2)]), seed=0)


class TestForward:
    def test_softmax_outputs_sum_to_one(self, corpus):
        x, _ = small_batch(shape=(14, 14, 1), n=16)
        for arch in corpus[:8]:
            net = build_network(arch, seed=3)
            logits = net.forward(x)
            z = logits - logits.max(axis=1, keepdims=True)
            probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
            assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_cross_entropy_nonnegative(self):
        x, y = small_batch(n=32)
        net = build_network(arch_of([Dense(8)], input_shape=(4, 4, 1)), seed=0)
        loss, _ = softmax_cross_entropy(net.forward(x), y)
        assert loss >= 0

    def test_dropout_identity_at_eval(self):
        x, _ = small_batch(shape=(6, 6, 1), n=10)
        for rate in (0.1, 0.5, 0.9):
            arch = arch_of([Dense(32), Dropout(rate)], input_shape=(6, 6, 1))
            net = build_network(arch, seed=2)
            first = net.forward(x, train=False)
            second = net.forward(x, train=False)
            assert np.array_equal(first, second)
            bare = build_network(arch_of([Dense(32)], input_shape=(6, 6, 1)), seed=2)
            assert np.array_equal(first, bare.forward(x, train=False))

    def test_dropout_active_in_training(self):
        x, _ = small_batch(shape=(6, 6, 1), n=10)
        arch = arch_of([Dense(32), Dropout(0.5)], input_shape=(6, 6, 1))
        net = build_network(arch, seed=2)
        out = net.forward(x, train=True, drop_rng=np.random.default_rng(0))
        assert not np.array_equal(out, net.forward(x, train=False))

    def test_maxpool_values(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1)
        net = build_network(arch_of([MaxPool(2)], input_shape=(4, 4, 1), num_classes=2),
                            seed=0)
        out = net.layers[0].forward(x, False, None)
        assert out[0, :, :, 0].tolist() == [[5, 7], [13, 15]]


class TestGradients:
    def test_head_only_gradcheck(self):
        arch = arch_of([], input_shape=(4, 4, 1))
        err = gradient_check(arch, small_batch(), seed=0)
        assert err < 1e-5

    def test_conv_relu_pool_dense_gradcheck(self):
        arch = arch_of([Conv2D(4, 3, 1), Activation("relu"), MaxPool(2), Dense(8)],
                       input_shape=(8, 8, 1))
        err = gradient_check(arch, small_batch(shape=(8, 8, 1)), seed=1)
        assert err < 1e-4

    def test_tanh_sigmoid_dropout_gradcheck(self):
        arch = arch_of([Dense(12), Activation("tanh"), Dropout(0.25),
                        Dense(6), Activation("sigmoid")], input_shape=(4, 4, 1))
        err = gradient_check(arch, small_batch(), seed=2)
        assert err < 1e-4

    def test_strided_conv_gradcheck(self):
        arch = arch_of([Conv2D(3, 3, 2), Activation("relu"), Dense(6)],
                       input_shape=(9, 9, 1))
        err = gradient_check(arch, small_batch(shape=(9, 9, 1)), seed=3)
        assert err < 1e-4

    def test_zero_input_zero_weights_bias_gradient_closed_form(self):
        """At the origin the head-bias gradient is softmax(0) - mean one-hot."""
        arch = arch_of([], input_shape=(4, 4, 1), num_classes=4)
        net = build_network(arch, seed=0, dtype=np.float64)
        head = net.layers[-1]
        head.w[:] = 0.0
        n, k = 8, 4
        x = np.zeros((n, 4, 4, 1))
        y = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        logits = net.forward(x, train=True)
        _, dlogits = softmax_cross_entropy(logits, y)
        for layer in reversed(net.layers):
            dlogits = layer.backward(dlogits)
        onehot_mean = np.bincount(y, minlength=k) / n
        expected = np.full(k, 1.0 / k) - onehot_mean
        assert np.allclose(head.grads["b"], expected, atol=1e-12)

    def test_single_step_decreases_loss(self):
        """One SGD step on one example strictly decreases that example's loss
        for lr <= 1e-3, over 100 random cases."""
        rng = np.random.default_rng(42)
        arch = arch_of([Dense(16), Activation("tanh")], input_shape=(4, 4, 1), num_classes=5)
        for case in range(100):
            net = build_network(arch, seed=case, dtype=np.float64)
            x = rng.random((1, 4, 4, 1))
            y = rng.integers(0, 5, size=1)
            loss0 = net.loss_and_backward(x, y, None)
            for i, name, value in net.parameters():
                value -= 1e-3 * net.layers[i].grads[name]
            loss1, _ = softmax_cross_entropy(net.forward(x), y)
            assert loss1 < loss0


class TestTrain:
    def test_linearly_separable_task_reaches_perfect_accuracy(self):
        dataset = halves_dataset(n_train=200, n_val=80, seed=3)
        arch = arch_of([Dense(8), Activation("relu")], input_shape=(8, 8, 1),
                       num_classes=2)
        record = train(arch, dataset, TrainingConfig(epochs=5, seed=0))
        assert record.val_accuracy[-1] == 1.0
        assert record.status == "complete"
        assert record.epochs_run == 5

    def test_record_invariants(self, halves):
        arch = arch_of([Dense(8)], input_shape=(8, 8, 1), num_classes=2)
        record = train(arch, halves, TrainingConfig(epochs=3, seed=1))
        assert len(record.train_loss) == len(record.val_accuracy) == 3
        counts = np.bincount(halves.val_labels, minlength=2)
        assert record.confusion.sum(axis=1).tolist() == counts.tolist()
        assert record.final_val_accuracy == record.val_accuracy[-1]
        assert record.param_count == count_parameters(arch)
        assert len(record.predictions) == len(halves.val_labels)

    def test_determinism(self, halves):
        arch = arch_of([Conv2D(4, 3, 1), Activation("relu"), Dense(8)],
                       input_shape=(8, 8, 1), num_classes=2)
        config = TrainingConfig(epochs=2, seed=9)
        a = train(arch, halves, config)
        b = train(arch, halves, config)
        assert a.train_loss == b.train_loss
        assert a.val_accuracy == b.val_accuracy
        assert np.array_equal(a.predictions, b.predictions)

    def test_progress_sink_called_per_epoch(self, halves):
        arch = arch_of([Dense(4)], input_shape=(8, 8, 1), num_classes=2)
        events = []
        train(arch, halves, TrainingConfig(epochs=4, seed=0),
              progress_sink=lambda e, l, a: events.append((e, l, a)))
        assert [e for e, _, _ in events] == [1, 2, 3, 4]

    def test_cancel_before_first_epoch(self, halves):
        arch = arch_of([Dense(4)], input_shape=(8, 8, 1), num_classes=2)
        flag = threading.Event()
        flag.set()
        record = train(arch, halves, TrainingConfig(epochs=4, seed=0), cancel=flag)
        assert record.status == "cancelled"
        assert record.train_loss == [] and record.epochs_run == 0
        counts = np.bincount(halves.val_labels, minlength=2)
        assert record.confusion.sum(axis=1).tolist() == counts.tolist()

    def test_cancel_at_epoch_boundary(self, halves):
        arch = arch_of([Dense(4)], input_shape=(8, 8, 1), num_classes=2)
        flag = threading.Event()

        def sink(epoch, loss, acc):
            if epoch == 2:
                flag.set()

        record = train(arch, halves, TrainingConfig(epochs=10, seed=0),
                       progress_sink=sink, cancel=flag)
        assert record.status == "cancelled"
        assert record.epochs_run == 2
        assert len(record.train_loss) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_marks_failed(self, halves):
        arch = arch_of([Dense(32), Dense(32)], input_shape=(8, 8, 1), num_classes=2)
        record = train(arch, halves, TrainingConfig(epochs=5, seed=0, learning_rate=1e9))
        assert record.status == "failed"
        assert all(np.isfinite(v) for v in record.train_loss)

    def test_config_validation(self):
        with pytest.raises(TrainerError):
            TrainingConfig(epochs=0)
        with pytest.raises(TrainerError):
            TrainingConfig(learning_rate=0)
        with pytest.raises(TrainerError):
            TrainingConfig(mode="dream")

    def test_record_json_round_trip(self, halves):
        from remap.trainer import TrainingRecord
        arch = arch_of([Dense(4)], input_shape=(8, 8, 1), num_classes=2)
        record = train(arch, halves, TrainingConfig(epochs=2, seed=0))
        again = TrainingRecord.from_dict(record.to_dict())
        assert again.to_dict() == record.to_dict()

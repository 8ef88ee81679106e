import json
from pathlib import Path

import numpy as np
import pytest

from qosprov.errors import DimensionMismatch, FormatError, NonFiniteLoss
from qosprov.nn import (CHECKPOINT_VERSION, MlpNetwork, TrainingConfig, clone_into_target,
                        load_checkpoint, save_checkpoint)

from conftest import finite_difference_grads, relative_error

DATA = Path(__file__).parent / "data"


def random_batch(rng, net, n):
    n_in, n_out = net.layer_sizes[0], net.layer_sizes[-1]
    return rng.normal(size=(n, n_in)), rng.normal(size=n) * 3, rng.integers(0, n_out, size=n)


def test_zero_network_outputs_zero(rng):
    net = MlpNetwork.zeros([4, 150, 5])
    np.testing.assert_array_equal(net.forward(rng.normal(size=4)), np.zeros(5))


def test_forward_hand_computed_2_2_3():
    net = MlpNetwork([[[1.0, -1.0], [0.5, 2.0]], [[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]]],
                     [[0.0, -1.0], [0.5, 0.0, 0.0]])
    np.testing.assert_allclose(net.forward([1.0, 2.0]), [6.5, 2.0, -2.0])


def test_forward_batch_matches_single_rows(rng):
    net = MlpNetwork.create([6, 20, 9], rng)
    x = rng.normal(size=(5, 6))
    batch = net.forward(x)
    for row, out in zip(x, batch):
        np.testing.assert_allclose(net.forward(row), out)


def test_forward_dimension_mismatch(rng):
    net = MlpNetwork.create([4, 8, 5], rng)
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros(3))


def test_constructor_rejects_inconsistent_shapes():
    with pytest.raises(DimensionMismatch):
        MlpNetwork([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])


def test_glorot_init_bounds(rng):
    net = MlpNetwork.create([7, 150, 11], rng)
    assert np.abs(net.weights[0]).max() <= np.sqrt(6 / 157)
    assert np.abs(net.weights[1]).max() <= np.sqrt(6 / 161)
    assert all(np.all(b == 0) for b in net.biases)


def test_identical_seed_identical_init():
    a = MlpNetwork.create([7, 150, 11], np.random.default_rng(5))
    b = MlpNetwork.create([7, 150, 11], np.random.default_rng(5))
    assert a.same_parameters(b)


def test_sgd_step_hand_derivative_1_1_1():
    net = MlpNetwork([[[0.5]], [[2.0]]], [[0.0], [0.0]])
    loss = net.train_batch([[1.0]], [3.0], [0], TrainingConfig(learning_rate=0.1, batch_size=1))
    assert loss == pytest.approx(4.0)
    assert net.weights[1][0, 0] == pytest.approx(2.2)
    assert net.biases[1][0] == pytest.approx(0.4)
    assert net.weights[0][0, 0] == pytest.approx(1.3)
    assert net.biases[0][0] == pytest.approx(0.8)


def test_target_equal_to_prediction_is_fixed_point(rng):
    net = MlpNetwork.create([4, 10, 5], rng)
    x = rng.normal(size=(3, 4))
    actions = np.array([0, 4, 2])
    targets = net.forward(x)[np.arange(3), actions]
    before = net.clone()
    loss = net.train_batch(x, targets, actions, TrainingConfig(0.5, 3))
    assert loss == 0.0
    assert net.same_parameters(before)


def test_only_selected_action_receives_gradient(rng):
    net = MlpNetwork.create([3, 6, 4], rng)
    _, grads = net.gradients(rng.normal(size=(1, 3)), [1.0], [2])
    dW_out, db_out = grads[2], grads[3]
    assert np.count_nonzero(db_out) == 1 and db_out[2] != 0
    assert np.all(dW_out[:, [0, 1, 3]] == 0)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        net = MlpNetwork.create([4, 12, 5], rng, activation)
        for b in net.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        for _ in range(10):
            x, y, a = random_batch(rng, net, 1)
            _, analytic = net.gradients(x, y, a)
            numeric = finite_difference_grads(net, x, y, a, eps=1e-5)
            worst = max(worst, max(relative_error(g, n) for g, n in zip(analytic, numeric)))
    assert worst < 1e-4


def test_single_sample_training_converges():
    rng = np.random.default_rng(3)
    net = MlpNetwork.create([4, 16, 5], rng)
    x, y, a = np.array([[1.0, 0.0, 0.0, 0.2]]), np.array([4.0]), np.array([3])
    cfg = TrainingConfig(learning_rate=0.01, batch_size=1)
    losses = [net.train_batch(x, y, a, cfg) for _ in range(500)]
    losses.append(net.loss(x, y, a))
    # once the loss reaches the float64 floor it can only stay flat
    decreasing = sum(b < a_ or b < 1e-20 for a_, b in zip(losses, losses[1:]))
    assert decreasing >= 0.95 * 500
    assert losses[-1] < 0.01 * losses[0]


def test_training_is_deterministic():
    def trajectory():
        rng = np.random.default_rng(8)
        net = MlpNetwork.create([5, 20, 7], rng)
        out = []
        for _ in range(20):
            x, y, a = random_batch(rng, net, 10)
            out.append(net.train_batch(x, y, a, TrainingConfig(0.01, 10)))
        return out, net

    (l1, n1), (l2, n2) = trajectory(), trajectory()
    assert l1 == l2 and n1.same_parameters(n2)


def test_train_batch_rejects_mismatched_lengths(rng):
    net = MlpNetwork.create([4, 8, 5], rng)
    with pytest.raises(DimensionMismatch):
        net.train_batch(np.zeros((3, 4)), np.zeros(2), np.zeros(3, dtype=int), TrainingConfig())


def test_non_finite_loss_raises(rng):
    net = MlpNetwork.create([2, 4, 3], rng)
    with pytest.raises(NonFiniteLoss):
        net.train_batch([[1.0, 0.0]], [np.inf], [0], TrainingConfig(0.1, 1))


@pytest.mark.parametrize("lr", [0.0, 1.5])
def test_training_config_learning_rate_bounds(lr):
    with pytest.raises(ValueError):
        TrainingConfig(learning_rate=lr)


def test_clone_is_isolated(rng):
    net = MlpNetwork.create([4, 8, 5], rng)
    target = clone_into_target(net)
    probe = rng.normal(size=(20, 4))
    np.testing.assert_array_equal(net.forward(probe), target.forward(probe))
    frozen = target.forward(probe)
    x, y, a = random_batch(rng, net, 4)
    net.train_batch(x, y, a, TrainingConfig(0.1, 4))
    np.testing.assert_array_equal(target.forward(probe), frozen)
    assert not np.array_equal(net.forward(probe), frozen)


def test_successive_clones_identical(rng):
    net = MlpNetwork.create([4, 8, 5], rng)
    assert clone_into_target(net).same_parameters(clone_into_target(net))


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_checkpoint_round_trip_bit_exact(tmp_path, rng, activation):
    net = MlpNetwork.create([7, 150, 11], rng, activation)
    net.biases[0] += rng.normal(size=150)
    path = tmp_path / "net.qgn"
    save_checkpoint(net, path)
    assert path.read_bytes()[:4] == b"QGN1"
    loaded = load_checkpoint(path)
    assert loaded.same_parameters(net)


def test_checkpoint_multi_hidden_layer_round_trip(tmp_path, rng):
    net = MlpNetwork.create([4, 6, 6, 6, 5], rng, "tanh")
    save_checkpoint(net, tmp_path / "deep.qgn")
    assert load_checkpoint(tmp_path / "deep.qgn").same_parameters(net)


def test_truncated_checkpoint_raises_format_error(tmp_path, rng):
    path = tmp_path / "net.qgn"
    save_checkpoint(MlpNetwork.create([4, 8, 5], rng), path)
    data = path.read_bytes()
    for cut in (2, 10, len(data) - 1):
        path.write_bytes(data[:cut])
        with pytest.raises(FormatError):
            load_checkpoint(path)


def test_bad_magic_raises(tmp_path, rng):
    path = tmp_path / "net.qgn"
    save_checkpoint(MlpNetwork.create([4, 8, 5], rng), path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_version_mismatch_names_both_versions(tmp_path, rng):
    path = tmp_path / "net.qgn"
    save_checkpoint(MlpNetwork.create([4, 8, 5], rng), path)
    with pytest.raises(FormatError, match=r"expected 2, found 1"):
        load_checkpoint(path, expected_version=CHECKPOINT_VERSION + 1)


def test_golden_checkpoint_output():
    net = load_checkpoint(DATA / "golden_n2.qgn")
    expected = json.loads((DATA / "golden_n2.json").read_text())
    np.testing.assert_allclose(net.forward(expected["input"]), expected["output"], rtol=0, atol=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import mlp_loss
from sdc_sentinel.archs import ArchitectureSpec
from sdc_sentinel.mlp import (DetectorModel, Label, LayerSpec, Network, TrainConfig, classify,
                              detector_op_count, dumps_model, forward, gradients, inner_product,
                              layers_for, loads_model, log_softmax, loss, model_from_dict,
                              model_to_dict, relu, sgd_step, standardize)
from support import constant_detector, fd_max_rel_error, random_network


def test_inner_product_hand_value():
    assert inner_product([[1, 1]], [1], [2, 3]).tolist() == [6]
    with pytest.raises(ValueError):
        inner_product([[1, 1]], [1], [2, 3, 4])


def test_relu():
    assert relu([-1.0, 0.0, 2.5]).tolist() == [0.0, 0.0, 2.5]


def test_layers_alternate():
    kinds = [l.kind for l in layers_for(ArchitectureSpec.parse("10,8,4,2"))]
    assert kinds == ["inner_product", "relu", "inner_product", "relu", "inner_product"]


def test_layer_chain_validation():
    with pytest.raises(ValueError):
        LayerSpec("relu", 3, 4)
    with pytest.raises(ValueError):
        LayerSpec("conv", 3, 4)
    with pytest.raises(ValueError):
        DetectorModel([LayerSpec("inner_product", 3, 3)], [np.zeros((3, 3))], [np.zeros(3)],
                      np.zeros(3), np.ones(3))


def test_forward_matches_hand_evaluation():
    w1 = np.array([[1.0, -1.0], [0.5, 2.0]], np.float32)
    b1 = np.array([0.0, -1.0], np.float32)
    w2 = np.array([[1.0, 1.0], [-1.0, 2.0]], np.float32)
    b2 = np.array([0.5, 0.0], np.float32)
    layers = [LayerSpec("inner_product", 2, 2), LayerSpec("relu", 2, 2), LayerSpec("inner_product", 2, 2)]
    model = DetectorModel(layers, [w1, w2], [b1, b2], np.zeros(2), np.ones(2))
    x = np.array([3.0, 1.0], np.float32)
    h = relu(inner_product(w1, b1, x))
    expected = inner_product(w2, b2, h)
    assert np.array_equal(forward(model, x), expected.astype(np.float32))


def test_tie_is_incorrect():
    layers = [LayerSpec("inner_product", 1, 2)]
    model = DetectorModel(layers, [np.zeros((2, 1))], [np.array([0.5, 0.5])], [0.0], [1.0])
    assert classify(model, [3.0]) is Label.INCORRECT
    assert constant_detector(3, False).classify_batch(np.zeros((2, 3))).tolist() == [False, False]


def test_loss_softmax_arithmetic():
    assert loss([10.0, -10.0], Label.CORRECT) == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)
    assert loss([10.0, -10.0], Label.CORRECT) == pytest.approx(2.06e-9, rel=1e-2)
    assert np.exp(log_softmax(np.array([1.0, 2.0]))).sum() == pytest.approx(1.0)


def test_standardize_clips_and_maps_nan():
    z = standardize(np.array([1e30, np.nan, -1e30, 1.0]), 0.0, 1.0)
    assert z.tolist() == [16.0, 16.0, -16.0, 1.0]


def test_zero_weight_last_layer_bias_gradient():
    layers = [LayerSpec("inner_product", 3, 2)]
    net = Network(layers, [np.zeros((2, 3))], [np.zeros(2)], np.zeros(3), np.ones(3))
    x = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]])
    y = np.array([0, 1])
    _, grads = net.loss_and_gradients(x, y)
    # softmax(0,0) = (0.5, 0.5); averaged minus one-hot gives zero for a balanced batch
    assert np.allclose(grads[1], [0.0, 0.0])
    _, grads = net.loss_and_gradients(x[:1], y[:1])
    assert np.allclose(grads[1], [-0.5, 0.5])


def test_loss_matches_plain_python_oracle():
    net = random_network((3, 4, 2), seed=3, normalize=False)
    x = np.array([0.3, -1.2, 0.7])
    ours = net.mean_loss(x[None, :], [1])
    ref = mlp_loss([w.tolist() for w in net.weights], [b.tolist() for b in net.biases], x.tolist(), 1)
    assert ours == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("dims", [(4, 2), (5, 3, 2), (6, 4, 3, 2)])
def test_gradients_match_finite_differences(dims):
    net = random_network(dims, seed=len(dims))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, dims[0]))
    y = rng.integers(0, 2, 6)
    assert fd_max_rel_error(net, x, y) <= 1e-3


def test_gradients_accepts_labeled_pairs():
    net = random_network((3, 2), seed=0)
    batch = [(np.array([1.0, 2.0, 3.0]), 1), (np.array([0.0, 1.0, 0.0]), 0)]
    grads = gradients(net, batch)
    assert [g.shape for g in grads] == [(2, 3), (2,)]
    with pytest.raises(ValueError):
        gradients(net, [])


def test_momentum_two_steps_hand_unrolled():
    layers = [LayerSpec("inner_product", 1, 2)]
    net = Network(layers, [np.array([[1.0], [2.0]])], [np.zeros(2)], [0.0], [1.0])
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9)
    g = [np.array([[1.0], [1.0]]), np.array([0.5, -0.5])]
    net1, v1 = sgd_step(net, g, cfg)
    net2, v2 = sgd_step(net1, g, cfg, v1)
    # v1 = -0.1 g ; v2 = 0.9 v1 - 0.1 g = -0.19 g ; p2 = p0 - 0.29 g
    assert np.allclose(v2[0], -0.19 * g[0])
    assert np.allclose(net2.weights[0], np.array([[1.0], [2.0]]) - 0.29 * g[0])
    assert np.allclose(net2.biases[0], -0.29 * g[1])
    # the source network is untouched
    assert np.array_equal(net.weights[0], [[1.0], [2.0]])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(initial_tickets=101, ticket_cap=100)


def test_op_count_grows_with_size():
    small = detector_op_count(ArchitectureSpec.parse("10,2"))
    big = detector_op_count(ArchitectureSpec.parse("10,8,4,2"))
    assert big > small
    # 2N standardization + 2 per MAC + argmax
    assert small == 2 * 10 + 2 * 20 + 1


def test_model_serialization_roundtrip_is_exact():
    model = random_network((5, 4, 2), seed=9).to_model({"architecture": "5,4,2", "note": "x"})
    again = loads_model(dumps_model(model))
    for a, b in zip(model.weights + model.biases, again.weights + again.biases):
        assert np.array_equal(a, b)
    assert np.array_equal(model.feature_std, again.feature_std)
    assert again.metadata["note"] == "x"
    x = np.random.default_rng(0).normal(size=(10, 5)).astype(np.float32)
    assert np.array_equal(model.forward_batch(x), again.forward_batch(x))


def test_model_format_version_checked():
    d = model_to_dict(constant_detector(2, True))
    d["format_version"] = 99
    with pytest.raises(ValueError):
        model_from_dict(d)
    d["format"] = "other"
    with pytest.raises(ValueError):
        model_from_dict(d)


@given(st.integers(0, 10_000))
def test_float32_inference_tracks_float64_training(seed):
    net = random_network((4, 8, 2), seed=seed)
    model = net.to_model()
    x = np.random.default_rng(seed).normal(size=(16, 4))
    assert np.allclose(model.forward_batch(x), net.logits(x), atol=1e-3, rtol=1e-3)

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dkrc.errors import DimensionError, DivergenceError, InvalidInputError, NetworkStateError
from dkrc.neuralnet import (Activation, CAEConfig, Conv2d, Dense, Flatten, Network, TrainConfig, Upsample2d,
                            build_ae, build_cae, mse_loss, network_from_json, network_to_json, train)
from helpers import differentiable_instance, gradient_errors


def test_identity_dense_layer():
    net = Network([Dense(3, 3, weights=np.eye(3), bias=np.zeros(3))], (3,))
    x = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(net.forward(x), x)


def test_zero_tanh_layer_outputs_zero():
    net = Network([Dense(3, 2, Activation("tanh"), weights=np.zeros((2, 3)), bias=np.zeros(2))], (3,))
    assert not np.any(net.forward(np.ones((5, 3))))


def test_unit_conv_doubles_pixels():
    conv = Conv2d(1, 1, 1, 1, Activation("linear"), kernels=np.full((1, 1, 1, 1), 2.0), bias=np.zeros(1))
    x = np.random.default_rng(1).standard_normal((2, 1, 4, 5))
    np.testing.assert_allclose(Network([conv], (1, 4, 5)).forward(x), 2 * x)


def test_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        build_ae(2, 3).forward(np.zeros((4, 5)))


def test_linear_mse_gradient_closed_form():
    rng = np.random.default_rng(2)
    W, b = rng.standard_normal((1, 3)), rng.standard_normal(1)
    net = Network([Dense(3, 1, weights=W.copy(), bias=b.copy())], (3,))
    x, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 1))
    _, g = mse_loss(net.forward(x), y)
    (gW, gb), _ = net.backward(g)
    resid = x @ W.T + b - y
    np.testing.assert_allclose(gW, 2 * resid.T @ x / 5, rtol=1e-12)
    np.testing.assert_allclose(gb, 2 * resid.sum(axis=0) / 5, rtol=1e-12)


def test_zero_loss_gradient_gives_zero_gradients():
    net = build_cae(8, 6, cfg=CAEConfig(latent_dim=3))
    out = net.forward(np.random.default_rng(3).random((2, 1, 8, 6)))
    grads, gx = net.backward(np.zeros_like(out))
    assert all(not np.any(g) for g in grads) and not np.any(gx)


def test_backward_requires_forward():
    net = build_ae(2, 3)
    with pytest.raises(NetworkStateError):
        net.backward(np.zeros((1, 2)))
    net.forward(np.zeros((1, 2)))
    net.backward(np.zeros((1, 2)))
    with pytest.raises(NetworkStateError):
        net.backward(np.zeros((1, 2)))


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(1000 + seed)
    net, x = differentiable_instance(rng)
    assert max(gradient_errors(net, x, rng)) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(1, 3))
def test_same_padding_shape_law(h, w, kh, kw, stride):
    conv = Conv2d(1, 2, (kh, kw), stride)
    out = conv.forward(np.zeros((1, 1, h, w)))[0]
    assert out.shape == (1, 2, -(-h // stride), -(-w // stride))


def test_upsample_and_flatten_shapes():
    up = Upsample2d(5, 7)
    assert up.forward(np.zeros((2, 3, 3, 4)))[0].shape == (2, 3, 5, 7)
    assert Flatten().forward(np.zeros((2, 3, 4, 5)))[0].shape == (2, 60)


def test_cae_architecture():
    net = build_cae(32, 16, cfg=CAEConfig())
    encoder = net.layers[:net.latent_boundary]
    assert sum(isinstance(layer, Conv2d) for layer in encoder) == 2
    assert all(layer.activation.kind == "leaky_relu" for layer in encoder if isinstance(layer, Conv2d))
    assert net.latent_shape == (8,)
    x = np.random.default_rng(4).random((3, 1, 32, 16))
    out = net.forward(x)
    assert out.shape == x.shape
    assert np.all((out > 0) & (out < 1))
    assert net.layers[-1].activation.kind == "sigmoid"


def test_ae_architecture():
    net = build_ae(2, 3)
    x = np.random.default_rng(5).standard_normal((6, 2))
    z = net.encode(x)
    assert z.shape == (6, 3) and np.all(np.abs(z) < 1)
    # far from the origin tanh rounds to exactly +-1 in floating point
    assert np.all(np.abs(net.encode(1e3 * x)) <= 1)
    assert net.forward(x).shape == (6, 2)
    np.testing.assert_allclose(net.forward(x), net.decode(net.encode(x)))
    with pytest.raises(DimensionError):
        build_ae(2, 2)


def test_memorizes_a_repeated_vector():
    x = np.repeat([[0.3, -0.7, 0.5, 0.1]], 8, axis=0)
    _, hist = train(build_ae(4, 5), x, x, TrainConfig(learning_rate=1e-2, epochs=2000, batch_size=8))
    assert hist[-1] < 1e-6


def test_linear_autoencoder_reaches_pca_optimum():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((200, 2)) @ rng.standard_normal((2, 6))
    # rank-2 data: the best rank-2 reconstruction (SVD) is exact
    s = np.linalg.svd(data - 0, compute_uv=False)
    assert s[2] < 1e-10 * s[0]
    init = np.random.default_rng(1)
    net = Network([Dense(6, 2, Activation("linear"), init), Dense(2, 6, Activation("linear"), init)], (6,), 1)
    _, hist = train(net, data, data, TrainConfig(learning_rate=1e-2, epochs=1000, batch_size=50))
    assert hist[-1] < 1e-4 * data.var()


def _small_problem():
    rng = np.random.default_rng(6)
    return rng.standard_normal((64, 3))


def test_training_is_deterministic():
    x = _small_problem()
    cfg = TrainConfig(epochs=20, batch_size=16, seed=3)
    _, h1 = train(build_ae(3, 4, seed=1), x, x, cfg)
    _, h2 = train(build_ae(3, 4, seed=1), x, x, cfg)
    assert h1 == h2
    assert h1[-1] <= h1[0]


def test_data_parallel_training_is_deterministic():
    x = _small_problem()
    cfg = TrainConfig(epochs=10, batch_size=16, seed=3, workers=3)
    n1, h1 = train(build_ae(3, 4, seed=1), x, x, cfg)
    n2, h2 = train(build_ae(3, 4, seed=1), x, x, cfg)
    assert h1 == h2 and n1.get_flat().tobytes() == n2.get_flat().tobytes()
    _, serial = train(build_ae(3, 4, seed=1), x, x, TrainConfig(epochs=10, batch_size=16, seed=3))
    np.testing.assert_allclose(h1, serial, rtol=1e-9)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_the_epoch():
    x = _small_problem()
    with pytest.raises(DivergenceError) as info:
        train(build_ae(3, 4), x, x, TrainConfig(learning_rate=1e300, epochs=5))
    assert info.value.epoch == 1
    assert "epoch 1" in str(info.value)


def test_train_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(learning_rate=0)
    with pytest.raises(InvalidInputError):
        TrainConfig(loss="huber")
    with pytest.raises(InvalidInputError):
        Activation("leaky_relu", 1.5)


def test_model_file_round_trip():
    net = build_cae(8, 6, cfg=CAEConfig(latent_dim=3, seed=9))
    doc = json.loads(json.dumps(network_to_json(net, {"mean": [1.0]})))
    assert doc["version"] == 1
    clone = network_from_json(doc)
    x = np.random.default_rng(7).random((2, 1, 8, 6))
    assert clone.forward(x).tobytes() == net.forward(x).tobytes()
    assert clone.metadata == {"mean": [1.0]}
    with pytest.raises(InvalidInputError):
        network_from_json({**doc, "version": 99})

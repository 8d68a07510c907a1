import numpy as np
import pytest

from trafficast.errors import ConfigurationError, TrainingDivergedError
from trafficast.numkernel import (
    SGD, Adam, Conv1DLayer, DenseLayer, LSTMNet, LstmLayer, MLPNet, Network, TrainConfig, activate,
    conv_time_backward, conv_time_forward, dense_backward, dense_forward, fit_network, grad_check,
    lstm_backward, lstm_forward, mse_loss, optimizer_step, relative_error, sigmoid,
)


def numeric_grad(f, arr, eps=1e-5):
    g = np.zeros_like(arr)
    flat, gf = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * eps)
    return g


def test_sigmoid_is_stable():
    z = np.array([-800.0, 0.0, 800.0])
    np.testing.assert_allclose(sigmoid(z), [0.0, 0.5, 1.0])
    with pytest.raises(Exception):
        activate(z, "softsign")


def test_dense_identity():
    x = np.array([[1.0, -2.0, 3.0]])
    layer = DenseLayer(np.eye(3), np.zeros(3), "identity")
    np.testing.assert_array_equal(dense_forward(layer, x), x)


def test_dense_relu_negative():
    layer = DenseLayer(np.eye(2), np.zeros(2), "relu")
    np.testing.assert_array_equal(dense_forward(layer, np.array([[-1.0, -5.0]])), [[0.0, 0.0]])


@pytest.mark.parametrize("act", ["identity", "relu", "tanh", "sigmoid"])
def test_dense_gradients(act, rng):
    layer = DenseLayer.init(5, 4, act, rng)
    layer.b[:] = rng.normal(scale=0.3, size=4)
    x = rng.normal(size=(6, 5))
    R = rng.normal(size=(6, 4))
    f = lambda: float(np.sum(dense_forward(layer, x) * R))
    dx, dW, db = dense_backward(layer, x, R)
    assert relative_error(dW, numeric_grad(f, layer.W)) < 1e-6
    assert relative_error(db, numeric_grad(f, layer.b)) < 1e-6
    assert relative_error(dx, numeric_grad(f, x)) < 1e-6


def test_conv_zero_kernel():
    layer = Conv1DLayer(np.zeros((1, 3, 2)), np.zeros(1))
    np.testing.assert_array_equal(conv_time_forward(layer, np.ones((3, 7))), np.zeros(6))


def test_conv_identity_kernel():
    layer = Conv1DLayer(np.ones((1, 1, 1)), np.zeros(1), "identity")
    np.testing.assert_array_equal(conv_time_forward(layer, np.array([[1.0, 2.0, 3.0]])), [1, 2, 3])


def test_conv_output_length_and_short_input(rng):
    layer = Conv1DLayer.init(1, 4, 3, rng)
    assert conv_time_forward(layer, rng.normal(size=(4, 10))).shape == (8,)
    with pytest.raises(ValueError):
        conv_time_forward(layer, rng.normal(size=(4, 2)))
    with pytest.raises(ConfigurationError):
        Conv1DLayer.init(1, 4, 0, rng)


@pytest.mark.parametrize("channels", [1, 3])
def test_conv_gradients(channels, rng):
    layer = Conv1DLayer.init(channels, 4, 3, rng, activation="tanh")
    layer.bias[:] = rng.normal(size=channels)
    M = rng.normal(size=(6, 4, 9))
    R = rng.normal(size=(6, 7))
    f = lambda: float(np.sum(conv_time_forward(layer, M) * R))
    dM, dk, db = conv_time_backward(layer, M, R)
    assert relative_error(dk, numeric_grad(f, layer.kernel)) < 1e-6
    assert relative_error(db, numeric_grad(f, layer.bias)) < 1e-6
    assert relative_error(dM, numeric_grad(f, M)) < 1e-6


def test_lstm_zero_weights_give_zero_states(rng):
    layer = LstmLayer(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    hs, _ = lstm_forward(layer, rng.normal(size=(4, 6, 3)))
    np.testing.assert_array_equal(hs, 0.0)


def test_lstm_single_step_scalar_oracle(rng):
    layer = LstmLayer.init(2, 1, rng)
    layer.b[:] = rng.normal(size=4)
    x = rng.normal(size=2)
    s = lambda z: 1.0 / (1.0 + np.exp(-z))
    pre = {g: float(x @ layer.gate(g)[0][:, 0] + layer.gate(g)[2][0]) for g in ("f", "i", "o", "c")}
    c = s(pre["i"]) * np.tanh(pre["c"])  # the forget gate multiplies the zero initial cell
    h = s(pre["o"]) * np.tanh(c)
    hs, cache = lstm_forward(layer, x[None, None, :])
    assert hs[0, 0, 0] == pytest.approx(h, abs=1e-15)
    assert cache[2][0, 0, 0] == pytest.approx(c, abs=1e-15)


def test_lstm_bptt_gradients(rng):
    layer = LstmLayer.init(3, 4, rng)
    layer.b[:] = rng.normal(scale=0.5, size=16)
    seq = rng.normal(size=(2, 5, 3))
    R = rng.normal(size=(2, 5, 4))
    f = lambda: float(np.sum(lstm_forward(layer, seq)[0] * R))
    _, cache = lstm_forward(layer, seq)
    dseq, dW, dU, db = lstm_backward(layer, cache, R)
    for analytic, arr in ((dW, layer.W), (dU, layer.U), (db, layer.b), (dseq, seq)):
        assert relative_error(analytic, numeric_grad(f, arr)) < 1e-5


def test_mse_examples():
    loss, grad = mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert loss == 0.0 and not grad.any()
    loss, grad = mse_loss(np.array([0.0]), np.array([2.0]))
    assert loss == 4.0 and grad[0] == -4.0
    with pytest.raises(ValueError):
        mse_loss(np.zeros(2), np.zeros(3))


def test_mse_gradient(rng):
    p, t = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    _, g = mse_loss(p, t)
    assert relative_error(g, numeric_grad(lambda: mse_loss(p, t)[0], p)) < 1e-8


def test_zero_gradient_leaves_params():
    for opt in (SGD(0.1), Adam(0.1)):
        p = {"w": np.array([1.0, -2.0])}
        opt.step(p, {"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_sgd_unit_step():
    p = {"w": np.array([0.0])}
    optimizer_step(None, p, {"w": np.array([1.0])}, TrainConfig(learning_rate=1.0, weight_decay=0.0,
                                                                 optimizer="sgd"))
    assert p["w"][0] == -1.0


def test_adam_finds_quadratic_minimum():
    # f(w) = (w - c)^T A (w - c), minimum at c
    A = np.diag([1.0, 10.0, 0.5])
    c = np.array([3.0, -1.0, 0.25])
    p = {"w": np.zeros(3)}
    opt = Adam(0.01)
    for _ in range(5000):
        opt.step(p, {"w": 2 * A @ (p["w"] - c)})
    np.testing.assert_allclose(p["w"], c, atol=1e-4)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(optimizer="rmsprop")


class Linear(Network):
    def __init__(self, rng):
        self.params = {"W": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}
        self.grads = {}

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads = {"W": self._x.T @ dout, "b": dout.sum(axis=0)}
        return (dout @ self.params["W"].T,)


def test_grad_check_linear(rng):
    assert grad_check(Linear(rng), rng.normal(size=(4, 3))) < 1e-9


def test_grad_check_two_layer_mlp(rng):
    net = MLPNet([5, 7, 3], rng, hidden_activation="tanh")
    assert grad_check(net, rng.normal(size=(6, 5))) < 1e-6


def test_grad_check_relu_mlp(rng):
    net = MLPNet([4, 6, 6, 2], rng)
    for k in ("b0", "b1", "b2"):
        net.params[k][...] = rng.normal(scale=0.1, size=net.params[k].shape)
    assert grad_check(net, rng.normal(size=(5, 4))) < 1e-6


def test_grad_check_lstm_net(rng):
    net = LSTMNet(3, 4, 2, 2, rng)
    assert grad_check(net, rng.normal(size=(2, 5, 3))) < 1e-5


def test_grad_check_catches_a_wrong_gradient(rng):
    class Broken(Linear):
        def backward(self, dout):
            out = super().backward(dout)
            self.grads["b"] = self.grads["b"] * 1.01
            return out

    assert grad_check(Broken(rng), rng.normal(size=(4, 3))) > 1e-3


def test_fit_network_memorises_and_is_deterministic(rng):
    X = rng.normal(size=(10, 4))
    Y = rng.normal(size=(10, 2))
    cfg = TrainConfig(batch_size=10, learning_rate=0.01, weight_decay=0.0, epochs=1500)
    a = MLPNet([4, 32, 2], np.random.default_rng(1))
    b = MLPNet([4, 32, 2], np.random.default_rng(1))
    ra = fit_network(a, X, Y, cfg)
    fit_network(b, X, Y, cfg)
    assert ra.train_loss[-1] < 0.01
    np.testing.assert_array_equal(a.forward(X), b.forward(X))


def test_early_stopping_restores_best(rng):
    X = rng.normal(size=(60, 3))
    Y = X @ rng.normal(size=(3, 1)) + 0.5 * rng.normal(size=(60, 1))
    Xv = rng.normal(size=(40, 3))
    Yv = rng.normal(size=(40, 1))  # unrelated: validation error soon stops improving
    net = MLPNet([3, 64, 1], np.random.default_rng(0))
    res = fit_network(net, X, Y, TrainConfig(batch_size=20, learning_rate=0.01, epochs=300, patience=5),
                      val=(Xv, Yv))
    assert res.epochs_run == res.best_epoch + 1 + 5
    best = min(res.val_rmse)
    now = float(np.sqrt(np.mean((net.forward(Xv) - Yv) ** 2)))
    assert now == pytest.approx(best, rel=1e-12)


def test_divergence_is_reported(rng):
    X = rng.normal(size=(20, 2)) * 1e3
    Y = rng.normal(size=(20, 1)) * 1e3
    net = MLPNet([2, 8, 1], rng)
    with pytest.raises(TrainingDivergedError, match="lr="):
        fit_network(net, X, Y, TrainConfig(learning_rate=1e3, optimizer="sgd", epochs=50, batch_size=5))

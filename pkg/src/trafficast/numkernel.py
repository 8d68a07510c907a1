"""Small float64 neural-network kernel with hand-written backward passes.

Every network exposes ``params`` (name -> array, updated in place),
``forward(*inputs)`` and ``backward(dout)``; ``backward`` fills ``grads``
with the same keys and returns the gradient of each input.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, TrainingDivergedError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "identity":
        return z
    raise ConfigurationError(f"unknown activation {kind!r}")


def activation_grad(z: np.ndarray, y: np.ndarray, dy: np.ndarray, kind: str) -> np.ndarray:
    """d(loss)/dz given pre-activation ``z``, output ``y`` and upstream ``dy``."""
    if kind == "relu":
        return dy * (z > 0)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "identity":
        return dy
    raise ConfigurationError(f"unknown activation {kind!r}")


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


# ---------------------------------------------------------------------------
# dense


@dataclass
class DenseLayer:
    W: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)
    activation: str = "relu"

    @classmethod
    def init(cls, d_in: int, d_out: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        return cls(glorot(rng, (d_in, d_out), d_in, d_out), np.zeros(d_out), activation)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != layer.W.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} != {layer.W.shape[0]}")
    return activate(x @ layer.W + layer.b, layer.activation)


def dense_backward(layer: DenseLayer, x: np.ndarray, dy: np.ndarray):
    """Return (dx, dW, db) for ``y = act(x W + b)``; leading axes are batch axes."""
    z = x @ layer.W + layer.b
    y = activate(z, layer.activation)
    if dy.shape != y.shape:
        raise ValueError("dense: upstream gradient shape mismatch")
    dz = activation_grad(z, y, dy, layer.activation)
    x2 = x.reshape(-1, x.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    return dz @ layer.W.T, x2.T @ dz2, dz2.sum(axis=0)


# ---------------------------------------------------------------------------
# time-axis convolution


@dataclass
class Conv1DLayer:
    """Kernel spans the full input height; one kernel per channel or shared (C = 1)."""

    kernel: np.ndarray  # (C, height, I)
    bias: np.ndarray    # (C,)
    activation: str = "relu"

    @property
    def per_channel(self) -> bool:
        return self.kernel.shape[0] > 1

    @property
    def width(self) -> int:
        return self.kernel.shape[2]

    @classmethod
    def init(cls, channels: int, height: int, width: int, rng: np.random.Generator,
             activation: str = "relu") -> "Conv1DLayer":
        if width < 1 or height < 1:
            raise ConfigurationError("conv kernel dims must be >= 1")
        return cls(glorot(rng, (channels, height, width), height * width, width),
                   np.zeros(channels), activation)


def conv_time_forward(layer: Conv1DLayer, M: np.ndarray) -> np.ndarray:
    """Valid, stride-1 convolution along time of a (height, T) matrix -> length T - I + 1.

    Also accepts a batch (m, height, T) whose rows cycle through the channels.
    """
    single = M.ndim == 2
    x = M[None] if single else M
    if x.shape[-1] < layer.width:
        raise ValueError(f"time length {x.shape[-1]} shorter than kernel width {layer.width}")
    z = kernels.conv_time_forward(x, layer.kernel, layer.bias)
    y = activate(z, layer.activation)
    return y[0] if single else y


def conv_time_backward(layer: Conv1DLayer, M: np.ndarray, dy: np.ndarray):
    """Return (dM, dkernel, dbias)."""
    single = M.ndim == 2
    x = M[None] if single else M
    d = dy[None] if single else dy
    z = kernels.conv_time_forward(x, layer.kernel, layer.bias)
    y = activate(z, layer.activation)
    dz = activation_grad(z, y, d, layer.activation)
    dx, dk, db = kernels.conv_time_backward(x, layer.kernel, dz)
    return (dx[0] if single else dx), dk, db


# ---------------------------------------------------------------------------
# LSTM

GATES = ("f", "i", "o", "c")


@dataclass
class LstmLayer:
    """Gate blocks are stacked in the order forget, input, output, candidate."""

    W: np.ndarray  # (d_in, 4H)
    U: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator) -> "LstmLayer":
        W = glorot(rng, (d_in, 4 * hidden), d_in, hidden)
        U = glorot(rng, (hidden, 4 * hidden), hidden, hidden)
        return cls(W, U, np.zeros(4 * hidden))

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = GATES.index(name)
        H = self.hidden
        sl = slice(k * H, (k + 1) * H)
        return self.W[:, sl], self.U[:, sl], self.b[sl]


def lstm_forward(layer: LstmLayer, seq: np.ndarray):
    """Run ``seq`` of shape (B, T, d_in) from zero state; returns (hidden states (B, T, H), cache)."""
    if seq.ndim != 3 or seq.shape[1] == 0:
        raise ValueError("lstm: expected a non-empty (batch, time, features) sequence")
    B, T, _ = seq.shape
    H = layer.hidden
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    gates = np.zeros((B, T, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    xw = seq @ layer.W + layer.b
    for t in range(T):
        a = xw[:, t] + h @ layer.U
        g = gates[:, t]
        g[:, : 3 * H] = sigmoid(a[:, : 3 * H])
        g[:, 3 * H:] = np.tanh(a[:, 3 * H:])
        f, i, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        c = f * c + i * cand
        h = o * np.tanh(c)
        cs[:, t] = c
        hs[:, t] = h
    return hs, (seq, hs, cs, gates)


def lstm_backward(layer: LstmLayer, cache, dhs: np.ndarray):
    """Backpropagation through time. Returns (dseq, dW, dU, db)."""
    seq, hs, cs, gates = cache
    B, T, H = hs.shape
    dW = np.zeros_like(layer.W)
    dU = np.zeros_like(layer.U)
    db = np.zeros_like(layer.b)
    dseq = np.zeros_like(seq)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    da = np.empty((B, 4 * H))
    for t in reversed(range(T)):
        g = gates[:, t]
        f, i, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t else np.zeros((B, H))
        h_prev = hs[:, t - 1] if t else np.zeros((B, H))
        tc = np.tanh(c)
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da[:, :H] = dc * c_prev * f * (1.0 - f)
        da[:, H:2 * H] = dc * cand * i * (1.0 - i)
        da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H:] = dc * i * (1.0 - cand * cand)
        dW += seq[:, t].T @ da
        dU += h_prev.T @ da
        db += da.sum(axis=0)
        dseq[:, t] = da @ layer.W.T
        dh_next = da @ layer.U.T
        dc_next = dc * f
    return dseq, dW, dU, db


# ---------------------------------------------------------------------------
# loss and optimisers


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ValueError(f"mse: shape {pred.shape} != {target.shape}")
    diff = pred - target
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported by the caller
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class TrainConfig:
    batch_size: int = 150
    learning_rate: float = 0.0005
    weight_decay: float = 0.0002
    epochs: int = 200
    patience: int = 10
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigurationError("batch_size, epochs and patience must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate must be > 0 and weight_decay >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


class SGD:
    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, params: dict, grads: dict) -> None:
        for k, p in params.items():
            p -= self.lr * (grads[k] + self.weight_decay * p)


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(p))
            v = self.v.setdefault(k, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * ((m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate, config.weight_decay)
    return Adam(config.learning_rate, config.weight_decay)


def optimizer_step(state, params: dict, grads: dict, config: TrainConfig | None = None):
    """Apply one update; ``state`` is an optimiser instance or None (built from ``config``)."""
    if state is None:
        state = make_optimizer(config or TrainConfig())
    state.step(params, grads)
    return state


# ---------------------------------------------------------------------------
# networks


class Network:
    """Base for the hand-differentiated networks."""

    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def forward(self, *inputs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, ...]:
        raise NotImplementedError

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


class MLPNet(Network):
    """Dense stack: ReLU hidden layers, identity output."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, hidden_activation: str = "relu"):
        if len(sizes) < 2:
            raise ConfigurationError("an MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        self.activations = [hidden_activation] * (len(sizes) - 2) + ["identity"]
        self.params = {}
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layer = DenseLayer.init(a, b, self.activations[k], rng)
            self.params[f"W{k}"] = layer.W
            self.params[f"b{k}"] = layer.b
        self.grads = {}
        self._xs: list[np.ndarray] = []

    def layer(self, k: int) -> DenseLayer:
        return DenseLayer(self.params[f"W{k}"], self.params[f"b{k}"], self.activations[k])

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._xs = []
        for k in range(len(self.activations)):
            self._xs.append(x)
            x = dense_forward(self.layer(k), x)
        return x

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, ...]:
        d = dout
        for k in reversed(range(len(self.activations))):
            d, dW, db = dense_backward(self.layer(k), self._xs[k], d)
            self.grads[f"W{k}"] = dW
            self.grads[f"b{k}"] = db
        return (d,)


class LSTMNet(Network):
    """Stacked LSTM layers; the last hidden state feeds a dense output layer."""

    def __init__(self, d_in: int, hidden: int, n_layers: int, d_out: int, rng: np.random.Generator):
        self.params = {}
        self.n_layers = n_layers
        width = d_in
        for k in range(n_layers):
            layer = LstmLayer.init(width, hidden, rng)
            self.params.update({f"W{k}": layer.W, f"U{k}": layer.U, f"b{k}": layer.b})
            width = hidden
        out = DenseLayer.init(hidden, d_out, "identity", rng)
        self.params.update({"Wout": out.W, "bout": out.b})
        self.grads = {}
        self._caches: list = []
        self._last = None

    def layer(self, k: int) -> LstmLayer:
        return LstmLayer(self.params[f"W{k}"], self.params[f"U{k}"], self.params[f"b{k}"])

    def forward(self, seq: np.ndarray) -> np.ndarray:
        self._caches = []
        x = seq
        for k in range(self.n_layers):
            x, cache = lstm_forward(self.layer(k), x)
            self._caches.append(cache)
        self._last = x[:, -1]
        return dense_forward(DenseLayer(self.params["Wout"], self.params["bout"], "identity"), self._last)

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, ...]:
        dlast, dWo, dbo = dense_backward(DenseLayer(self.params["Wout"], self.params["bout"], "identity"),
                                         self._last, dout)
        self.grads["Wout"], self.grads["bout"] = dWo, dbo
        cache = self._caches[-1]
        dhs = np.zeros_like(cache[1])
        dhs[:, -1] = dlast
        for k in reversed(range(self.n_layers)):
            dx, dW, dU, db = lstm_backward(self.layer(k), self._caches[k], dhs)
            self.grads[f"W{k}"], self.grads[f"U{k}"], self.grads[f"b{k}"] = dW, dU, db
            dhs = dx
        return (dhs,)


# ---------------------------------------------------------------------------
# training


def _take(inputs: tuple[np.ndarray, ...], idx: np.ndarray) -> tuple[np.ndarray, ...]:
    return tuple(a[idx] for a in inputs)


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffled sample order for one epoch; a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def horizon_rmse(pred: np.ndarray, target: np.ndarray) -> float:
    """RMSE per horizon step (last axis), averaged over steps."""
    err = (pred - target).reshape(-1, target.shape[-1])
    return float(np.mean(np.sqrt(np.mean(err * err, axis=0))))


def predict_batched(net: Network, inputs: tuple[np.ndarray, ...], batch: int = 2048) -> np.ndarray:
    n = len(inputs[0])
    outs = [net.forward(*_take(inputs, np.arange(s, min(s + batch, n)))) for s in range(0, n, batch)]
    return np.concatenate(outs) if outs else np.zeros((0,))


@dataclass
class TrainResult:
    epochs_run: int
    best_epoch: int
    train_loss: list[float]
    val_rmse: list[float]


def fit_network(net: Network, inputs, targets: np.ndarray, config: TrainConfig,
                val: tuple | None = None,
                on_epoch: Callable[[int, float, float | None], None] | None = None) -> TrainResult:
    """Mini-batch training on the MSE loss.

    With ``val = (inputs, targets)`` the mean-over-horizon validation RMSE is
    monitored; training stops after ``patience`` epochs without improvement
    and the best weights are restored.
    """
    inputs = inputs if isinstance(inputs, tuple) else (inputs,)
    opt = make_optimizer(config)
    n = len(targets)
    if n == 0:
        raise ConfigurationError("no training samples")
    losses, vals = [], []
    best = (np.inf, -1, None)
    stale = 0
    epoch = -1
    for epoch in range(config.epochs):
        order = batch_order(n, config.seed, epoch)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            out = net.forward(*_take(inputs, idx))
            loss, dout = mse_loss(out, targets[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, batch starting {s} "
                    f"(lr={config.learning_rate}, optimizer={config.optimizer})")
            net.backward(dout)
            opt.step(net.params, net.grads)
            total += loss * len(idx)
        losses.append(total / n)
        vr = None
        if val is not None:
            vin = val[0] if isinstance(val[0], tuple) else (val[0],)
            vr = horizon_rmse(predict_batched(net, vin), val[1])
            vals.append(vr)
            if vr < best[0]:
                best = (vr, epoch, copy.deepcopy(net.params))
                stale = 0
            else:
                stale += 1
        if on_epoch:
            on_epoch(epoch, losses[-1], vr)
        if val is not None and stale >= config.patience:
            break
    if best[2] is not None:
        for k, v in best[2].items():
            net.params[k][...] = v
    log.debug("trained %d epochs, best epoch %d", epoch + 1, best[1])
    return TrainResult(epoch + 1, best[1] if val is not None else epoch, losses, vals)


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def grad_check(net: Network, inputs, eps: float = 1e-5, seed: int = 0,
               check_inputs: bool = True, max_entries: int | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The scalar objective is ``sum(out * R)`` for a fixed random ``R``. Every
    parameter entry is checked (or a seeded sample of ``max_entries`` per
    tensor), plus the inputs when ``check_inputs``.
    """
    inputs = inputs if isinstance(inputs, tuple) else (inputs,)
    inputs = tuple(np.array(a, dtype=np.float64) for a in inputs)
    rng = np.random.default_rng(seed)
    out = net.forward(*inputs)
    R = rng.normal(size=out.shape)
    input_grads = net.backward(R)
    analytic = {k: g.copy() for k, g in net.grads.items()}

    def objective() -> float:
        return float(np.sum(net.forward(*inputs) * R))

    def probe(arr: np.ndarray, grad: np.ndarray) -> float:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = objective()
            flat[i] = old - eps
            down = objective()
            flat[i] = old
            num[j] = (up - down) / (2 * eps)
        return relative_error(gflat[idx], num)

    worst = 0.0
    for k, p in net.params.items():
        worst = max(worst, probe(p, analytic[k]))
    if check_inputs:
        for a, g in zip(inputs, input_grads):
            if g is not None:
                worst = max(worst, probe(a, g))
    return worst

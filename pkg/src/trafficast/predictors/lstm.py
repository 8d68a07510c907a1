"""Per-link recurrent forecaster over the most recent observations."""
from __future__ import annotations

import dataclasses

import numpy as np

from ..errors import ValidationError
from ..features import check_no_leakage, context_features, dataset_origins, future_targets, WindowParams
from ..numkernel import LSTMNet, TrainConfig, TrainResult, fit_network, predict_batched
from ..roadnet import SeriesSet
from .base import Predictor, Scaler, derived_seed
from .common import fit_scaler, pack_params, unpack_params

LSTM_DEFAULTS = dict(batch_size=50, learning_rate=0.002, weight_decay=0.0002, epochs=40, patience=10)


def lstm_sequences(sset: SeriesSet, link: int, origins: np.ndarray, steps: int, scaler: Scaler) -> np.ndarray:
    """(n_origins, steps, 5): scaled speed plus the 4 context values of each step's own time."""
    origins = np.asarray(origins, dtype=np.int64)
    offsets = np.arange(-steps + 1, 1)
    check_no_leakage(origins, offsets)
    idx = origins[:, None] + offsets[None, :]
    if idx.size and idx.min() < 0:
        raise ValidationError(f"origin {origins.min()} lacks {steps - 1} steps of history")
    speed = scaler.forward(sset.series[link].values[idx])
    ctx = context_features(sset.axis, idx.reshape(-1)).reshape(idx.shape + (4,))
    return np.concatenate([speed[..., None], ctx], axis=-1)


class LSTMModel(Predictor):
    kind = "lstm"

    def __init__(self, link: int, steps: int, h: int, scaler: Scaler, net: LSTMNet, hidden: int, n_layers: int):
        self.links = [link]
        self.steps = steps
        self.h = h
        self.scaler = scaler
        self.net = net
        self.hidden = hidden
        self.n_layers = n_layers
        self.train_result: TrainResult | None = None

    @classmethod
    def fit(cls, train: SeriesSet, link: int, *, steps: int = 24, h: int = 12, hidden: int = 192,
            n_layers: int = 2, config: TrainConfig | None = None, time_range=None, val_range=None,
            seed: int = 0) -> "LSTMModel":
        config = config or TrainConfig(**LSTM_DEFAULTS)
        seed = derived_seed(seed, link)
        time_range = time_range or (0, train.axis.count)
        scaler = fit_scaler(train, [link], time_range)
        net = LSTMNet(5, hidden, n_layers, h, np.random.default_rng(seed))
        model = cls(link, steps, h, scaler, net, hidden, n_layers)
        # same origin grid as the windowed models so every method sees the same samples
        params = WindowParams(steps, 8, 4)
        values = train.series[link].values

        def samples(rng):
            o = dataset_origins(rng, h, params)
            return lstm_sequences(train, link, o, steps, scaler), scaler.forward(future_targets(values, o, h))

        X, Y = samples(time_range)
        val = samples(val_range) if val_range is not None else None
        model.train_result = fit_network(net, X, Y, dataclasses.replace(config, seed=seed), val=val)
        return model

    def input_offsets(self) -> np.ndarray:
        return np.arange(-self.steps + 1, 1)

    def predict_sequences(self, seqs: np.ndarray) -> np.ndarray:
        """Scaled input sequences (n, steps, 5) -> speeds (n, h)."""
        return self.scaler.inverse(predict_batched(self.net, (np.asarray(seqs, dtype=np.float64),), 512))

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        origins = self._check_origins(sset, origins)
        return self.predict_sequences(lstm_sequences(sset, self.links[0], origins, self.steps, self.scaler))[None]

    def hyper(self) -> dict:
        return {"link": self.links[0], "steps": self.steps, "h": self.h, "hidden": self.hidden,
                "n_layers": self.n_layers, "scaler": [self.scaler.mean, self.scaler.std]}

    def arrays(self) -> dict[str, np.ndarray]:
        return pack_params(self.net.params)

    @classmethod
    def restore(cls, hyper, arrays):
        net = LSTMNet(5, hyper["hidden"], hyper["n_layers"], hyper["h"], np.random.default_rng(0))
        unpack_params(net.params, arrays)
        return cls(hyper["link"], hyper["steps"], hyper["h"], Scaler(*hyper["scaler"]), net,
                   hyper["hidden"], hyper["n_layers"])


def fit_lstm(train: SeriesSet, link: int, spec: dict | None = None) -> LSTMModel:
    return LSTMModel.fit(train, link, **(spec or {}))


def predict_lstm(model: LSTMModel, recent: np.ndarray, context: np.ndarray) -> np.ndarray:
    """``recent``: the last ``steps`` speeds (oldest first); ``context``: (steps, 4) matching encodings."""
    recent = np.asarray(recent, dtype=np.float64)
    context = np.asarray(context, dtype=np.float64)
    if recent.shape != (model.steps,) or context.shape != (model.steps, 4):
        raise ValidationError(f"need {model.steps} speeds and a ({model.steps}, 4) context block")
    seq = np.concatenate([model.scaler.forward(recent)[:, None], context], axis=1)
    return model.predict_sequences(seq[None])[0]

"""Dense forecasters: one per link (MLP), one for the whole network (B-MLP)
and one per cluster (C-MLP). All map a stacked feature row to h speeds."""
from __future__ import annotations

import dataclasses
import logging
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from ..features import CMLP_WINDOWS, DEFAULT_WINDOWS, WindowParams, stacked_features
from ..numkernel import MLPNet, TrainConfig, TrainResult, fit_network, predict_batched
from ..roadnet import SeriesSet
from ..wavelet import ClusterAssignment
from .base import Predictor, Scaler, derived_seed
from .common import (datasets, fit_scaler, pack_params, scale_rows, unpack_params,
                     window_dict, window_from)

log = logging.getLogger(__name__)

MLP_DEFAULTS = dict(batch_size=150, learning_rate=0.0005, weight_decay=0.0002, epochs=200, patience=10)
CMLP_DEFAULTS = dict(MLP_DEFAULTS, batch_size=100, epochs=80)
HIDDEN = 64


class DenseForecaster(Predictor):
    """Shared body of the three dense kinds; weights are shared by every covered link."""

    default_layers = 5

    def __init__(self, links: Sequence[int], params: WindowParams, h: int, scaler: Scaler,
                 net: MLPNet, extra: dict | None = None):
        self.links = list(links)
        self.params = params
        self.h = h
        self.scaler = scaler
        self.net = net
        self.extra = extra or {}
        self.train_result: TrainResult | None = None

    @classmethod
    def build(cls, links, params: WindowParams, h: int, scaler: Scaler, hidden: int, n_layers: int,
              seed: int, extra: dict | None = None):
        if n_layers < 1 or hidden < 1:
            raise ValidationError("n_layers and hidden must be >= 1")
        sizes = [params.n_features] + [hidden] * (n_layers - 1) + [h]
        net = MLPNet(sizes, np.random.default_rng(seed))
        return cls(links, params, h, scaler, net, extra)

    @classmethod
    def _fit(cls, train: SeriesSet, links, *, params: WindowParams, h: int, hidden: int, n_layers: int,
             config: TrainConfig, time_range, val_range, seed: int, extra=None):
        time_range = time_range or (0, train.axis.count)
        scaler = fit_scaler(train, links, time_range)
        model = cls.build(links, params, h, scaler, hidden, n_layers, seed, extra)
        tr, va = datasets(train, links, params, h, time_range, val_range)
        X, Y = tr.flat()
        val = None
        if va is not None:
            vx, vy = va.flat()
            val = (scale_rows(vx, scaler, params), scaler.forward(vy))
        config = dataclasses.replace(config, seed=seed)
        model.train_result = fit_network(model.net, scale_rows(X, scaler, params), scaler.forward(Y),
                                         config, val=val)
        log.debug("%s %s: %d epochs", cls.kind, links if len(links) < 4 else f"{len(links)} links",
                  model.train_result.epochs_run)
        return model

    def input_offsets(self) -> np.ndarray:
        return self.params.offsets()

    def predict_rows(self, rows: np.ndarray) -> np.ndarray:
        """Forecast from raw stacked feature rows (..., n_features) -> (..., h)."""
        rows = np.asarray(rows, dtype=np.float64)
        flat = rows.reshape(-1, rows.shape[-1])
        out = predict_batched(self.net, (scale_rows(flat, self.scaler, self.params),))
        return self.scaler.inverse(out).reshape(rows.shape[:-1] + (self.h,))

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        origins = self._check_origins(sset, origins)
        return self.predict_rows(stacked_features(sset, self.links, origins, self.params))

    def hyper(self) -> dict:
        return {"links": self.links, "h": self.h, "windows": window_dict(self.params),
                "sizes": self.net.sizes, "scaler": [self.scaler.mean, self.scaler.std], **self.extra}

    def arrays(self) -> dict[str, np.ndarray]:
        return pack_params(self.net.params)

    @classmethod
    def restore(cls, hyper, arrays):
        sizes = hyper["sizes"]
        net = MLPNet(sizes, np.random.default_rng(0))
        unpack_params(net.params, arrays)
        extra = {k: v for k, v in hyper.items() if k not in ("links", "h", "windows", "sizes", "scaler")}
        return cls(hyper["links"], window_from(hyper["windows"]), hyper["h"], Scaler(*hyper["scaler"]),
                   net, extra)


class MLPModel(DenseForecaster):
    kind = "mlp"

    @classmethod
    def fit(cls, train: SeriesSet, link: int, *, params: WindowParams = DEFAULT_WINDOWS, h: int = 12,
            hidden: int = HIDDEN, n_layers: int = 5, config: TrainConfig | None = None,
            time_range=None, val_range=None, seed: int = 0) -> "MLPModel":
        config = config or TrainConfig(**MLP_DEFAULTS)
        return cls._fit(train, [link], params=params, h=h, hidden=hidden, n_layers=n_layers, config=config,
                        time_range=time_range, val_range=val_range, seed=derived_seed(seed, link))


class BMLPModel(DenseForecaster):
    """One weight set applied to every link's own feature row, trained on all links pooled."""

    kind = "bmlp"

    @classmethod
    def fit(cls, train: SeriesSet, links: Sequence[int] | None = None, *,
            params: WindowParams = DEFAULT_WINDOWS, h: int = 12, hidden: int = HIDDEN, n_layers: int = 10,
            config: TrainConfig | None = None, time_range=None, val_range=None, seed: int = 0) -> "BMLPModel":
        config = config or TrainConfig(**MLP_DEFAULTS)
        links = train.link_ids if links is None else list(links)
        return cls._fit(train, links, params=params, h=h, hidden=hidden, n_layers=n_layers, config=config,
                        time_range=time_range, val_range=val_range, seed=seed)


class CMLPModel(DenseForecaster):
    """The model of one cluster; scoring is univariate per member link."""

    kind = "cmlp"

    @property
    def cluster(self) -> int:
        return int(self.extra.get("cluster", 0))


def fit_cmlp_models(train: SeriesSet, clusters: ClusterAssignment, *, params: WindowParams = CMLP_WINDOWS,
                    h: int = 12, hidden: int = HIDDEN, n_layers: int = 5, config: TrainConfig | None = None,
                    time_range=None, val_range=None, seed: int = 0) -> dict[int, CMLPModel]:
    config = config or TrainConfig(**CMLP_DEFAULTS)
    out = {}
    for c in range(clusters.K):
        links = sorted(l for l in clusters.members(c) if l in train.series)
        if not links:
            raise ValidationError(f"cluster {c} has no links")
        out[c] = CMLPModel._fit(train, links, params=params, h=h, hidden=hidden, n_layers=n_layers,
                                config=config, time_range=time_range, val_range=val_range,
                                seed=derived_seed(seed, c), extra={"cluster": c})
    return out


class ClusterForecaster:
    """Routes each link to its cluster's model (not itself a model)."""

    def __init__(self, models: dict[int, CMLPModel]):
        self.models = models
        self.links = sorted(l for m in models.values() for l in m.links)
        self.h = next(iter(models.values())).h
        self._owner = {l: m for m in models.values() for l in m.links}

    def input_offsets(self) -> np.ndarray:
        return next(iter(self.models.values())).input_offsets()

    def predict(self, sset: SeriesSet, origins: np.ndarray, links: Sequence[int] | None = None) -> np.ndarray:
        links = self.links if links is None else list(links)
        out = []
        for l in links:
            m = self._owner[l]
            rows = stacked_features(sset, [l], np.asarray(origins), m.params)
            out.append(m.predict_rows(rows)[0])
        return np.stack(out)


def fit_mlp(train: SeriesSet, link: int, spec: dict | None = None) -> MLPModel:
    return MLPModel.fit(train, link, **(spec or {}))


def predict_mlp(model: DenseForecaster, features) -> np.ndarray:
    """``features`` is a FeatureVector or stacked rows."""
    rows = features.stacked() if hasattr(features, "stacked") else features
    return model.predict_rows(rows)


def fit_bmlp(train: SeriesSet, spec: dict | None = None) -> BMLPModel:
    return BMLPModel.fit(train, **(spec or {}))


def predict_bmlp(model: BMLPModel, rows: np.ndarray) -> np.ndarray:
    """Stacked rows for all links (N, n_features) -> (N, h)."""
    return model.predict_rows(rows)


def fit_cmlp(train: SeriesSet, clusters: ClusterAssignment, spec: dict | None = None) -> dict[int, CMLPModel]:
    return fit_cmlp_models(train, clusters, **(spec or {}))

"""Helpers shared by the neural predictors: scaling, sample assembly, parameter packing."""
from __future__ import annotations

import numpy as np

from ..features import DEFAULT_WINDOWS, SupervisedDataset, WindowParams, build_dataset
from ..numkernel import TrainConfig
from ..roadnet import SeriesSet
from .base import Scaler


def scale_rows(features: np.ndarray, scaler: Scaler, params: WindowParams) -> np.ndarray:
    """Scale the speed columns of stacked feature rows; context columns pass through."""
    out = np.array(features, dtype=np.float64, copy=True)
    out[..., :params.n_speed] = scaler.forward(out[..., :params.n_speed])
    return out


def fit_scaler(train: SeriesSet, links, time_range: tuple[int, int]) -> Scaler:
    lo, hi = time_range
    return Scaler.fit(train.matrix(list(links))[:, lo:hi])


def datasets(sset: SeriesSet, links, params: WindowParams, h: int, time_range: tuple[int, int],
             val_range: tuple[int, int] | None, neighbors=None) -> tuple[SupervisedDataset, SupervisedDataset | None]:
    """Training samples have origin and targets inside ``time_range``; validation
    samples likewise inside ``val_range`` (their windows may reach back into training data)."""
    train = build_dataset(sset, time_range, params, h, links, neighbors=neighbors)
    val = None
    if val_range is not None:
        val = build_dataset(sset, val_range, params, h, links, neighbors=neighbors)
    return train, val


def train_config(config: TrainConfig | None, **defaults) -> TrainConfig:
    """``config`` if given, else a config with the method's defaults."""
    return config if config is not None else TrainConfig(**defaults)


def config_dict(config: TrainConfig) -> dict:
    return dict(vars(config))


def window_dict(params: WindowParams) -> dict:
    return {"w_n": params.w_n, "w_d": params.w_d, "w_w": params.w_w}


def window_from(d: dict) -> WindowParams:
    return WindowParams(int(d["w_n"]), int(d["w_d"]), int(d["w_w"])) if d else DEFAULT_WINDOWS


def pack_params(params: dict[str, np.ndarray], prefix: str = "p.") -> dict[str, np.ndarray]:
    return {prefix + k: v for k, v in params.items()}


def unpack_params(target: dict[str, np.ndarray], arrays: dict[str, np.ndarray], prefix: str = "p.") -> None:
    for k in target:
        target[k][...] = arrays[prefix + k]

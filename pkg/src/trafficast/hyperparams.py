"""Default hyperparameters of every method and their translation into fit arguments.

Blocks are flat dictionaries so they map one-to-one onto TOML tables.
"""
from __future__ import annotations

from .errors import ConfigurationError
from .features import WindowParams
from .numkernel import TrainConfig

_TRAIN_KEYS = ("batch_size", "learning_rate", "weight_decay", "epochs", "patience", "optimizer")

METHOD_DEFAULTS: dict[str, dict] = {
    "baseline": {},
    "ar": {"p": 28},
    "gb": {"n_trees": 200, "max_depth": 5, "learning_rate": 0.1, "n_lags": 16},
    "mlp": {"w_n": 24, "w_d": 8, "w_w": 4, "hidden": 64, "n_layers": 5, "batch_size": 150,
            "learning_rate": 0.0005, "weight_decay": 0.0002, "epochs": 200, "patience": 10, "optimizer": "adam"},
    "lstm": {"steps": 24, "hidden": 192, "n_layers": 2, "batch_size": 50, "learning_rate": 0.002,
             "weight_decay": 0.0002, "epochs": 40, "patience": 10, "optimizer": "adam"},
    "bmlp": {"w_n": 24, "w_d": 8, "w_w": 4, "hidden": 64, "n_layers": 10, "batch_size": 150,
             "learning_rate": 0.0005, "weight_decay": 0.0002, "epochs": 200, "patience": 10, "optimizer": "adam"},
    "cmlp": {"w_n": 16, "w_d": 8, "w_w": 4, "hidden": 64, "n_layers": 5, "batch_size": 100,
             "learning_rate": 0.0005, "weight_decay": 0.0002, "epochs": 80, "patience": 10, "optimizer": "adam",
             "k_max": 50, "n_clusters": 0},
    "gcnn": {"w_n": 24, "w_d": 8, "w_w": 4, "k": 5, "batch_size": 150, "learning_rate": 0.0005,
             "weight_decay": 0.0002, "epochs": 70, "patience": 10, "optimizer": "adam", "share_first": False,
             "kernels_n": [5, 4, 3, 2, 2], "kernels_d": [3, 2, 2, 2, 2], "kernels_w": [2, 2, 2, 2, 2],
             "kernels_common": [5, 4, 3, 2]},
}


def merged(method: str, overrides: dict | None = None) -> dict:
    """Defaults of ``method`` updated with ``overrides``; unknown keys are rejected."""
    if method not in METHOD_DEFAULTS:
        raise ConfigurationError(f"unknown method {method!r}")
    base = dict(METHOD_DEFAULTS[method])
    for key, value in (overrides or {}).items():
        if key not in base:
            raise ConfigurationError(f"unknown {method} hyperparameter {key!r}")
        base[key] = value
    return base


def fit_kwargs(method: str, block: dict | None = None, h: int = 12) -> dict:
    """Keyword arguments for the method's ``fit`` (sampling and clustering keys excluded)."""
    b = merged(method, block)
    out: dict = {"h": h} if method not in ("gb",) else {}
    if method == "baseline":
        return out
    if method == "ar":
        return {**out, "p": int(b["p"])}
    if method == "gb":
        return {k: b[k] for k in ("n_trees", "max_depth", "learning_rate", "n_lags")}
    config = TrainConfig(**{k: b[k] for k in _TRAIN_KEYS})
    out["config"] = config
    if method == "lstm":
        return {**out, "steps": int(b["steps"]), "hidden": int(b["hidden"]), "n_layers": int(b["n_layers"])}
    out["params"] = WindowParams(int(b["w_n"]), int(b["w_d"]), int(b["w_w"]))
    if method in ("mlp", "bmlp", "cmlp"):
        return {**out, "hidden": int(b["hidden"]), "n_layers": int(b["n_layers"])}
    out["k"] = int(b["k"])
    out["share_first"] = bool(b["share_first"])
    out["schedule"] = {"n": tuple(b["kernels_n"]), "d": tuple(b["kernels_d"]), "w": tuple(b["kernels_w"]),
                       "common": tuple(b["kernels_common"])}
    return out

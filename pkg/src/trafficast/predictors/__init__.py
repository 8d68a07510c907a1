"""The forecasting methods behind one contract (see :class:`Predictor`)."""
from .ar import ARModel, fit_ar, predict_ar
from .base import (METHOD_ORDER, MODEL_COUNT_CLASS, Predictor, Scaler, derived_seed, deserialize, dumps,
                   loads, model_size, serialize)
from .baseline import ContextualAverage, fit_baseline, predict_baseline
from .gb import Booster, GBForecaster, GBModel, Tree, build_tree, fit_gb, predict_gb
from .gcnn import (DEFAULT_SCHEDULE, GCNNModel, GCNNNet, GcnnArchitecture, fit_gcnn, predict_gcnn,
                   receptive_field, shape_table)
from .lstm import LSTMModel, fit_lstm, predict_lstm
from .mlp import (BMLPModel, CMLPModel, ClusterForecaster, MLPModel, fit_bmlp, fit_cmlp, fit_cmlp_models,
                  fit_mlp, predict_bmlp, predict_mlp)

__all__ = [
    "METHOD_ORDER", "MODEL_COUNT_CLASS", "Predictor", "Scaler", "derived_seed", "serialize", "deserialize",
    "dumps", "loads", "model_size",
    "ContextualAverage", "fit_baseline", "predict_baseline",
    "ARModel", "fit_ar", "predict_ar",
    "GBModel", "GBForecaster", "Booster", "Tree", "build_tree", "fit_gb", "predict_gb",
    "MLPModel", "BMLPModel", "CMLPModel", "ClusterForecaster", "fit_mlp", "predict_mlp", "fit_bmlp",
    "predict_bmlp", "fit_cmlp", "fit_cmlp_models",
    "LSTMModel", "fit_lstm", "predict_lstm",
    "GCNNModel", "GCNNNet", "GcnnArchitecture", "DEFAULT_SCHEDULE", "shape_table", "receptive_field",
    "fit_gcnn", "predict_gcnn",
]

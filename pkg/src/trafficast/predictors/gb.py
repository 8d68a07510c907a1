"""Gradient-boosted regression trees on squared loss, one model per horizon step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import ValidationError
from ..roadnet import SeriesSet
from .base import Predictor

N_LAGS = 16


@dataclass
class Tree:
    """Flat binary tree; ``left[k] == -1`` marks a leaf holding ``value[k]``.

    Samples with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            inner = self.left[node] >= 0
            if not inner.any():
                return self.value[node]
            n = node[inner]
            go_left = X[rows[inner], self.feature[n]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    @property
    def depth(self) -> int:
        def walk(k: int) -> int:
            return 0 if self.left[k] < 0 else 1 + max(walk(self.left[k]), walk(self.right[k]))
        return walk(0)


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature stable sort order, shape (F, n)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def build_tree(X: np.ndarray, r: np.ndarray, max_depth: int = 5, min_leaf: int = 2,
               order: np.ndarray | None = None) -> Tree:
    """Greedy variance-reduction regression tree fitted to ``r``."""
    X = np.asarray(X, dtype=np.float64)
    XT = np.ascontiguousarray(X.T)
    n, F = X.shape
    order = presort(X) if order is None else order
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx_sorted: np.ndarray) -> int:
        k = len(value)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(r[idx_sorted[0]].mean()))
        return k

    root = new_node(order)
    stack = [(root, order, 0)]
    go_left = np.zeros(n, dtype=bool)
    while stack:
        k, idx, depth = stack.pop()
        m = idx.shape[1]
        if depth >= max_depth or m < 2 * min_leaf:
            continue
        xs = np.take_along_axis(XT, idx, axis=1)
        ys = r[idx]
        f, p, gain = kernels.best_split(xs, ys, min_leaf)
        if f < 0 or gain <= 1e-12 * float(ys[0] @ ys[0]):
            continue
        lo, hi = xs[f, p], xs[f, p + 1]
        thr = 0.5 * (lo + hi)
        if not lo <= thr < hi:
            thr = lo
        go_left[:] = False
        go_left[idx[f, : p + 1]] = True
        member = go_left[idx]
        l_idx = idx[member].reshape(F, p + 1)
        r_idx = idx[~member].reshape(F, m - p - 1)
        feature[k], threshold[k] = int(f), float(thr)
        left[k] = new_node(l_idx)
        right[k] = new_node(r_idx)
        # depth-first, left child first
        stack.append((right[k], r_idx, depth + 1))
        stack.append((left[k], l_idx, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value))


class Booster:
    """F_m(x) = F_0 + rho * sum_i H_i(x), F_0 the target mean."""

    def __init__(self, init: float, trees: list[Tree], learning_rate: float):
        self.init = init
        self.trees = trees
        self.learning_rate = learning_rate

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, n_trees: int = 200, max_depth: int = 5,
            learning_rate: float = 0.1, min_leaf: int = 2) -> tuple["Booster", list[float]]:
        """Returns the booster and the training loss after each stage (index 0 = F_0)."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if len(y) < 2:
            raise ValidationError("gradient boosting needs at least 2 samples")
        init = float(y.mean())
        pred = np.full(len(y), init)
        order = presort(X)
        trees = []
        losses = [float(np.mean((y - pred) ** 2))]
        for _ in range(n_trees):
            resid = y - pred  # negative gradient of the squared loss (up to a factor 2)
            tree = build_tree(X, resid, max_depth, min_leaf, order)
            pred = pred + learning_rate * tree.predict(X)
            trees.append(tree)
            losses.append(float(np.mean((y - pred) ** 2)))
        return cls(init, trees, learning_rate), losses

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.full(len(X), self.init)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


def lag_features(values: np.ndarray, origins: np.ndarray, n_lags: int = N_LAGS) -> np.ndarray:
    idx = np.asarray(origins)[:, None] + np.arange(-n_lags + 1, 1)[None, :]
    return values[idx]


class GBModel(Predictor):
    """Direct model for one (link, horizon step); predicts a single speed."""

    kind = "gb"

    def __init__(self, link: int, step: int, booster: Booster, n_lags: int = N_LAGS, max_depth: int = 5):
        self.links = [link]
        self.step = step
        self.h = 1
        self.booster = booster
        self.n_lags = n_lags
        self.max_depth = max_depth

    @classmethod
    def fit(cls, train: SeriesSet, link: int, horizon_step: int, *, n_trees: int = 200,
            max_depth: int = 5, learning_rate: float = 0.1, n_lags: int = N_LAGS,
            time_range: tuple[int, int] | None = None) -> "GBModel":
        lo, hi = time_range or (0, train.axis.count)
        lo = max(lo, n_lags - 1)
        origins = np.arange(lo, hi - horizon_step)
        if origins.size < 2:
            raise ValidationError("gradient boosting needs at least 2 samples")
        values = train.series[link].values
        X = lag_features(values, origins, n_lags)
        y = values[origins + horizon_step]
        booster, _ = Booster.fit(X, y, n_trees, max_depth, learning_rate)
        return cls(link, horizon_step, booster, n_lags, max_depth)

    def input_offsets(self) -> np.ndarray:
        return np.arange(-self.n_lags + 1, 1)

    def predict_features(self, X: np.ndarray) -> np.ndarray:
        return self.booster.predict(np.asarray(X, dtype=np.float64))

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        origins = self._check_origins(sset, origins)
        X = lag_features(sset.series[self.links[0]].values, origins, self.n_lags)
        return self.predict_features(X)[None, :, None]

    def hyper(self) -> dict:
        return {"link": self.links[0], "step": self.step, "n_lags": self.n_lags,
                "max_depth": self.max_depth, "learning_rate": self.booster.learning_rate,
                "n_trees": len(self.booster.trees)}

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"init": np.array([self.booster.init])}
        for i, t in enumerate(self.booster.trees):
            out[f"t{i:04d}"] = np.stack([t.feature, t.threshold, t.left, t.right, t.value]).astype(np.float64)
        return out

    @classmethod
    def restore(cls, hyper, arrays):
        trees = []
        for i in range(hyper["n_trees"]):
            a = arrays[f"t{i:04d}"]
            trees.append(Tree(a[0].astype(np.int64), a[1].copy(), a[2].astype(np.int64),
                              a[3].astype(np.int64), a[4].copy()))
        booster = Booster(float(arrays["init"][0]), trees, hyper["learning_rate"])
        return cls(hyper["link"], hyper["step"], booster, hyper["n_lags"], hyper["max_depth"])


class GBForecaster:
    """Bundle of the h direct models of one link (not itself a model)."""

    def __init__(self, models: list[GBModel]):
        self.models = models
        self.links = models[0].links
        self.h = len(models)

    def input_offsets(self) -> np.ndarray:
        return self.models[0].input_offsets()

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        return np.concatenate([m.predict(sset, origins) for m in self.models], axis=2)


def fit_gb(train: SeriesSet, link: int, horizon_step: int, **kw) -> GBModel:
    return GBModel.fit(train, link, horizon_step, **kw)


def predict_gb(model: GBModel, features: np.ndarray) -> np.ndarray:
    return model.predict_features(np.atleast_2d(features))

"""Graph convolutional forecaster over the directed road network.

Every link carries a (2k+1)-row matrix: itself, its k nearest upstream and
its k nearest downstream links. One operator application is

    S = ReLU(conv_time(T, W) + b)          (one value row per link)
    T' = S[nbr]                             (rebuild each link's neighbour matrix)

so each application widens the receptive field by one neighbour hop. Three
branches (recent, day-lagged, week-lagged windows) run separately, are
joined along time, pass through a common stack whose last application
skips the gather, and a dense layer shared by all links maps
``[S_link, context]`` to the h forecasts.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import kernels
from ..errors import ConfigurationError, ValidationError
from ..features import (DEFAULT_WINDOWS, N_CONTEXT, WindowParams, neighbor_index, neighbor_sets,
                        stacked_features)
from ..numkernel import Network, TrainConfig, TrainResult, fit_network, predict_batched
from ..roadnet import RoadGraph, SeriesSet
from .base import Predictor, Scaler
from .common import datasets, fit_scaler, pack_params, scale_rows, unpack_params, window_dict, window_from

log = logging.getLogger(__name__)

BRANCHES = ("n", "d", "w")
DEFAULT_SCHEDULE = {"n": (5, 4, 3, 2, 2), "d": (3, 2, 2, 2, 2), "w": (2, 2, 2, 2, 2), "common": (5, 4, 3, 2)}
# Scaled speeds reach about -3 when traffic stops; the first application of each
# branch starts with this bias so its ReLU passes congested values through.
ENTRY_BIAS = 3.0
GCNN_DEFAULTS = dict(batch_size=150, learning_rate=0.0005, weight_decay=0.0002, epochs=70, patience=10)


@dataclass(frozen=True)
class ShapeStep:
    name: str
    shape: tuple[int, ...]  # per sample, batch axis omitted


@dataclass(frozen=True)
class GcnnArchitecture:
    n_links: int
    k: int = 5
    params: WindowParams = DEFAULT_WINDOWS
    h: int = 12
    schedule: dict = field(default_factory=lambda: dict(DEFAULT_SCHEDULE))
    share_first: bool = False

    @property
    def rows(self) -> int:
        return 2 * self.k + 1

    def branch_lengths(self) -> dict[str, int]:
        p = self.params
        return {"n": p.w_n, "d": 2 * p.w_d, "w": 2 * p.w_w}

    def plan(self) -> list[ShapeStep]:
        """Shape-inference dry run; raises ConfigurationError for an unusable schedule."""
        N, R = self.n_links, self.rows
        if N < 1 or self.k < 1 or self.h < 1:
            raise ConfigurationError("n_links, k and h must be >= 1")
        unknown = set(self.schedule) - {*BRANCHES, "common"}
        if unknown:
            raise ConfigurationError(f"unknown schedule entries {sorted(unknown)}")
        for name in (*BRANCHES, "common"):
            ks = self.schedule.get(name, ())
            if len(ks) < 1:
                raise ConfigurationError(f"schedule {name!r} needs at least one kernel")
            if any(int(w) != w or w < 1 for w in ks):
                raise ConfigurationError(f"schedule {name!r} has a kernel width < 1")
        steps = []
        merged = 0
        for b, T in self.branch_lengths().items():
            steps.append(ShapeStep(f"T_{b}", (N, R, T)))
            for l, width in enumerate(self.schedule[b]):
                T = T - int(width) + 1
                if T < 1:
                    raise ConfigurationError(f"branch {b!r} layer {l}: kernel {width} leaves time length {T}")
                steps.append(ShapeStep(f"{b}{l}.conv", (N, T)))
                steps.append(ShapeStep(f"{b}{l}.concat", (N, R, T)))
            merged += T
        steps.append(ShapeStep("merge", (N, R, merged)))
        T = merged
        common = self.schedule["common"]
        for l, width in enumerate(common):
            T = T - int(width) + 1
            if T < 1:
                raise ConfigurationError(f"common layer {l}: kernel {width} leaves time length {T}")
            steps.append(ShapeStep(f"c{l}.conv", (N, T)))
            if l < len(common) - 1:
                steps.append(ShapeStep(f"c{l}.concat", (N, R, T)))
        steps.append(ShapeStep("dense_in", (N, T + N_CONTEXT)))
        steps.append(ShapeStep("output", (N, self.h)))
        return steps

    @property
    def h_prime(self) -> int:
        return self.plan()[-3].shape[-1]

    def receptive_hops(self) -> int:
        """Neighbour expansions between input and output: the input gather plus every concat step."""
        return 1 + max(len(self.schedule[b]) for b in BRANCHES) + len(self.schedule["common"]) - 1


def shape_table(arch: GcnnArchitecture) -> str:
    return "\n".join(f"{s.name:<12} {'x'.join(map(str, s.shape))}" for s in arch.plan())


class GCNNNet(Network):
    """Input: scaled stacked feature rows (B, N, n_features); output (B, N, h)."""

    def __init__(self, arch: GcnnArchitecture, nbr: np.ndarray, rng: np.random.Generator):
        arch.plan()
        nbr = np.asarray(nbr, dtype=np.int64)
        if nbr.shape != (arch.n_links, arch.rows):
            raise ConfigurationError(f"neighbour index shape {nbr.shape} != {(arch.n_links, arch.rows)}")
        self.arch = arch
        self.nbr = nbr
        self.params = {}
        R, N = arch.rows, arch.n_links
        for b in BRANCHES:
            for l, width in enumerate(arch.schedule[b]):
                C = N if (l == 0 and not arch.share_first) else 1
                self._add_conv(f"{b}{l}", C, R, int(width), rng, ENTRY_BIAS if l == 0 else 0.0)
        for l, width in enumerate(arch.schedule["common"]):
            self._add_conv(f"c{l}", 1, R, int(width), rng, 0.0)
        d_in = arch.h_prime + N_CONTEXT
        self.params["out.W"] = np.zeros((d_in, arch.h))
        self.params["out.b"] = np.zeros(arch.h)
        self.grads = {}
        self._cache: dict = {}

    def _add_conv(self, name: str, C: int, R: int, width: int, rng, bias: float) -> None:
        # Delta start: every application copies the link's own row, shifted by
        # the kernel width, plus small noise. A chain of single-row ReLU
        # convolutions from a Glorot start loses the recent speeds and
        # trains very slowly; the readout starts at zero for the same reason.
        W = rng.normal(0.0, 0.01, size=(C, R, width))
        W[:, 0, -1] += 1.0
        self.params[f"{name}.W"] = W
        self.params[f"{name}.b"] = np.full(C, bias)

    def _op(self, name: str, S: np.ndarray) -> np.ndarray:
        """Gather each link's neighbour rows of ``S`` (B, N, T), convolve, ReLU."""
        z = kernels.graph_conv_forward(S, self.nbr, self.params[f"{name}.W"], self.params[f"{name}.b"])
        self._cache[name] = (S, z)
        return np.maximum(z, 0.0)

    def _op_backward(self, name: str, dy: np.ndarray) -> np.ndarray:
        S, z = self._cache[name]
        dS, dW, db = kernels.graph_conv_backward(S, self.nbr, self.params[f"{name}.W"], dy * (z > 0))
        self.grads[f"{name}.W"], self.grads[f"{name}.b"] = dW, db
        return dS

    # The gather that rebuilds the neighbour matrices after an application is
    # folded into the next application's convolution, so every tensor kept
    # here is (B, N, T) and the (2k+1)-row tensors are never materialised.

    def forward(self, features: np.ndarray) -> np.ndarray:
        arch = self.arch
        features = np.asarray(features, dtype=np.float64)
        s_w, s_d, s_n, s_c = arch.params.slices()
        outs = []
        for b, sl in zip(BRANCHES, (s_n, s_d, s_w)):
            x = np.ascontiguousarray(features[..., sl])
            for l in range(len(arch.schedule[b])):
                x = self._op(f"{b}{l}", x)
            outs.append(x)
        x = np.concatenate(outs, axis=-1)
        for l in range(len(arch.schedule["common"])):
            x = self._op(f"c{l}", x)
        D = np.concatenate([x, features[..., s_c]], axis=-1)
        self._cache["dense"] = D
        self._cache["splits"] = [o.shape[-1] for o in outs]
        self._cache["features_shape"] = features.shape
        return D @ self.params["out.W"] + self.params["out.b"]

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, ...]:
        arch = self.arch
        D = self._cache["dense"]
        h = arch.h
        self.grads["out.W"] = D.reshape(-1, D.shape[-1]).T @ dout.reshape(-1, h)
        self.grads["out.b"] = dout.reshape(-1, h).sum(axis=0)
        dD = dout @ self.params["out.W"].T
        hp = dD.shape[-1] - N_CONTEXT
        dx = dD[..., :hp]
        for l in reversed(range(len(arch.schedule["common"]))):
            dx = self._op_backward(f"c{l}", dx)
        s_w, s_d, s_n, s_c = arch.params.slices()
        dF = np.zeros(self._cache["features_shape"])
        bounds = np.cumsum([0] + self._cache["splits"])
        for i, (b, sl) in enumerate(zip(BRANCHES, (s_n, s_d, s_w))):
            d = dx[..., bounds[i]:bounds[i + 1]]
            for l in reversed(range(len(arch.schedule[b]))):
                d = self._op_backward(f"{b}{l}", d)
            dF[..., sl] = d
        dF[..., s_c] += dD[..., hp:]
        return (dF,)


def receptive_field(nbr: np.ndarray, link_pos: int, hops: int) -> set[int]:
    """Positions whose inputs can reach ``link_pos`` through ``hops`` neighbour gathers."""
    reach = {link_pos}
    for _ in range(hops):
        reach = reach | {int(j) for i in reach for j in nbr[i]}
    return reach


def restrict_graph(graph: RoadGraph, links: Sequence[int]) -> RoadGraph:
    keep = set(links)
    return RoadGraph([l for l in graph.links if l.link_id in keep])


class GCNNModel(Predictor):
    kind = "gcnn"

    def __init__(self, links: Sequence[int], arch: GcnnArchitecture, nbr: np.ndarray, scaler: Scaler, net: GCNNNet):
        self.links = list(links)
        self.arch = arch
        self.nbr = np.asarray(nbr, dtype=np.int64)
        self.params = arch.params
        self.h = arch.h
        self.scaler = scaler
        self.net = net
        self.train_result: TrainResult | None = None

    @classmethod
    def fit(cls, train: SeriesSet, graph: RoadGraph, *, k: int = 5, params: WindowParams = DEFAULT_WINDOWS,
            h: int = 12, schedule: dict | None = None, share_first: bool = False,
            config: TrainConfig | None = None, time_range=None, val_range=None, seed: int = 0) -> "GCNNModel":
        config = config or TrainConfig(**GCNN_DEFAULTS)
        links = [l for l in train.link_ids if l in graph]
        if not links:
            raise ValidationError("no series-set link is in the graph")
        neighbors = neighbor_sets(restrict_graph(graph, links), k)
        nbr = neighbor_index(neighbors, links)
        arch = GcnnArchitecture(len(links), k, params, h, dict(schedule or DEFAULT_SCHEDULE), share_first)
        log.info("gcnn shape plan:\n%s", shape_table(arch))
        time_range = time_range or (0, train.axis.count)
        scaler = fit_scaler(train, links, time_range)
        net = GCNNNet(arch, nbr, np.random.default_rng(seed))
        model = cls(links, arch, nbr, scaler, net)
        tr, va = datasets(train, links, params, h, time_range, val_range)
        val = None
        if va is not None:
            val = (scale_rows(va.features, scaler, params), scaler.forward(va.targets))
        model.train_result = fit_network(net, scale_rows(tr.features, scaler, params), scaler.forward(tr.targets),
                                         dataclasses.replace(config, seed=seed), val=val)
        return model

    def input_offsets(self) -> np.ndarray:
        return self.params.offsets()

    def predict_rows(self, rows: np.ndarray) -> np.ndarray:
        """Raw stacked rows (n, N, n_features) for all links -> (n, N, h)."""
        rows = scale_rows(rows, self.scaler, self.params)
        return self.scaler.inverse(predict_batched(self.net, (rows,), 256))

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        origins = self._check_origins(sset, origins)
        rows = stacked_features(sset, self.links, origins, self.params).transpose(1, 0, 2)
        return self.predict_rows(rows).transpose(1, 0, 2)

    def hyper(self) -> dict:
        a = self.arch
        return {"links": self.links, "k": a.k, "h": a.h, "windows": window_dict(a.params),
                "schedule": {b: list(v) for b, v in a.schedule.items()}, "share_first": a.share_first,
                "scaler": [self.scaler.mean, self.scaler.std]}

    def arrays(self) -> dict[str, np.ndarray]:
        return {"nbr": self.nbr.astype(np.float64), **pack_params(self.net.params)}

    @classmethod
    def restore(cls, hyper, arrays):
        arch = GcnnArchitecture(len(hyper["links"]), hyper["k"], window_from(hyper["windows"]), hyper["h"],
                                {b: tuple(v) for b, v in hyper["schedule"].items()}, hyper["share_first"])
        nbr = arrays["nbr"].astype(np.int64)
        net = GCNNNet(arch, nbr, np.random.default_rng(0))
        unpack_params(net.params, arrays)
        return cls(hyper["links"], arch, nbr, Scaler(*hyper["scaler"]), net)


def fit_gcnn(train: SeriesSet, graph: RoadGraph, spec: dict | None = None) -> GCNNModel:
    return GCNNModel.fit(train, graph, **(spec or {}))


def predict_gcnn(model: GCNNModel, batch) -> np.ndarray:
    """Forecast every link from one :class:`GcnnTensorBatch`; returns (N, h).

    The batch tensors are the neighbour expansion of the links' own rows, so
    the self rows (row 0) are used to rebuild the stacked features.
    """
    p = model.params
    N = batch.T_n.shape[-3]
    rows = np.empty((N, p.n_features))
    s_w, s_d, s_n, s_c = p.slices()
    rows[:, s_n] = batch.T_n[:, 0]
    rows[:, s_d] = batch.T_d[:, 0]
    rows[:, s_w] = batch.T_w[:, 0]
    rows[:, s_c] = batch.context
    return model.predict_rows(rows[None])[0]

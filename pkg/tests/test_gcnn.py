import time

import numpy as np
import pytest

from trafficast.errors import ConfigurationError
from trafficast.features import WindowParams, build_gcnn_tensors, neighbor_index, neighbor_sets
from trafficast.numkernel import TrainConfig, grad_check
from trafficast.predictors import GCNNModel, deserialize, fit_gcnn, predict_gcnn, serialize
from trafficast.predictors.base import Scaler
from trafficast.predictors.gcnn import (
    DEFAULT_SCHEDULE, GCNNNet, GcnnArchitecture, receptive_field, restrict_graph, shape_table,
)
from trafficast.roadnet import LinkRecord, RoadGraph

from conftest import chain_graph

W = 672
TINY = {"n": (2, 2), "d": (2,), "w": (2,), "common": (2, 1)}


def expected_plan(N, k, w_n, w_d, w_w, h, schedule):
    """Shape algebra written out independently of the implementation."""
    R = 2 * k + 1
    out = {}
    ends = []
    for b, T in (("n", w_n), ("d", 2 * w_d), ("w", 2 * w_w)):
        out[f"T_{b}"] = (N, R, T)
        for l, width in enumerate(schedule[b]):
            T -= width - 1
            out[f"{b}{l}.conv"] = (N, T)
            out[f"{b}{l}.concat"] = (N, R, T)
        ends.append(T)
    T = sum(ends)
    out["merge"] = (N, R, T)
    for l, width in enumerate(schedule["common"]):
        T -= width - 1
        out[f"c{l}.conv"] = (N, T)
        if l < len(schedule["common"]) - 1:
            out[f"c{l}.concat"] = (N, R, T)
    out["dense_in"] = (N, T + 4)
    out["output"] = (N, h)
    return out


def test_full_network_dry_run():
    t0 = time.perf_counter()
    arch = GcnnArchitecture(1098, 5, WindowParams(24, 8, 4), 12)
    plan = {s.name: s.shape for s in arch.plan()}
    assert time.perf_counter() - t0 < 1.0
    assert plan["T_n"] == (1098, 11, 24)
    assert plan["T_d"] == (1098, 11, 16)
    assert plan["T_w"] == (1098, 11, 8)
    assert plan == expected_plan(1098, 5, 24, 8, 4, 12, DEFAULT_SCHEDULE)
    assert arch.h_prime == 16
    assert len(arch.schedule["n"]) + len(arch.schedule["common"]) == 9


def test_shape_table_lists_every_step():
    arch = GcnnArchitecture(4, 1, WindowParams(4, 2, 2), 3, TINY)
    table = shape_table(arch)
    assert table.splitlines()[0].split() == ["T_n", "4x3x4"]
    assert len(table.splitlines()) == len(arch.plan())


@pytest.mark.parametrize("schedule", [
    {"n": (30,), "d": (2,), "w": (2,), "common": (1,)},          # longer than w_n
    {"n": (2,), "d": (2,), "w": (2,), "common": (50,)},           # common stack too deep
    {"n": (), "d": (2,), "w": (2,), "common": (1,)},              # empty branch
    {"n": (2,), "d": (0,), "w": (2,), "common": (1,)},            # zero width
    {"n": (2,), "d": (2,), "w": (2,), "common": (1,), "x": (1,)},  # unknown entry
])
def test_bad_schedules_fail_before_training(schedule):
    with pytest.raises(ConfigurationError):
        GcnnArchitecture(10, 2, WindowParams(24, 8, 4), 12, schedule).plan()


def _toy_net(seed=0, share_first=False):
    g = chain_graph(4)
    nbr = neighbor_index(neighbor_sets(g, 1), g.link_ids)
    arch = GcnnArchitecture(4, 1, WindowParams(4, 2, 2), 3, TINY, share_first)
    rng = np.random.default_rng(seed)
    net = GCNNNet(arch, nbr, rng)
    # generic weights, so every path carries gradient; non-zero biases keep
    # pre-activations away from the ReLU kink at 0
    for k, p in net.params.items():
        p[...] = rng.normal(scale=0.1 if k.endswith(".b") else 0.5, size=p.shape)
    return net, arch, rng


@pytest.mark.parametrize("share_first", [False, True])
def test_toy_gradient_check(share_first):
    net, arch, rng = _toy_net(share_first=share_first)
    x = rng.normal(size=(3, 4, arch.params.n_features))
    assert grad_check(net, x) < 1e-5


def test_zero_weights_give_the_bias(rng):
    net, arch, _ = _toy_net()
    for p in net.params.values():
        p[...] = 0.0
    net.params["out.b"][...] = [1.0, -2.0, 0.5]
    out = net.forward(rng.normal(size=(2, 4, arch.params.n_features)))
    np.testing.assert_array_equal(out, np.broadcast_to([1.0, -2.0, 0.5], (2, 4, 3)))


def test_first_layer_is_per_link_unless_shared():
    net, _, _ = _toy_net()
    assert net.params["n0.W"].shape == (4, 3, 2)
    assert net.params["n1.W"].shape == (1, 3, 2)
    shared, _, _ = _toy_net(share_first=True)
    assert shared.params["n0.W"].shape == (1, 3, 2)


def _randomize(net, rng):
    for k, p in net.params.items():
        p[...] = rng.normal(scale=0.1 if k.endswith(".b") else 0.5, size=p.shape)
        if k.endswith(".b") and not k.startswith("out"):
            p[...] += 1.0  # mostly active ReLUs, so influence propagates


def test_locality_of_the_receptive_field(rng):
    # 12-link chain, k=1: each application reaches one more hop
    g = chain_graph(12)
    nbr = neighbor_index(neighbor_sets(g, 1), g.link_ids)
    params = WindowParams(4, 2, 2)
    arch = GcnnArchitecture(12, 1, params, 2, TINY)
    net = GCNNNet(arch, nbr, rng)
    _randomize(net, rng)
    hops = arch.receptive_hops()
    assert hops == 1 + 2 + 2 - 1
    x = rng.normal(size=(1, 12, params.n_features))
    base = net.forward(x)
    reach = receptive_field(nbr, 0, hops)
    assert reach == set(range(hops + 1))
    for j in range(12):
        y = x.copy()
        y[0, j, :-4] += 5.0
        changed = not np.array_equal(net.forward(y)[0, 0], base[0, 0])
        assert changed == (j in reach)


def test_gradient_support_matches_receptive_field(rng):
    g = chain_graph(12)
    nbr = neighbor_index(neighbor_sets(g, 1), g.link_ids)
    arch = GcnnArchitecture(12, 1, WindowParams(4, 2, 2), 2, TINY)
    net = GCNNNet(arch, nbr, rng)
    _randomize(net, rng)
    x = rng.normal(size=(1, 12, arch.params.n_features))
    net.forward(x)
    d = np.zeros((1, 12, 2))
    d[0, 5] = 1.0
    (dx,) = net.backward(d)
    touched = set(np.flatnonzero(np.abs(dx[0, :, :-4]).sum(axis=1)).tolist())
    assert touched <= receptive_field(nbr, 5, arch.receptive_hops())
    assert {4, 5, 6} <= touched


def test_restrict_graph():
    g = chain_graph(5)
    assert restrict_graph(g, [2, 4]).link_ids == [2, 4]


@pytest.fixture(scope="module")
def fitted(small_synth):
    _, graph, sset, _ = small_synth
    model = GCNNModel.fit(sset, graph, k=2, h=4, schedule={"n": (5, 4, 3), "d": (3, 2), "w": (2, 2),
                                                          "common": (3, 2)},
                          config=TrainConfig(batch_size=100, learning_rate=0.002, epochs=2),
                          time_range=(0, 2 * W), val_range=(2 * W, 3 * W))
    return sset, graph, model


def test_fit_and_predict_shapes(fitted):
    sset, _, model = fitted
    out = model.predict(sset, np.array([2500, 2501, 2502]))
    assert out.shape == (len(sset), 3, 4)
    assert model.model_count_class == "O(1)"
    assert model.train_result.epochs_run == 2


def test_predict_gcnn_from_tensor_batch(fitted):
    sset, graph, model = fitted
    batch = build_gcnn_tensors(sset, neighbor_sets(restrict_graph(graph, model.links), 2), 2600)
    np.testing.assert_allclose(predict_gcnn(model, batch), model.predict(sset, np.array([2600]))[:, 0],
                               rtol=1e-12)


def test_gcnn_roundtrip(fitted, tmp_path, rng):
    sset, _, model = fitted
    size = serialize(model, tmp_path / "g.tfmd")
    assert size == (tmp_path / "g.tfmd").stat().st_size
    back = deserialize(tmp_path / "g.tfmd")
    origins = np.sort(rng.choice(np.arange(2 * W, sset.axis.count - 12), 100, replace=False))
    np.testing.assert_array_equal(back.predict(sset, origins), model.predict(sset, origins))


def test_links_missing_from_the_set_are_skipped(small_synth):
    _, graph, sset, _ = small_synth
    sub = sset.subset(sset.link_ids[::2])
    model = fit_gcnn(sub, graph, {"k": 1, "h": 2, "schedule": TINY, "params": WindowParams(4, 2, 2),
                                  "config": TrainConfig(epochs=1), "time_range": (0, 800)})
    assert model.links == sub.link_ids
    assert model.nbr.max() < len(sub)

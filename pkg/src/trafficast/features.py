"""Windowed features, neighbour sets and graph-convolution input tensors.

All windows are expressed as integer offsets relative to the prediction
origin ``t``; every offset is <= 0, which is what keeps test-time features
free of look-ahead.
"""
from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientHistoryError, LeakageError, ValidationError
from .roadnet import STEPS_PER_DAY, STEPS_PER_WEEK, RoadGraph, SeriesSet, TimeAxis, weekday_slots

N_CONTEXT = 4


@dataclass(frozen=True)
class WindowParams:
    w_n: int = 24
    w_d: int = 8
    w_w: int = 4

    def __post_init__(self):
        for name in ("w_n", "w_d", "w_w"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if self.w_d >= STEPS_PER_DAY or self.w_w >= STEPS_PER_DAY or self.w_n > STEPS_PER_WEEK:
            raise ValidationError("window too wide for the day/week lags")

    @property
    def n_speed(self) -> int:
        return self.w_n + 2 * self.w_d + 2 * self.w_w

    @property
    def n_features(self) -> int:
        return self.n_speed + N_CONTEXT

    def offsets(self) -> np.ndarray:
        """Offsets of ``[x_w, x_d, x_n]`` relative to the origin, in that order."""
        x_w = np.arange(-STEPS_PER_WEEK - self.w_w + 1, -STEPS_PER_WEEK + self.w_w + 1)
        x_d = np.arange(-STEPS_PER_DAY - self.w_d + 1, -STEPS_PER_DAY + self.w_d + 1)
        x_n = np.arange(-self.w_n + 1, 1)
        return np.concatenate([x_w, x_d, x_n])

    @property
    def min_origin(self) -> int:
        return int(-self.offsets().min())

    def slices(self) -> tuple[slice, slice, slice, slice]:
        """Positions of x_w, x_d, x_n and context inside a stacked feature row."""
        a = 2 * self.w_w
        b = a + 2 * self.w_d
        c = b + self.w_n
        return slice(0, a), slice(a, b), slice(b, c), slice(c, c + N_CONTEXT)


DEFAULT_WINDOWS = WindowParams(24, 8, 4)
CMLP_WINDOWS = WindowParams(16, 8, 4)


@dataclass(frozen=True)
class FeatureVector:
    x_w: np.ndarray
    x_d: np.ndarray
    x_n: np.ndarray
    context: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x_w, self.x_d, self.x_n, self.context])


def context_features(axis: TimeAxis, t: np.ndarray | int) -> np.ndarray:
    """Cyclic time-of-day and day-of-week encoding, shape (..., 4)."""
    day, slot = weekday_slots(axis, np.atleast_1d(t))
    a = 2 * np.pi * slot / STEPS_PER_DAY
    b = 2 * np.pi * day / 7
    out = np.stack([np.sin(a), np.cos(a), np.sin(b), np.cos(b)], axis=-1)
    return out[0] if np.ndim(t) == 0 else out


def check_no_leakage(origins: np.ndarray, offsets: np.ndarray) -> None:
    """Raise :class:`LeakageError` if any window index lies after its origin."""
    origins = np.asarray(origins)
    idx = origins[:, None] + np.asarray(offsets)[None, :]
    if idx.size and np.any(idx > origins[:, None]):
        bad = int(origins[np.any(idx > origins[:, None], axis=1)][0])
        raise LeakageError(f"feature window for origin {bad} reads past the origin")


def window_matrix(values: np.ndarray, origins: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Gather ``values[..., origin + offset]`` for each origin; returns (..., n_origins, n_offsets)."""
    origins = np.asarray(origins, dtype=np.int64)
    check_no_leakage(origins, offsets)
    idx = origins[:, None] + offsets[None, :]
    if idx.size and (idx.min() < 0 or idx.max() >= values.shape[-1]):
        raise InsufficientHistoryError("feature window falls outside the series")
    return values[..., idx]


def build_windows(sset: SeriesSet, link: int, t: int, params: WindowParams = DEFAULT_WINDOWS) -> FeatureVector:
    if t < params.min_origin or t >= sset.axis.count:
        raise InsufficientHistoryError(f"origin {t} needs index >= {params.min_origin}")
    row = window_matrix(sset.series[link].values, np.array([t]), params.offsets())[0]
    s_w, s_d, s_n, _ = params.slices()
    return FeatureVector(row[s_w], row[s_d], row[s_n], context_features(sset.axis, t))


@dataclass(frozen=True)
class NeighborSet:
    link_id: int
    incoming: tuple[int, ...]
    outgoing: tuple[int, ...]

    @property
    def rows(self) -> tuple[int, ...]:
        """Tensor row order: self, incoming 1..k, outgoing 1..k."""
        return (self.link_id, *self.incoming, *self.outgoing)


def _nearest(graph: RoadGraph, link: int, k: int, step) -> list[int]:
    # best-first expansion by cumulative length, ties by link id
    found: list[int] = []
    settled = {link}
    heap = [(graph.link(n).length_m, n) for n in step(link)]
    heapq.heapify(heap)
    while heap and len(found) < k:
        dist, lid = heapq.heappop(heap)
        if lid in settled:
            continue
        settled.add(lid)
        found.append(lid)
        for n in step(lid):
            if n not in settled:
                heapq.heappush(heap, (dist + graph.link(n).length_m, n))
    return found + [link] * (k - len(found))


def neighbor_sets(graph: RoadGraph, k: int = 5) -> dict[int, NeighborSet]:
    """k nearest upstream and downstream links per link, padded with the link itself."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    return {
        lid: NeighborSet(lid, tuple(_nearest(graph, lid, k, graph.upstream)),
                         tuple(_nearest(graph, lid, k, graph.downstream)))
        for lid in graph.link_ids
    }


def neighbor_index(neighbors: dict[int, NeighborSet], links: Sequence[int]) -> np.ndarray:
    """Row indices (into ``links``) of each link's (2k+1) tensor rows."""
    pos = {lid: i for i, lid in enumerate(links)}
    try:
        return np.array([[pos[r] for r in neighbors[lid].rows] for lid in links], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"link {exc.args[0]} missing from the series set or neighbour map") from exc


@dataclass(frozen=True)
class GcnnTensorBatch:
    T_n: np.ndarray
    T_d: np.ndarray
    T_w: np.ndarray
    context: np.ndarray


def gcnn_tensors(features: np.ndarray, nbr: np.ndarray, params: WindowParams) -> tuple[np.ndarray, ...]:
    """Expand per-link stacked feature rows into the three neighbour tensors.

    ``features`` is (..., N, n_features); results are (..., N, 2k+1, width)
    plus context (..., N, 4).
    """
    s_w, s_d, s_n, s_c = params.slices()
    gathered = features[..., nbr, :]  # (..., N, R, F)
    return gathered[..., s_n], gathered[..., s_d], gathered[..., s_w], features[..., s_c]


def build_gcnn_tensors(sset: SeriesSet, neighbors: dict[int, NeighborSet], t: int,
                       params: WindowParams = DEFAULT_WINDOWS) -> GcnnTensorBatch:
    links = sset.link_ids
    nbr = neighbor_index(neighbors, links)
    if t < params.min_origin or t >= sset.axis.count:
        raise InsufficientHistoryError(f"origin {t} needs index >= {params.min_origin}")
    feats = stacked_features(sset, links, np.array([t]), params)[:, 0, :]  # (N, F)
    T_n, T_d, T_w, ctx = gcnn_tensors(feats, nbr, params)
    return GcnnTensorBatch(T_n, T_d, T_w, ctx)


def stacked_features(sset: SeriesSet, links: Sequence[int], origins: np.ndarray,
                     params: WindowParams) -> np.ndarray:
    """Stacked rows ``[x_w, x_d, x_n, context]`` with shape (n_links, n_origins, n_features)."""
    values = sset.matrix(links)
    speed = window_matrix(values, origins, params.offsets())
    ctx = np.broadcast_to(context_features(sset.axis, np.asarray(origins)), (len(links), len(origins), N_CONTEXT))
    return np.concatenate([speed, ctx], axis=-1)


def future_targets(values: np.ndarray, origins: np.ndarray, h: int) -> np.ndarray:
    """``values[..., origin + 1 .. origin + h]`` -> (..., n_origins, h)."""
    idx = np.asarray(origins)[:, None] + np.arange(1, h + 1)[None, :]
    if idx.size and idx.max() >= values.shape[-1]:
        raise ValidationError("targets run past the end of the series")
    return values[..., idx]


@dataclass
class SupervisedDataset:
    """Samples in ascending origin order.

    ``features`` has shape (S, L, n_features) and ``targets`` (S, L, h);
    for a single-link dataset L == 1. ``nbr`` holds the neighbour row indices
    when the dataset feeds the graph model (k > 0).
    """

    links: list[int]
    params: WindowParams
    h: int
    origins: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    k: int = 0
    nbr: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.origins)

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Pool all links: (S*L, F) features and (S*L, h) targets, origin-major."""
        s, l, f = self.features.shape
        return self.features.reshape(s * l, f), self.targets.reshape(s * l, self.h)


def dataset_origins(time_range: tuple[int, int], h: int, params: WindowParams) -> np.ndarray:
    lo, hi = time_range
    if hi - lo <= h:
        raise ValidationError(f"time range [{lo}, {hi}) leaves no room for {h} future steps")
    lo = max(lo, params.min_origin)
    if lo >= hi - h:
        raise InsufficientHistoryError(f"no origin in [{lo}, {hi - h}) has full history")
    return np.arange(lo, hi - h)


def build_dataset(sset: SeriesSet, time_range: tuple[int, int], params: WindowParams = DEFAULT_WINDOWS,
                  h: int = 12, links: int | Iterable[int] | None = None, *,
                  neighbors: dict[int, NeighborSet] | None = None,
                  origins: np.ndarray | None = None) -> SupervisedDataset:
    """One sample per origin ``t`` in ``[lo, hi - h)`` (origin and targets inside the range).

    ``links`` may be a single link id, an iterable, or None for every link.
    Passing ``neighbors`` attaches the graph-tensor row index. Explicit
    ``origins`` override the range.
    """
    if h < 1:
        raise ValidationError("h must be >= 1")
    if links is None:
        link_list = sset.link_ids
    elif isinstance(links, (int, np.integer)):
        link_list = [int(links)]
    else:
        link_list = list(links)
    missing = [l for l in link_list if l not in sset.series]
    if missing:
        raise ValidationError(f"links not in series set: {missing}")
    if origins is None:
        origins = dataset_origins(time_range, h, params)
    origins = np.asarray(origins, dtype=np.int64)
    if not origins.size:
        raise ValidationError("empty origin range")
    feats = stacked_features(sset, link_list, origins, params).transpose(1, 0, 2)
    targ = future_targets(sset.matrix(link_list), origins, h).transpose(1, 0, 2)
    k, nbr = 0, None
    if neighbors is not None:
        nbr = neighbor_index(neighbors, link_list)
        k = (nbr.shape[1] - 1) // 2
    return SupervisedDataset(link_list, params, h, origins, np.ascontiguousarray(feats),
                             np.ascontiguousarray(targ), k, nbr)


_DS_MAGIC = b"TFDS1"


def write_dataset(ds: SupervisedDataset, path: str | Path) -> None:
    """Header (N, k, w_n, w_d, w_w, h, S as u64), then link ids, neighbour rows
    (if k > 0), origins (i64), features and targets (little-endian f64)."""
    n, s = len(ds.links), len(ds.origins)
    p = ds.params
    with open(path, "wb") as fh:
        fh.write(_DS_MAGIC)
        fh.write(struct.pack("<7Q", n, ds.k, p.w_n, p.w_d, p.w_w, ds.h, s))
        fh.write(np.asarray(ds.links, "<i8").tobytes())
        if ds.k:
            fh.write(np.asarray(ds.nbr, "<i8").tobytes())
        fh.write(np.asarray(ds.origins, "<i8").tobytes())
        fh.write(np.asarray(ds.features, "<f8").tobytes())
        fh.write(np.asarray(ds.targets, "<f8").tobytes())


def read_dataset(path: str | Path) -> SupervisedDataset:
    data = Path(path).read_bytes()
    if data[:5] != _DS_MAGIC:
        raise ValidationError(f"{path}: not a dataset file (bad magic)")
    n, k, w_n, w_d, w_w, h, s = struct.unpack_from("<7Q", data, 5)
    params = WindowParams(w_n, w_d, w_w)
    off = 5 + 56

    def take(dtype, count, shape):
        nonlocal off
        arr = np.frombuffer(data, dtype, count, off).reshape(shape)
        off += 8 * count
        return arr.copy()

    links = take("<i8", n, (n,)).tolist()
    nbr = take("<i8", n * (2 * k + 1), (n, 2 * k + 1)) if k else None
    origins = take("<i8", s, (s,))
    feats = take("<f8", s * n * params.n_features, (s, n, params.n_features))
    targ = take("<f8", s * n * h, (s, n, h))
    if off != len(data):
        raise ValidationError(f"{path}: trailing bytes in dataset file")
    return SupervisedDataset(links, params, h, origins, feats.astype(np.float64),
                             targ.astype(np.float64), k, nbr)

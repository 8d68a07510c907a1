"""Road graph, regular time axis and speed series containers."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import InsufficientHistoryError, ValidationError

STEP_SECONDS = 900
STEPS_PER_DAY = 96
STEPS_PER_WEEK = 672
SPEED_CEILING_KMH = 250.0

GRAPH_HEADER = ["link_id", "from_node", "to_node", "length_m", "free_flow_kmh"]


@dataclass(frozen=True)
class LinkRecord:
    link_id: int
    from_node: int
    to_node: int
    length_m: float
    free_flow_kmh: float


class RoadGraph:
    """Directed link graph. Each link is a road segment between two nodes.

    Links are kept sorted by ``link_id``; every lookup helper below relies on
    that ordering to stay deterministic.
    """

    def __init__(self, links: Iterable[LinkRecord]):
        links = sorted(links, key=lambda r: r.link_id)
        ids = [r.link_id for r in links]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate link ids: {dup}")
        for r in links:
            if not r.length_m > 0:
                raise ValidationError(f"link {r.link_id}: length_m must be > 0")
            if not r.free_flow_kmh > 0:
                raise ValidationError(f"link {r.link_id}: free_flow_kmh must be > 0")
        self._links = tuple(links)
        self._by_id = {r.link_id: r for r in links}
        self.nodes = frozenset(n for r in links for n in (r.from_node, r.to_node))
        out_of: dict[int, list[int]] = {}
        into: dict[int, list[int]] = {}
        for r in links:
            out_of.setdefault(r.from_node, []).append(r.link_id)
            into.setdefault(r.to_node, []).append(r.link_id)
        self._leaving_node = {k: tuple(v) for k, v in out_of.items()}
        self._entering_node = {k: tuple(v) for k, v in into.items()}

    @property
    def links(self) -> tuple[LinkRecord, ...]:
        return self._links

    @property
    def link_ids(self) -> list[int]:
        return [r.link_id for r in self._links]

    def __len__(self) -> int:
        return len(self._links)

    def __contains__(self, link_id: int) -> bool:
        return link_id in self._by_id

    def link(self, link_id: int) -> LinkRecord:
        return self._by_id[link_id]

    def upstream(self, link_id: int) -> tuple[int, ...]:
        """Links whose ``to_node`` is this link's ``from_node``."""
        return self._entering_node.get(self._by_id[link_id].from_node, ())

    def downstream(self, link_id: int) -> tuple[int, ...]:
        """Links whose ``from_node`` is this link's ``to_node``."""
        return self._leaving_node.get(self._by_id[link_id].to_node, ())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RoadGraph) and self._links == other._links


def read_graph_csv(path: str | Path) -> RoadGraph:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != GRAPH_HEADER:
            raise ValidationError(
                f"{path}: expected header {','.join(GRAPH_HEADER)}, got {reader.fieldnames}"
            )
        links = []
        for lineno, row in enumerate(reader, start=2):
            try:
                links.append(
                    LinkRecord(
                        int(row["link_id"]),
                        int(row["from_node"]),
                        int(row["to_node"]),
                        float(row["length_m"]),
                        float(row["free_flow_kmh"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad graph row ({exc})") from exc
    return RoadGraph(links)


def write_graph_csv(graph: RoadGraph, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRAPH_HEADER)
        for r in graph.links:
            writer.writerow([r.link_id, r.from_node, r.to_node, repr(r.length_m), repr(r.free_flow_kmh)])


def _utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class TimeAxis:
    """Regular 15-minute axis: index ``t`` maps to ``start + t * 900 s``."""

    start: datetime
    count: int
    step: int = STEP_SECONDS

    def __post_init__(self):
        start = _utc(self.start)
        object.__setattr__(self, "start", start)
        if self.step != STEP_SECONDS:
            raise ValidationError(f"time step must be {STEP_SECONDS} s, got {self.step}")
        if self.count < 0:
            raise ValidationError("count must be non-negative")
        if start.second or start.microsecond or start.minute % 15:
            raise ValidationError(f"axis start {start.isoformat()} is not on a 15-minute boundary")

    @property
    def start_epoch(self) -> int:
        return int(self.start.timestamp())

    def timestamp(self, t: int) -> datetime:
        self._check(t)
        return self.start + timedelta(seconds=t * self.step)

    def index(self, ts: datetime) -> int:
        offset = (_utc(ts) - self.start).total_seconds()
        t, rem = divmod(offset, self.step)
        if rem:
            raise ValidationError(f"{ts.isoformat()} is not on the axis grid")
        t = int(t)
        self._check(t)
        return t

    def epoch_seconds(self) -> np.ndarray:
        return self.start_epoch + self.step * np.arange(self.count, dtype=np.int64)

    def _check(self, t: int) -> None:
        if not 0 <= t < self.count:
            raise IndexError(f"time index {t} outside [0, {self.count})")

    def slice(self, lo: int, hi: int) -> "TimeAxis":
        if not 0 <= lo <= hi <= self.count:
            raise IndexError(f"bad axis slice [{lo}, {hi})")
        return TimeAxis(self.start + timedelta(seconds=lo * self.step), hi - lo)


def weekday_slot(t: int, axis: TimeAxis) -> tuple[int, int]:
    """Return ``(day_of_week, slot_of_day)`` with Sunday = 0 and 96 slots per day."""
    ts = axis.timestamp(t)
    day = (ts.weekday() + 1) % 7
    slot = (ts.hour * 60 + ts.minute) // 15
    return day, slot


def weekday_slots(axis: TimeAxis, t: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`weekday_slot` over an index array (default: whole axis)."""
    if t is None:
        t = np.arange(axis.count)
    t = np.asarray(t, dtype=np.int64)
    if t.size and (t.min() < 0 or t.max() >= axis.count):
        raise IndexError("time index outside axis")
    first_day, first_slot = weekday_slot(0, axis) if axis.count else (0, 0)
    absolute = first_day * STEPS_PER_DAY + first_slot + t
    return (absolute // STEPS_PER_DAY) % 7, absolute % STEPS_PER_DAY


def lag_indices(t: int) -> tuple[int, int]:
    """Same slot one day and one week earlier."""
    if t < STEPS_PER_WEEK:
        raise InsufficientHistoryError(f"t={t} needs at least {STEPS_PER_WEEK} steps of history")
    return t - STEPS_PER_DAY, t - STEPS_PER_WEEK


@dataclass(frozen=True)
class SpeedSeries:
    link_id: int
    values: np.ndarray
    mask: np.ndarray  # True = observed

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise ValidationError(f"link {self.link_id}: values/mask shape mismatch")
        observed = values[mask]
        if observed.size and (
            not np.all(np.isfinite(observed))
            or observed.min() < 0
            or observed.max() > SPEED_CEILING_KMH
        ):
            raise ValidationError(f"link {self.link_id}: observed speed outside [0, {SPEED_CEILING_KMH}]")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def missing_fraction(self) -> float:
        return float(1.0 - self.mask.mean()) if self.mask.size else 0.0


@dataclass(frozen=True)
class SeriesSet:
    axis: TimeAxis
    series: Mapping[int, SpeedSeries] = field(default_factory=dict)

    def __post_init__(self):
        ordered = dict(sorted(self.series.items()))
        for lid, s in ordered.items():
            if s.link_id != lid:
                raise ValidationError(f"series keyed {lid} carries link_id {s.link_id}")
            if s.values.shape[0] != self.axis.count:
                raise ValidationError(
                    f"link {lid}: {s.values.shape[0]} values for an axis of {self.axis.count}"
                )
        object.__setattr__(self, "series", ordered)

    @property
    def link_ids(self) -> list[int]:
        return list(self.series)

    def __len__(self) -> int:
        return len(self.series)

    def matrix(self, links: Iterable[int] | None = None) -> np.ndarray:
        """Values as an array of shape (n_links, count), rows in ``links`` order."""
        links = self.link_ids if links is None else list(links)
        if not links:
            return np.zeros((0, self.axis.count))
        return np.stack([self.series[i].values for i in links])

    def mask_matrix(self, links: Iterable[int] | None = None) -> np.ndarray:
        links = self.link_ids if links is None else list(links)
        if not links:
            return np.zeros((0, self.axis.count), dtype=bool)
        return np.stack([self.series[i].mask for i in links])

    def subset(self, links: Iterable[int]) -> "SeriesSet":
        return SeriesSet(self.axis, {i: self.series[i] for i in links})

    def window(self, lo: int, hi: int) -> "SeriesSet":
        """Time slice ``[lo, hi)`` of every series."""
        axis = self.axis.slice(lo, hi)
        return SeriesSet(
            axis,
            {i: SpeedSeries(i, s.values[lo:hi], s.mask[lo:hi]) for i, s in self.series.items()},
        )

    @classmethod
    def from_matrix(cls, axis: TimeAxis, links: list[int], values: np.ndarray,
                    mask: np.ndarray | None = None) -> "SeriesSet":
        values = np.asarray(values, dtype=np.float64)
        if mask is None:
            mask = np.ones(values.shape, dtype=bool)
        return cls(axis, {lid: SpeedSeries(lid, values[k], mask[k]) for k, lid in enumerate(links)})


_SET_MAGIC = b"TFSS1"


def write_series_set(sset: SeriesSet, path: str | Path) -> None:
    """Binary layout: magic, start epoch (i64), count (u64), n links (u64),
    link ids (i64 each), values (f64, row-major), masks (u8)."""
    links = np.asarray(sset.link_ids, dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(_SET_MAGIC)
        fh.write(struct.pack("<qQQ", sset.axis.start_epoch, sset.axis.count, len(links)))
        fh.write(links.tobytes())
        fh.write(sset.matrix().astype("<f8").tobytes())
        fh.write(sset.mask_matrix().astype(np.uint8).tobytes())


def read_series_set(path: str | Path) -> SeriesSet:
    data = Path(path).read_bytes()
    if data[:5] != _SET_MAGIC:
        raise ValidationError(f"{path}: not a series-set file (bad magic)")
    start, count, n = struct.unpack_from("<qQQ", data, 5)
    off = 5 + 24
    links = np.frombuffer(data, "<i8", n, off).tolist()
    off += 8 * n
    values = np.frombuffer(data, "<f8", n * count, off).reshape(n, count)
    off += 8 * n * count
    mask = np.frombuffer(data, np.uint8, n * count, off).reshape(n, count).astype(bool)
    if off + n * count != len(data):
        raise ValidationError(f"{path}: truncated or oversized series-set file")
    axis = TimeAxis(datetime.fromtimestamp(start, tz=timezone.utc), count)
    return SeriesSet.from_matrix(axis, links, values, mask)

"""Raw observation ingestion, cleaning, regularisation and synthetic data.

The cleaning chain always runs in the same order::

    remove_default_speeds -> regularize -> filter_coverage -> fill_missing

:func:`preprocess` wires the four steps together.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ValidationError
from .roadnet import (
    SPEED_CEILING_KMH,
    STEP_SECONDS,
    STEPS_PER_DAY,
    STEPS_PER_WEEK,
    LinkRecord,
    RoadGraph,
    SeriesSet,
    SpeedSeries,
    TimeAxis,
)

log = logging.getLogger(__name__)

OBS_HEADER = ["segment_id", "timestamp_utc", "speed_kmh"]
TRUTH_HEADER = ["link_id", "time_index", "clean_speed", "was_default_injected", "was_missing_injected"]
MAX_MALFORMED_FRACTION = 0.01
INTERP_REACH_S = 1800


class RawObservation(NamedTuple):
    link_id: int
    timestamp: int  # UTC epoch seconds
    speed_kmh: float


class Observations(list):
    """List of :class:`RawObservation` that also remembers how many rows were rejected."""

    rejected: int = 0


def _parse_utc(text: str) -> int:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return int(ts.timestamp())


def format_utc(epoch: np.ndarray | int) -> np.ndarray:
    stamps = np.asarray(epoch, dtype="int64").astype("datetime64[s]")
    return np.char.add(np.datetime_as_string(stamps, unit="s"), "Z")


def ingest_csv(path: str | Path) -> Observations:
    """Read an observations CSV (``segment_id,timestamp_utc,speed_kmh``).

    Rows that fail to parse, or carry a negative, non-finite or implausibly
    high speed, are skipped and counted in ``result.rejected``. More than 1 %
    rejected rows raises :class:`ValidationError`.
    """
    out = Observations()
    bad = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            log.warning("%s: empty observations file", path)
            return out
        if [h.strip() for h in header] != OBS_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(OBS_HEADER)}, got {header}")
        for row in reader:
            try:
                link, stamp, speed = row
                speed = float(speed)
                if not (math.isfinite(speed) and 0.0 <= speed <= SPEED_CEILING_KMH):
                    raise ValueError(speed)
                out.append(RawObservation(int(link), _parse_utc(stamp), speed))
            except (ValueError, TypeError):
                bad += 1
    out.rejected = bad
    total = len(out) + bad
    if bad:
        log.warning("%s: rejected %d of %d rows", path, bad, total)
    if total and bad / total > MAX_MALFORMED_FRACTION:
        raise ValidationError(f"{path}: {bad}/{total} malformed rows exceeds {MAX_MALFORMED_FRACTION:.0%}")
    if not total:
        log.warning("%s: no observation rows", path)
    return out


def write_observations_csv(obs: Sequence[RawObservation], path: str | Path) -> None:
    links, stamps, speeds = _as_arrays(obs)
    text = format_utc(stamps)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(OBS_HEADER) + "\n")
        fh.writelines(f"{l},{s},{v!r}\n" for l, s, v in zip(links.tolist(), text.tolist(), speeds.tolist()))


def _as_arrays(obs: Sequence[RawObservation]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not obs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    links, stamps, speeds = zip(*obs)
    return (np.asarray(links, dtype=np.int64), np.asarray(stamps, dtype=np.int64),
            np.asarray(speeds, dtype=np.float64))


def default_speed_flags(obs: Sequence[RawObservation], graph: RoadGraph, min_run: int = 4) -> np.ndarray:
    """Boolean flag per observation: part of a run of >= ``min_run`` consecutive
    (per link, in time order) readings exactly equal to the link's free-flow speed."""
    if min_run < 1:
        raise ValidationError("min_run must be >= 1")
    links, stamps, speeds = _as_arrays(obs)
    unknown = sorted(set(np.unique(links).tolist()) - set(graph.link_ids))
    if unknown:
        raise ValidationError(f"observations reference unknown link ids: {unknown}")
    flags = np.zeros(len(links), dtype=bool)
    if not len(links):
        return flags
    ff = np.array([graph.link(i).free_flow_kmh for i in links.tolist()])
    order = np.lexsort((stamps, links))
    eq = speeds[order] == ff[order]
    lk = links[order]
    # run boundaries: value flips or link changes
    starts = np.flatnonzero(np.r_[True, (eq[1:] != eq[:-1]) | (lk[1:] != lk[:-1])])
    ends = np.r_[starts[1:], len(eq)]
    for s, e in zip(starts, ends):
        if eq[s] and e - s >= min_run:
            flags[order[s:e]] = True
    return flags


def remove_default_speeds(obs: Sequence[RawObservation], graph: RoadGraph, min_run: int = 4) -> list[RawObservation]:
    """Drop placeholder readings (free-flow speed repeated ``min_run`` or more times)."""
    flags = default_speed_flags(obs, graph, min_run)
    if flags.any():
        log.info("removed %d default-speed placeholders", int(flags.sum()))
    return [o for o, f in zip(obs, flags) if not f]


def regularize(obs: Sequence[RawObservation], axis: TimeAxis,
               links: Iterable[int] | None = None) -> SeriesSet:
    """Resample raw readings onto the 15-minute axis.

    Each grid point is linearly interpolated from the nearest raw reading at
    or before it and the nearest at or after it. If either neighbour is more
    than 30 minutes away the grid point is marked missing (value NaN).
    Duplicate timestamps keep the last reading in input order.
    """
    link_arr, stamps, speeds = _as_arrays(obs)
    grid = axis.epoch_seconds()
    wanted = sorted(set(np.unique(link_arr).tolist()) | set(links or ()))
    series = {}
    for lid in wanted:
        sel = np.flatnonzero(link_arr == lid)
        if not sel.size:
            log.warning("link %d has no observations; marked fully missing", lid)
            series[lid] = SpeedSeries(lid, np.full(axis.count, np.nan), np.zeros(axis.count, bool))
            continue
        ts, v = stamps[sel], speeds[sel]
        # keep last reading per timestamp
        rev_ts = ts[::-1]
        uniq, first_rev = np.unique(rev_ts, return_index=True)
        v = v[::-1][first_rev]
        ts = uniq
        nxt = np.searchsorted(ts, grid, side="left")
        exact = (nxt < ts.size) & (ts[np.minimum(nxt, ts.size - 1)] == grid)
        prv = nxt - 1
        has_both = (prv >= 0) & (nxt < ts.size)
        p = np.clip(prv, 0, ts.size - 1)
        n = np.clip(nxt, 0, ts.size - 1)
        near = has_both & (grid - ts[p] <= INTERP_REACH_S) & (ts[n] - grid <= INTERP_REACH_S)
        values = np.full(axis.count, np.nan)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = (grid - ts[p]) / (ts[n] - ts[p])
            interp = v[p] + (v[n] - v[p]) * frac
        values[near] = interp[near]
        values[exact] = v[n][exact]
        mask = near | exact
        series[lid] = SpeedSeries(lid, values, mask)
    return SeriesSet(axis, series)


def fill_missing(sset: SeriesSet) -> SeriesSet:
    """Linear interpolation across interior gaps, nearest-value extension at the
    edges. Masks are preserved, so imputed points stay ``False``."""
    out = {}
    idx = np.arange(sset.axis.count)
    for lid, s in sset.series.items():
        if not s.mask.any():
            raise ValidationError(f"link {lid}: series is entirely missing")
        if s.mask.all():
            out[lid] = s
            continue
        values = np.interp(idx, idx[s.mask], s.values[s.mask])
        out[lid] = SpeedSeries(lid, values, s.mask)
    return SeriesSet(sset.axis, out)


@dataclass(frozen=True)
class CoverageReport:
    threshold: float
    kept: tuple[int, ...]
    dropped: tuple[tuple[int, float], ...]  # (link_id, missing fraction)

    def summary(self) -> str:
        return f"kept {len(self.kept)} of {len(self.kept) + len(self.dropped)} links (threshold {self.threshold:.0%})"


def filter_coverage(sset: SeriesSet, threshold: float = 0.20) -> tuple[SeriesSet, CoverageReport]:
    """Drop links whose missing fraction is at or above ``threshold``."""
    kept, dropped = [], []
    for lid, s in sset.series.items():
        frac = s.missing_fraction
        if frac >= threshold:
            dropped.append((lid, frac))
        else:
            kept.append(lid)
    report = CoverageReport(threshold, tuple(kept), tuple(dropped))
    log.info(report.summary())
    return sset.subset(kept), report


def preprocess(obs: Sequence[RawObservation], graph: RoadGraph, axis: TimeAxis, *,
               min_run: int = 4, threshold: float = 0.20) -> tuple[SeriesSet, CoverageReport]:
    cleaned = remove_default_speeds(obs, graph, min_run)
    regular = regularize(cleaned, axis, links=graph.link_ids)
    kept, report = filter_coverage(regular, threshold)
    return fill_missing(kept), report


def autocorrelation(series: SpeedSeries | np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelation ``r_k = sum (x_t - m)(x_{t+k} - m) / sum (x_t - m)^2``."""
    x = np.asarray(series.values if isinstance(series, SpeedSeries) else series, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("autocorrelation needs a fully filled series")
    if not 0 <= max_lag < x.size:
        raise ValidationError(f"max_lag must be in [0, {x.size})")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0:
        raise ValidationError("constant series has no autocorrelation (zero variance)")
    return np.array([d[: x.size - k] @ d[k:] for k in range(max_lag + 1)]) / denom


# ---------------------------------------------------------------------------
# synthetic data

GRAPH_KINDS = ("grid", "ring", "random-planar")


@dataclass
class SynthSpec:
    n_links: int = 60
    graph_kind: str = "grid"
    n_weeks: int = 14
    start: str = "2018-07-22T00:00:00Z"
    daily_amplitude: float = 0.5       # rush-hour dip depth, fraction of free flow
    weekly_amplitude: float = 0.5      # weekend attenuation of the rush hours
    daytime_level: float = 0.6         # all-day slowdown between 06:00 and 21:00, fraction of the dip depth
    wave_rate: float = 0.05            # waves originating per link per day
    wave_depth: float = 0.4            # fraction of free flow at the origin
    wave_duration_steps: float = 6.0
    wave_speed_kmh: float = 4.0        # upstream propagation speed
    wave_decay_m: float = 6000.0       # e-folding distance of the amplitude
    noise_std: float = 2.0
    missing_rate: float = 0.03
    default_rate: float = 0.01
    timestamp_jitter_s: float = 120.0
    link_length_m: float = 800.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_links < 1:
            raise ValidationError("n_links must be >= 1")
        if self.graph_kind not in GRAPH_KINDS:
            raise ValidationError(f"graph_kind must be one of {GRAPH_KINDS}")
        if self.n_weeks < 3:
            raise ValidationError("n_weeks must be >= 3")
        for name in ("wave_rate", "missing_rate", "default_rate", "daily_amplitude",
                     "weekly_amplitude", "daytime_level", "wave_depth"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {val}")
        for name in ("noise_std", "timestamp_jitter_s"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not 0 <= self.timestamp_jitter_s < STEP_SECONDS / 2:
            raise ValidationError("timestamp_jitter_s must be below half a step")
        for name in ("wave_speed_kmh", "wave_decay_m", "wave_duration_steps", "link_length_m"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        _parse_utc(self.start)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown synth keys: {unknown}")
        spec = cls(**data)
        spec.validate()
        return spec

    @property
    def axis(self) -> TimeAxis:
        return TimeAxis(datetime.fromtimestamp(_parse_utc(self.start), tz=timezone.utc),
                        self.n_weeks * STEPS_PER_WEEK)


@dataclass
class GroundTruth:
    axis: TimeAxis
    link_ids: list[int]
    clean: np.ndarray             # (n_links, count) noise-free speeds on the grid
    default_injected: np.ndarray  # (n_links, count) bool
    missing_injected: np.ndarray  # (n_links, count) bool
    waves: list[tuple[int, int]] = field(default_factory=list)  # (origin link, origin step)

    def write_csv(self, path: str | Path) -> None:
        n, count = self.clean.shape
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(TRUTH_HEADER) + "\n")
            for k, lid in enumerate(self.link_ids):
                clean = self.clean[k].tolist()
                dflt = self.default_injected[k].astype(int).tolist()
                miss = self.missing_injected[k].astype(int).tolist()
                fh.writelines(f"{lid},{t},{clean[t]!r},{dflt[t]},{miss[t]}\n" for t in range(count))


def _grid_graph(n_links: int, spacing: float, rng: np.random.Generator) -> list[tuple[int, int, float]]:
    side = 2
    while 2 * 2 * side * (side - 1) < n_links:
        side += 1
    pos = {r * side + c: (c * spacing, r * spacing) for r in range(side) for c in range(side)}
    # grow a connected region breadth-first from a corner so any prefix is connected
    edges, seen, frontier = [], {0}, [0]
    while frontier and len(edges) < n_links:
        nxt = []
        for node in frontier:
            r, c = divmod(node, side)
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < side and 0 <= cc < side:
                    other = rr * side + cc
                    if other not in seen:
                        seen.add(other)
                        nxt.append(other)
                    for a, b in ((node, other), (other, node)):
                        if (a, b) not in edges:
                            edges.append((a, b))
        frontier = nxt
    edges = edges[:n_links]
    jitter = rng.uniform(0.85, 1.15, size=len(edges))
    return [(a, b, float(np.hypot(pos[a][0] - pos[b][0], pos[a][1] - pos[b][1]) * j))
            for (a, b), j in zip(edges, jitter)]


def _ring_graph(n_links: int, spacing: float, rng: np.random.Generator) -> list[tuple[int, int, float]]:
    lengths = spacing * rng.uniform(0.85, 1.15, size=n_links)
    return [(i, (i + 1) % n_links, float(lengths[i])) for i in range(n_links)]


def _planar_graph(n_links: int, spacing: float, rng: np.random.Generator) -> list[tuple[int, int, float]]:
    from scipy.spatial import Delaunay

    n_nodes = max(4, n_links // 3 + 3)
    while True:
        pts = rng.uniform(0, spacing * math.sqrt(n_nodes), size=(n_nodes, 2))
        tri = Delaunay(pts)
        und = sorted({tuple(sorted((int(a), int(b))))
                      for s in tri.simplices for a, b in ((s[0], s[1]), (s[1], s[2]), (s[0], s[2]))})
        if 2 * len(und) >= n_links:
            break
        n_nodes += 2
    adj: dict[int, list[int]] = {}
    for a, b in und:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    edges, seen, frontier = [], {0}, [0]
    while frontier and len(edges) < n_links:
        nxt = []
        for node in frontier:
            for other in sorted(adj[node]):
                if other not in seen:
                    seen.add(other)
                    nxt.append(other)
                for a, b in ((node, other), (other, node)):
                    if (a, b) not in edges:
                        edges.append((a, b))
        frontier = nxt
    edges = edges[:n_links]
    return [(a, b, float(np.hypot(*(pts[a] - pts[b])))) for a, b in edges]


def _build_graph(spec: SynthSpec, rng: np.random.Generator) -> RoadGraph:
    maker = {"grid": _grid_graph, "ring": _ring_graph, "random-planar": _planar_graph}[spec.graph_kind]
    edges = maker(spec.n_links, spec.link_length_m, rng)
    classes = np.array([30.0, 50.0, 70.0])
    ff = classes[rng.integers(0, 3, size=len(edges))]
    return RoadGraph(LinkRecord(k + 1, a, b, round(length, 3), float(ff[k]))
                     for k, (a, b, length) in enumerate(edges))


def _bump(x: np.ndarray, width: float) -> np.ndarray:
    return np.exp(-0.5 * (x / width) ** 2)


def _ramp(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(x / 0.75))


def wave_delays(graph: RoadGraph, origin: int, speed_kmh: float, max_m: float) -> dict[int, float]:
    """Arrival delay in seconds of a congestion wave at every upstream link.

    The front leaves the upstream end of ``origin`` at delay 0 and reaches the
    upstream end of link ``u`` after travelling the summed length of the links
    in between (``u`` included). Shortest distance wins when paths merge.
    """
    mps = speed_kmh / 3.6
    dist = {origin: 0.0}
    frontier = [origin]
    while frontier:
        nxt = []
        for v in frontier:
            for u in graph.upstream(v):
                d = dist[v] + graph.link(u).length_m
                if d <= max_m and d < dist.get(u, math.inf):
                    dist[u] = d
                    nxt.append(u)
        frontier = sorted(set(nxt))
    return {u: d / mps for u, d in dist.items()}


@dataclass
class _Process:
    """Random draws behind one synthetic data set; evaluated at any time offsets."""

    spec: SynthSpec
    graph: RoadGraph
    ff: np.ndarray
    am_peak: np.ndarray
    pm_peak: np.ndarray
    am_share: np.ndarray
    pm_share: np.ndarray
    depth: np.ndarray
    waves: list[tuple[int, float, float]]  # (origin link, origin second, strength)
    start_day: int

    @classmethod
    def draw(cls, spec: SynthSpec, graph: RoadGraph, rng: np.random.Generator) -> "_Process":
        n = len(graph)
        ff = np.array([r.free_flow_kmh for r in graph.links])
        am_peak = rng.uniform(7.0, 9.0, n)
        pm_peak = rng.uniform(16.5, 18.5, n)
        am_share = rng.uniform(0.2, 1.0, n)
        pm_share = rng.uniform(0.2, 1.0, n)
        depth = spec.daily_amplitude * rng.uniform(0.5, 1.0, n) * ff
        waves = []
        if spec.wave_rate > 0:
            total_days = spec.n_weeks * 7
            for lid in graph.link_ids:
                n_waves = rng.poisson(spec.wave_rate * total_days)
                starts = np.sort(rng.uniform(0, total_days * 86400.0, n_waves))
                strengths = rng.uniform(0.6, 1.0, n_waves)
                waves.extend((lid, float(t0), float(s)) for t0, s in zip(starts, strengths))
        start_day = (datetime.fromtimestamp(_parse_utc(spec.start), tz=timezone.utc).weekday() + 1) % 7
        return cls(spec, graph, ff, am_peak, pm_peak, am_share, pm_share, depth, waves, start_day)

    def evaluate(self, seconds: np.ndarray) -> np.ndarray:
        """Clean speeds for ``seconds`` of shape (n_links, m), offsets from the axis start.

        Rows must be sorted ascending.
        """
        spec = self.spec
        hours = seconds / 3600.0
        hod = np.mod(hours, 24.0)
        day = np.mod(np.floor(hours / 24.0).astype(int) + self.start_day, 7)
        weekend = (day == 0) | (day == 6)
        dips = (self.am_share[:, None] * _bump(hod - self.am_peak[:, None], 1.0)
                + self.pm_share[:, None] * _bump(hod - self.pm_peak[:, None], 1.4))
        week_factor = np.where(weekend, 1.0 - spec.weekly_amplitude, 1.0)
        # weekend midday leisure traffic keeps some weekly structure at full attenuation
        leisure = np.where(weekend, 0.3 * spec.weekly_amplitude, 0.0) * _bump(hod - 13.0, 2.0)
        daytime = spec.daytime_level * _ramp(hod - 6.0) * _ramp(21.0 - hod)
        speed = 0.92 * self.ff[:, None] - self.depth[:, None] * ((dips + daytime) * week_factor + leisure)

        if self.waves:
            index = {lid: k for k, lid in enumerate(self.graph.link_ids)}
            width_s = spec.wave_duration_steps * STEP_SECONDS / 2.0
            reach = 3.0 * spec.wave_decay_m
            mps = spec.wave_speed_kmh / 3.6
            delays = {}
            for lid, t0, strength in self.waves:
                if lid not in delays:
                    delays[lid] = wave_delays(self.graph, lid, spec.wave_speed_kmh, reach)
                for u, delay in delays[lid].items():
                    row = index[u]
                    amp = strength * spec.wave_depth * math.exp(-delay * mps / spec.wave_decay_m)
                    centre = t0 + delay
                    lo, hi = np.searchsorted(seconds[row], (centre - 5 * width_s, centre + 5 * width_s))
                    if hi > lo:
                        seg = seconds[row, lo:hi]
                        speed[row, lo:hi] -= amp * self.ff[row] * _bump(seg - centre, width_s)
        return np.clip(speed, 0.08 * self.ff[:, None], self.ff[:, None] - 0.5)


def generate_synthetic(spec: SynthSpec) -> tuple[RoadGraph, Observations, GroundTruth]:
    """Build a graph and 15-minute speed readings with known ground truth.

    Speeds combine a cruise level below free flow, two rush-hour dips,
    weekend attenuation, congestion waves travelling upstream and Gaussian
    noise. Afterwards outages (missing runs) and placeholder runs at exactly
    the free-flow speed are injected. Deterministic for a given seed.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    graph = _build_graph(spec, rng)
    proc = _Process.draw(spec, graph, rng)
    axis = spec.axis
    n, count = len(graph), axis.count
    grid_s = np.broadcast_to(np.arange(count, dtype=np.float64) * STEP_SECONDS, (n, count))

    clean = proc.evaluate(grid_s)
    rng = np.random.default_rng([spec.seed, 1])
    if spec.timestamp_jitter_s > 0:
        jitter = rng.uniform(-spec.timestamp_jitter_s, spec.timestamp_jitter_s, size=(n, count)).round()
        observed = proc.evaluate(grid_s + jitter)
    else:
        jitter = np.zeros((n, count))
        observed = clean.copy()
    if spec.noise_std > 0:
        observed = observed + rng.normal(0.0, spec.noise_std, size=observed.shape)
        observed = np.clip(observed, 0.0, proc.ff[:, None] - 0.5)

    missing = np.zeros((n, count), bool)
    default = np.zeros((n, count), bool)
    if spec.missing_rate > 0:
        missing = _inject_runs(rng, (n, count), spec.missing_rate, 1, 12)
    if spec.default_rate > 0:
        default = _inject_runs(rng, (n, count), spec.default_rate, 4, 12) & ~missing
    observed = np.where(default, proc.ff[:, None], observed)

    obs = Observations()
    stamps = axis.start_epoch + (grid_s + jitter).astype(np.int64)
    for k, lid in enumerate(graph.link_ids):
        keep = ~missing[k]
        obs.extend(RawObservation(lid, s, v)
                   for s, v in zip(stamps[k, keep].tolist(), observed[k, keep].tolist()))
    waves = [(lid, int(t0 // STEP_SECONDS)) for lid, t0, _ in proc.waves]
    truth = GroundTruth(axis, graph.link_ids, clean, default, missing, waves)
    return graph, obs, truth


def _inject_runs(rng: np.random.Generator, shape: tuple[int, int], rate: float,
                 lo: int, hi: int) -> np.ndarray:
    """Boolean mask of runs with lengths uniform in [lo, hi] covering about ``rate`` of cells."""
    out = np.zeros(shape, bool)
    mean_len = (lo + hi) / 2.0
    p_start = rate / mean_len
    for k in range(shape[0]):
        starts = np.flatnonzero(rng.random(shape[1]) < p_start)
        lengths = rng.integers(lo, hi + 1, size=starts.size)
        for s, ln in zip(starts, lengths):
            out[k, s:s + ln] = True
    return out


def periodic_profile(values: np.ndarray, period: int = STEPS_PER_DAY) -> np.ndarray:
    """Mean value per phase of ``period``; handy for eyeballing the daily shape."""
    values = np.asarray(values, dtype=np.float64)
    usable = values[: values.size // period * period]
    return usable.reshape(-1, period).mean(axis=0)

"""Splits, per-horizon RMSE, link sampling, grid search and benchmark reports.

Evaluation targets are the timestamps of the test period. For horizon step
k the forecast of target ``T`` is issued at origin ``T - k``, so every
target is scored at every step and the origins run from ``test_start - h``
to ``test_end - 1``.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, TrainingDivergedError, ValidationError
from .features import check_no_leakage
from .hyperparams import fit_kwargs, merged
from .pipeline import format_utc
from .predictors import (ARModel, BMLPModel, ClusterForecaster, ContextualAverage, GBForecaster, GBModel,
                         GCNNModel, LSTMModel, MLPModel, fit_cmlp_models, model_size)
from .predictors.base import METHOD_ORDER, MODEL_COUNT_CLASS
from .roadnet import STEPS_PER_WEEK, RoadGraph, SeriesSet
from .wavelet import ClusterAssignment, cluster_links

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitSpec:
    train_weeks: int = 12
    val_weeks: int = 1
    test_weeks: int = 1

    def __post_init__(self):
        if min(self.train_weeks, self.val_weeks, self.test_weeks) < 1:
            raise ValidationError("every split needs at least one week")

    @property
    def total_weeks(self) -> int:
        return self.train_weeks + self.val_weeks + self.test_weeks

    def ranges(self) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
        """Index ranges of train, validation and test from the start of the axis."""
        a = self.train_weeks * STEPS_PER_WEEK
        b = a + self.val_weeks * STEPS_PER_WEEK
        c = b + self.test_weeks * STEPS_PER_WEEK
        return (0, a), (a, b), (b, c)


def split(sset: SeriesSet, spec: SplitSpec = SplitSpec()) -> tuple[SeriesSet, SeriesSet, SeriesSet]:
    """Contiguous train / validation / test windows; the series must cover all three."""
    need = spec.total_weeks * STEPS_PER_WEEK
    if sset.axis.count < need:
        raise ValidationError(f"series set has {sset.axis.count} steps, the split needs {need}")
    return tuple(sset.window(lo, hi) for lo, hi in spec.ranges())  # type: ignore[return-value]


def sample_links(sset: SeriesSet, n: int = 50, seed: int = 0) -> list[int]:
    """Uniform sample without replacement, returned in ascending id order."""
    ids = sset.link_ids
    if n < 1 or n > len(ids):
        raise ValidationError(f"cannot sample {n} of {len(ids)} links")
    picked = np.random.default_rng(seed).choice(len(ids), size=n, replace=False)
    return sorted(ids[i] for i in picked)


def rmse_h(predictions: dict[int, np.ndarray], truth: dict[int, np.ndarray], links: Sequence[int],
           h: int) -> np.ndarray:
    """Per-step RMSE pooled over links and targets.

    ``predictions[link]`` and ``truth[link]`` are (n_targets, h) arrays with
    row i holding target i and column k-1 the forecast issued k steps
    before it. A missing link, a shape mismatch or a NaN entry is an error.
    """
    if not links:
        raise ValidationError("no links to score")
    sq = np.zeros(h)
    count = 0
    for l in links:
        if l not in predictions or l not in truth:
            raise ValidationError(f"no predictions or truth for link {l}")
        p = np.asarray(predictions[l], dtype=np.float64)
        y = np.asarray(truth[l], dtype=np.float64)
        if p.ndim != 2 or p.shape != y.shape or p.shape[1] != h:
            raise ValidationError(f"link {l}: prediction shape {p.shape} does not match truth {y.shape} / h={h}")
        if np.isnan(p).any():
            raise ValidationError(f"link {l}: missing prediction tuples")
        sq += ((p - y) ** 2).sum(axis=0)
        count += p.shape[0]
    if count == 0:
        raise ValidationError("no targets to score")
    return np.sqrt(sq / count)


def target_origins(targets: np.ndarray, h: int) -> np.ndarray:
    """Every origin needed to forecast ``targets`` at steps 1..h."""
    targets = np.asarray(targets, dtype=np.int64)
    return np.arange(targets.min() - h, targets.max())


def by_target(forecasts: np.ndarray, origins: np.ndarray, targets: np.ndarray, h: int) -> np.ndarray:
    """Rearrange (L, n_origins, h) forecasts into (L, n_targets, h) indexed by target time."""
    pos = np.asarray(targets)[:, None] - np.arange(1, h + 1)[None, :] - origins[0]
    if pos.min() < 0 or pos.max() >= len(origins):
        raise ValidationError("origins do not cover every (target, step) pair")
    steps = np.broadcast_to(np.arange(h), pos.shape)
    return forecasts[:, pos, steps]


# ---------------------------------------------------------------------------
# fitting any method


@dataclass
class Fitted:
    """Trained models of one method plus a forecaster over ``links``."""

    method: str
    models: list
    forecaster: object
    links: list[int]
    train_seconds: float
    per_model_seconds: float

    def predict(self, sset: SeriesSet, origins: np.ndarray, links: Sequence[int]) -> np.ndarray:
        check_no_leakage(origins, self.forecaster.input_offsets())
        out = self.forecaster.predict(sset, origins)
        pos = {l: i for i, l in enumerate(self.links)}
        return out[[pos[l] for l in links]]


class _Stack:
    """Per-link forecasters stacked along the link axis."""

    def __init__(self, parts: list):
        self.parts = parts
        self.links = [l for p in parts for l in p.links]

    def input_offsets(self) -> np.ndarray:
        offs = [p.input_offsets() for p in self.parts]
        return np.unique(np.concatenate(offs)) if offs else np.zeros(0, dtype=np.int64)

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        return np.concatenate([p.predict(sset, origins) for p in self.parts], axis=0)


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fit_method(method: str, sset: SeriesSet, *, links: Sequence[int], graph: RoadGraph | None = None,
               clusters: ClusterAssignment | None = None, train_range: tuple[int, int],
               val_range: tuple[int, int], seed: int = 0, hyper: dict | None = None, h: int = 12,
               threads: int = 1) -> Fitted:
    """Train ``method`` on ``sset`` restricted to ``[0, val_range[1])``.

    Link-scoped methods are trained for ``links`` only; area methods cover
    every link of the set. Models without early stopping learn from the
    training and validation weeks together.
    """
    data = sset.window(0, val_range[1])
    kw = fit_kwargs(method, hyper, h)
    full = (0, val_range[1])
    links = list(links)
    t0 = time.perf_counter()
    if method == "baseline":
        models = _map(lambda l: ContextualAverage.fit(data, l, time_range=full, **kw), links, threads)
        forecaster = _Stack(models)
    elif method == "ar":
        models = _map(lambda l: ARModel.fit(data, l, time_range=full, **kw), links, threads)
        forecaster = _Stack(models)
    elif method == "gb":
        pairs = [(l, k) for l in links for k in range(1, h + 1)]
        models = _map(lambda lk: GBModel.fit(data, lk[0], lk[1], time_range=full, **kw), pairs, threads)
        forecaster = _Stack([GBForecaster(models[i * h:(i + 1) * h]) for i in range(len(links))])
    elif method == "mlp":
        models = _map(lambda l: MLPModel.fit(data, l, time_range=train_range, val_range=val_range, seed=seed, **kw),
                      links, threads)
        forecaster = _Stack(models)
    elif method == "lstm":
        models = _map(lambda l: LSTMModel.fit(data, l, time_range=train_range, val_range=val_range, seed=seed, **kw),
                      links, threads)
        forecaster = _Stack(models)
    elif method == "bmlp":
        models = [BMLPModel.fit(data, time_range=train_range, val_range=val_range, seed=seed, **kw)]
        forecaster = models[0]
    elif method == "cmlp":
        if clusters is None:
            block = merged("cmlp", hyper)
            K = int(block["n_clusters"]) or None
            clusters, _ = cluster_links(data, val_range, int(block["k_max"]), seed, K)
        cm = fit_cmlp_models(data, clusters, time_range=train_range, val_range=val_range, seed=seed, **kw)
        models = [cm[c] for c in sorted(cm)]
        forecaster = ClusterForecaster(cm)
    elif method == "gcnn":
        if graph is None:
            raise ConfigurationError("the graph model needs the road graph")
        models = [GCNNModel.fit(data, graph, time_range=train_range, val_range=val_range, seed=seed, **kw)]
        forecaster = models[0]
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    elapsed = time.perf_counter() - t0
    return Fitted(method, models, forecaster, list(forecaster.links), elapsed, elapsed / max(len(models), 1))


# ---------------------------------------------------------------------------
# grid search


@dataclass
class GridResult:
    best: dict
    trace: list[dict]


def grid_points(grid: dict[str, Sequence] | Sequence[dict]) -> list[dict]:
    """A dict of value lists expands to its Cartesian product in key order; a list is taken as is."""
    if isinstance(grid, dict):
        keys = list(grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    return [dict(p) for p in grid]


def grid_search(method: str, grid, sset: SeriesSet, *, links: Sequence[int], train_range: tuple[int, int],
                val_range: tuple[int, int], seed: int = 0, graph: RoadGraph | None = None,
                clusters: ClusterAssignment | None = None, h: int = 12) -> GridResult:
    """Exhaustive search minimising the validation RMSE averaged over the h steps.

    Models are fitted on the training range only (early stopping, where
    used, watches the last training week) and scored on the validation
    range. Ties go to the smaller mean model size, then to grid order.
    """
    points = grid_points(grid)
    if not points:
        raise ConfigurationError("empty grid")
    lo, hi = train_range
    inner_val = (max(lo, hi - STEPS_PER_WEEK), hi)
    inner_train = (lo, inner_val[0]) if inner_val[0] - lo > STEPS_PER_WEEK else (lo, hi)
    targets = np.arange(*val_range)
    origins = target_origins(targets, h)
    truth = {l: np.repeat(sset.series[l].values[targets][:, None], h, axis=1) for l in links}
    trace = []
    best_key = None
    best = None
    for i, point in enumerate(points):
        try:
            fitted = fit_method(method, sset.window(0, hi), links=links, graph=graph, clusters=clusters,
                                train_range=inner_train, val_range=inner_val, seed=seed, hyper=point, h=h)
        except TrainingDivergedError as exc:
            log.warning("grid %s %s diverged: %s", method, point, exc)
            trace.append({"point": point, "objective": float("inf"), "size_bytes": float("inf")})
            continue
        pred = by_target(fitted.predict(sset, origins, links), origins, targets, h)
        score = float(np.mean(rmse_h({l: pred[j] for j, l in enumerate(links)}, truth, links, h)))
        size = float(np.mean([model_size(m) for m in fitted.models]))
        trace.append({"point": point, "objective": score, "size_bytes": size})
        log.info("grid %s %s -> %.6f (size %.0f)", method, point, score, size)
        key = (score if np.isfinite(score) else np.inf, size, i)
        if best_key is None or key < best_key:
            best_key, best = key, point
    if best is None:
        raise TrainingDivergedError(f"every {method} grid point diverged")
    return GridResult(best, trace)


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class MethodResult:
    method: str
    rmse_h: list[float]
    train_time_s: float
    size_bytes: float
    model_count_class: str
    n_models: int


@dataclass
class EvalReport:
    results: list[MethodResult]
    sampled_links: list[int]
    seeds: list[int]
    h: int = 12
    predictions: dict = field(default_factory=dict, repr=False)  # method -> (targets, (L, n, h) by target)
    plot_data: dict = field(default_factory=dict, repr=False)    # (method, link) -> (targets, truth, pred)

    def result(self, method: str) -> MethodResult:
        return next(r for r in self.results if r.method == method)


def benchmark(methods: Sequence[str], sset: SeriesSet, graph: RoadGraph | None = None,
              clusters: ClusterAssignment | None = None, seed: int = 0, *, split_spec: SplitSpec = SplitSpec(),
              n_links: int = 50, hyper: dict[str, dict] | None = None, h: int = 12, threads: int = 1,
              plot_links: Sequence[int] = (), links: Sequence[int] | None = None) -> EvalReport:
    """Train each method, score the sampled links over the test period.

    Rows follow the fixed method order regardless of the request order.
    """
    unknown = [m for m in methods if m not in METHOD_ORDER]
    if unknown:
        raise ConfigurationError(f"unknown methods {unknown}")
    split(sset, split_spec)  # validates the length
    train_range, val_range, test_range = split_spec.ranges()
    sampled = list(links) if links is not None else sample_links(sset, min(n_links, len(sset)), seed)
    targets = np.arange(*test_range)
    origins = target_origins(targets, h)
    truth_arr = np.stack([sset.series[l].values[targets] for l in sampled])
    truth = {l: np.repeat(truth_arr[i][:, None], h, axis=1) for i, l in enumerate(sampled)}
    hyper = hyper or {}
    report = EvalReport([], sampled, [seed], h)
    for method in (m for m in METHOD_ORDER if m in methods):
        log.info("benchmark: training %s", method)
        fitted = fit_method(method, sset, links=sampled, graph=graph, clusters=clusters, train_range=train_range,
                            val_range=val_range, seed=seed, hyper=hyper.get(method), h=h, threads=threads)
        # structural leakage guard over every origin of the test period
        check_no_leakage(origins, fitted.forecaster.input_offsets())
        pred = by_target(fitted.predict(sset, origins, sampled), origins, targets, h)
        scores = rmse_h({l: pred[i] for i, l in enumerate(sampled)}, truth, sampled, h)
        sizes = [model_size(m) for m in fitted.models]
        report.results.append(MethodResult(method, [float(x) for x in scores], fitted.per_model_seconds,
                                           float(np.mean(sizes)), MODEL_COUNT_CLASS[method], len(fitted.models)))
        report.predictions[method] = (targets, pred)
        for l in plot_links:
            if l in sampled:
                i = sampled.index(l)
                report.plot_data[(method, l)] = (targets, truth_arr[i], pred[i])
    return report


def aggregate(reports: Sequence[EvalReport]) -> EvalReport:
    """Mean RMSE per step (pooled squared error), time and size over several seeds."""
    first = reports[0]
    out = EvalReport([], first.sampled_links, [s for r in reports for s in r.seeds], first.h)
    for res in first.results:
        rows = [r.result(res.method) for r in reports]
        mse = np.mean([np.square(r.rmse_h) for r in rows], axis=0)
        out.results.append(MethodResult(res.method, [float(x) for x in np.sqrt(mse)],
                                        float(np.mean([r.train_time_s for r in rows])),
                                        float(np.mean([r.size_bytes for r in rows])), res.model_count_class,
                                        rows[0].n_models))
    return out


# ---------------------------------------------------------------------------
# report files

TIMING_FIELDS = ("train_time_s",)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *[f"h{k}" for k in range(1, report.h + 1)], "train_time_s", "size_bytes",
                "model_count_class"])
    for r in report.results:
        w.writerow([r.method, *map(_fmt, r.rmse_h), f"{r.train_time_s:.3f}", f"{r.size_bytes:.0f}",
                    r.model_count_class])
    return buf.getvalue()


def report_markdown(report: EvalReport) -> str:
    h = report.h
    lines = ["# Benchmark", "", f"Sampled links: {len(report.sampled_links)}; seeds: "
             f"{', '.join(map(str, report.seeds))}", "", "## RMSE per horizon step (km/h)", "",
             "| method | " + " | ".join(f"h{k}" for k in range(1, h + 1)) + " |",
             "|---|" + "---:|" * h]
    for r in report.results:
        lines.append(f"| {r.method} | " + " | ".join(f"{x:.3f}" for x in r.rmse_h) + " |")
    lines += ["", "## Models", "", "| method | # of models | models trained | train time per model (s) | "
              "size per model (bytes) |", "|---|---|---:|---:|---:|"]
    for r in report.results:
        lines.append(f"| {r.method} | {r.model_count_class} | {r.n_models} | {r.train_time_s:.3f} | "
                     f"{r.size_bytes:.0f} |")
    return "\n".join(lines) + "\n"


def report_json(report: EvalReport) -> str:
    return json.dumps({"h": report.h, "sampled_links": report.sampled_links, "seeds": report.seeds,
                       "results": [vars(r) for r in report.results]}, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> EvalReport:
    d = json.loads(text)
    return EvalReport([MethodResult(**r) for r in d["results"]], d["sampled_links"], d["seeds"], d["h"])


def predictions_csv(report: EvalReport, sset: SeriesSet, method: str) -> str:
    """``link_id,origin_time,h,predicted_kmh`` rows in (link, origin, step) order."""
    targets, pred = report.predictions[method]
    h = report.h
    rows = []
    for i, l in enumerate(report.sampled_links):
        for k in range(1, h + 1):
            origins = targets - k
            for j in range(len(targets)):
                rows.append((l, int(origins[j]), k, pred[i, j, k - 1]))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    epoch = sset.axis.start_epoch + np.array([r[1] for r in rows], dtype=np.int64) * sset.axis.step
    stamps = format_utc(epoch)
    buf = io.StringIO()
    buf.write("link_id,origin_time,h,predicted_kmh\n")
    for (l, _, k, v), ts in zip(rows, stamps):
        buf.write(f"{l},{ts},{k},{v:.4f}\n")
    return buf.getvalue()


def plot_csv(targets: np.ndarray, truth: np.ndarray, pred: np.ndarray, sset: SeriesSet, step: int = 1) -> str:
    stamps = format_utc(sset.axis.start_epoch + np.asarray(targets, dtype=np.int64) * sset.axis.step)
    buf = io.StringIO()
    buf.write("time,truth,predicted\n")
    for ts, y, p in zip(stamps, truth, pred[:, step - 1]):
        buf.write(f"{ts},{y:.4f},{p:.4f}\n")
    return buf.getvalue()


def plot_svg(truth: np.ndarray, pred: np.ndarray, title: str = "", width: int = 900, height: int = 300) -> str:
    """Two polylines (truth black, forecast red) on shared axes."""
    lo = float(min(truth.min(), pred.min()))
    hi = float(max(truth.max(), pred.max()))
    span = hi - lo or 1.0
    pad = 30
    n = len(truth)

    def points(v: np.ndarray) -> str:
        xs = pad + np.arange(n) * (width - 2 * pad) / max(n - 1, 1)
        ys = height - pad - (v - lo) * (height - 2 * pad) / span
        return " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))

    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
            f'<text x="{pad}" y="18" font-size="13">{title}</text>\n'
            f'<text x="2" y="{pad}" font-size="10">{hi:.0f}</text>\n'
            f'<text x="2" y="{height - pad}" font-size="10">{lo:.0f}</text>\n'
            f'<polyline fill="none" stroke="black" stroke-width="1" points="{points(truth)}"/>\n'
            f'<polyline fill="none" stroke="red" stroke-width="1" points="{points(pred)}"/>\n'
            "</svg>\n")


def write_report(report: EvalReport, out_dir: str | Path, sset: SeriesSet | None = None,
                 plot_step: int = 1) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    put("report.md", report_markdown(report))
    put("report.csv", report_csv(report))
    put("report.json", report_json(report))
    if sset is not None:
        for method in report.predictions:
            put(f"predictions_{method}.csv", predictions_csv(report, sset, method))
        for (method, link), (targets, truth, pred) in sorted(report.plot_data.items()):
            put(f"plot_{method}_{link}.csv", plot_csv(targets, truth, pred, sset, plot_step))
            put(f"plot_{method}_{link}.svg", plot_svg(truth, pred[:, plot_step - 1],
                                                      f"{method} link {link}, step {plot_step}"))
    return written

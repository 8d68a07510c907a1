"""Command-line entry point: ``trafficast <subcommand> ...``.

Exit codes: 0 success, 2 bad usage, 3 invalid input or configuration,
4 runtime failure. Failures print one ``error: <category>: <message>``
line on standard error; logs also go to standard error and data only to
files (``dump-defaults`` prints to standard output when no ``--out`` is given).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_defaults
from .errors import TrafficastError, ValidationError
from .evaluation import benchmark, report_from_json, report_markdown, write_report
from .hyperparams import fit_kwargs
from .pipeline import (SynthSpec, _parse_utc, autocorrelation, format_utc, generate_synthetic, ingest_csv,
                       preprocess, write_observations_csv)
from .predictors import (ARModel, BMLPModel, ContextualAverage, GBModel, GCNNModel, LSTMModel, MLPModel,
                         deserialize, fit_cmlp_models, serialize)
from .predictors.base import METHOD_ORDER
from .roadnet import STEP_SECONDS, RoadGraph, TimeAxis, read_graph_csv, read_series_set, write_graph_csv, write_series_set
from .wavelet import cluster_links, read_clusters_csv, write_clusters_csv, write_curves_csv

log = logging.getLogger("trafficast")

EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse's own exit code is already 2; keep the one-line contract
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: usage: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _parse_time(text: str) -> datetime:
    return datetime.fromtimestamp(_parse_utc(text), tz=timezone.utc)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.run["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        cfg.run["threads"] = args.threads
    return cfg


def _path(value, cfg: RunConfig, key: str, flag: str) -> str:
    out = value or cfg.paths.get(key, "")
    if not out:
        raise ValidationError(f"{flag} is required (or set paths.{key} in the config)")
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> None:
    cfg = _config(args)
    spec = cfg.synth
    overrides = {k: v for k, v in (("n_links", args.links), ("n_weeks", args.weeks), ("seed", args.seed),
                                   ("graph_kind", args.graph_kind)) if v is not None}
    if overrides:
        d = {f: getattr(spec, f) for f in spec.__dataclass_fields__}
        d.update(overrides)
        spec = SynthSpec.from_dict(d)
    graph, obs, truth = generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_graph_csv(graph, out / "graph.csv")
    write_observations_csv(obs, out / "observations.csv")
    if args.truth:
        truth.write_csv(out / "truth.csv")
    log.info("generated %d links, %d observations in %s", len(graph), len(obs), out)


def cmd_preprocess(args) -> None:
    cfg = _config(args)
    graph = read_graph_csv(_path(args.graph, cfg, "graph", "--graph"))
    obs = ingest_csv(_path(args.observations, cfg, "observations", "--observations"))
    if not obs:
        raise ValidationError("no observations")
    start = _parse_time(args.start) if args.start else _parse_time(cfg.synth.start)
    if args.steps:
        count = args.steps
    else:
        last = max(o.timestamp for o in obs)
        count = int((last - int(start.timestamp())) // STEP_SECONDS) + 1
    axis = TimeAxis(start, count)
    sset, report = preprocess(obs, graph, axis, min_run=cfg.run["default_run"],
                              threshold=cfg.run["coverage_threshold"])
    write_series_set(sset, args.out)
    log.info("%s; %d rejected rows", report.summary(), obs.rejected)
    if args.coverage:
        with open(args.coverage, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link_id", "status", "missing_fraction"])
            for lid in report.kept:
                w.writerow([lid, "kept", ""])
            for lid, frac in report.dropped:
                w.writerow([lid, "dropped", f"{frac:.4f}"])


def cmd_cluster(args) -> None:
    cfg = _config(args)
    sset = read_series_set(_path(args.set, cfg, "series_set", "--set"))
    _, val_range, _ = cfg.split.ranges()
    rng = val_range if sset.axis.count >= val_range[1] else None
    K = args.k or cfg.cluster["n_clusters"] or None
    assign, sel = cluster_links(sset, rng, cfg.cluster["k_max"], cfg.seed, K)
    write_clusters_csv(assign, args.out)
    if sel is not None and args.curves:
        write_curves_csv(sel, args.curves)
    log.info("K = %d", assign.K)


def cmd_train(args) -> None:
    cfg = _config(args)
    sset = read_series_set(_path(args.set, cfg, "series_set", "--set"))
    method = args.method
    h = int(cfg.run["h"])
    train_range, val_range, _ = cfg.split.ranges()
    if sset.axis.count < val_range[1]:
        raise ValidationError(f"series set has {sset.axis.count} steps; training needs {val_range[1]}")
    data = sset.window(0, val_range[1])
    kw = fit_kwargs(method, cfg.methods[method], h)
    seed = cfg.seed
    full = (0, val_range[1])
    nn = dict(time_range=train_range, val_range=val_range, seed=seed)
    if method in ("baseline", "ar", "gb", "mlp", "lstm") and args.link is None:
        raise ValidationError(f"--link is required for {method}")
    if method == "baseline":
        models = [ContextualAverage.fit(data, args.link, time_range=full, **kw)]
    elif method == "ar":
        models = [ARModel.fit(data, args.link, time_range=full, **kw)]
    elif method == "gb":
        models = [GBModel.fit(data, args.link, args.step, time_range=full, **kw)]
    elif method == "mlp":
        models = [MLPModel.fit(data, args.link, **nn, **kw)]
    elif method == "lstm":
        models = [LSTMModel.fit(data, args.link, **nn, **kw)]
    elif method == "bmlp":
        models = [BMLPModel.fit(data, **nn, **kw)]
    elif method == "cmlp":
        clusters_path = _path(args.clusters, cfg, "clusters", "--clusters")
        cm = fit_cmlp_models(data, read_clusters_csv(clusters_path), **nn, **kw)
        models = [cm[c] for c in sorted(cm)]
    else:
        graph = read_graph_csv(_path(args.graph, cfg, "graph", "--graph"))
        models = [GCNNModel.fit(data, graph, **nn, **kw)]
    out = Path(args.out)
    if len(models) == 1:
        size = serialize(models[0], out)
        log.info("wrote %s (%d bytes)", out, size)
    else:
        for m in models:
            p = out.with_name(f"{out.stem}_c{m.cluster}{out.suffix}")
            log.info("wrote %s (%d bytes)", p, serialize(m, p))


def cmd_predict(args) -> None:
    model = deserialize(args.model)
    sset = read_series_set(args.set)
    t = sset.axis.index(_parse_time(args.at))
    pred = model.predict(sset, np.array([t]))[:, 0, :]
    stamp = format_utc(np.array([sset.axis.start_epoch + t * STEP_SECONDS]))[0]
    steps = [model.step] if model.kind == "gb" else range(1, model.h + 1)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        fh.write("link_id,origin_time,h,predicted_kmh\n")
        for i, l in enumerate(model.links):
            for j, k in enumerate(steps):
                fh.write(f"{l},{stamp},{k},{pred[i, j]:.4f}\n")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    methods = [m.strip() for m in args.methods.split(",")] if args.methods else list(cfg.run["methods"])
    bad = [m for m in methods if m not in METHOD_ORDER]
    if bad:
        raise ValidationError(f"unknown methods {bad}")
    sset = read_series_set(_path(args.set, cfg, "series_set", "--set"))
    graph_path = args.graph or cfg.paths.get("graph")
    graph: RoadGraph | None = read_graph_csv(graph_path) if graph_path else None
    clusters_path = args.clusters or cfg.paths.get("clusters")
    clusters = read_clusters_csv(clusters_path) if clusters_path else None
    n_links = args.n_links or int(cfg.run["n_links"])
    plot_links = [int(x) for x in args.plot_links.split(",")] if args.plot_links else []
    report = benchmark(methods, sset, graph, clusters, cfg.seed, split_spec=cfg.split,
                       n_links=min(n_links, len(sset)), hyper=cfg.methods, h=int(cfg.run["h"]),
                       threads=cfg.threads, plot_links=plot_links)
    write_report(report, _path(args.out, cfg, "output_dir", "--out"), sset)


def cmd_report(args) -> None:
    src = Path(args.report_dir) / "report.json"
    if not src.exists():
        raise ValidationError(f"{src} not found")
    Path(args.out).write_text(report_markdown(report_from_json(src.read_text(encoding="utf-8"))), encoding="utf-8")


def cmd_acf(args) -> None:
    sset = read_series_set(args.set)
    links = [args.link] if args.link is not None else sset.link_ids
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        fh.write("link_id,lag,acf\n")
        for l in links:
            if l not in sset.series:
                raise ValidationError(f"link {l} not in the series set")
            for lag, v in enumerate(autocorrelation(sset.series[l], args.max_lag)):
                fh.write(f"{l},{lag},{v:.6f}\n")


def cmd_dump_defaults(args) -> None:
    text = dump_defaults()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trafficast", description="Multi-horizon traffic speed forecasting")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="TOML run configuration")
        if seed:
            sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)

    g = sub.add_parser("generate", help="write a synthetic graph and observation log")
    common(g)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--links", type=int)
    g.add_argument("--weeks", type=int)
    g.add_argument("--graph-kind")
    g.add_argument("--truth", action="store_true", help="also write the noise-free ground truth")
    g.set_defaults(func=cmd_generate)

    pp = sub.add_parser("preprocess", help="clean, regularise and fill observations into a series set")
    common(pp)
    pp.add_argument("--graph")
    pp.add_argument("--observations")
    pp.add_argument("--start", help="axis start (UTC, 15-minute aligned)")
    pp.add_argument("--steps", type=int, help="number of 15-minute steps (default: up to the last reading)")
    pp.add_argument("--out", required=True)
    pp.add_argument("--coverage", help="CSV of kept and dropped links")
    pp.set_defaults(func=cmd_preprocess)

    c = sub.add_parser("cluster", help="wavelet features and K-means over links")
    common(c)
    c.add_argument("--set")
    c.add_argument("--k", type=int, help="fixed number of clusters (default: automatic)")
    c.add_argument("--out", required=True)
    c.add_argument("--curves", help="CSV of inertia and silhouette per K")
    c.set_defaults(func=cmd_cluster)

    t = sub.add_parser("train", help="fit one method and write its model file(s)")
    common(t)
    t.add_argument("--method", required=True, choices=METHOD_ORDER)
    t.add_argument("--set")
    t.add_argument("--graph")
    t.add_argument("--clusters")
    t.add_argument("--link", type=int)
    t.add_argument("--step", type=int, default=1, help="horizon step of a boosting model")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="forecast from one origin with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--set", required=True)
    pr.add_argument("--at", required=True, help="origin time (UTC)")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="benchmark methods on the test split")
    common(e)
    e.add_argument("--methods", help="comma-separated, e.g. baseline,ar,gcnn")
    e.add_argument("--set")
    e.add_argument("--graph")
    e.add_argument("--clusters")
    e.add_argument("--n-links", type=int)
    e.add_argument("--plot-links", help="comma-separated link ids to export plot data for")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="re-render the Markdown report from report.json")
    r.add_argument("--report-dir", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    a = sub.add_parser("acf", help="sample autocorrelation per link")
    a.add_argument("--set", required=True)
    a.add_argument("--link", type=int)
    a.add_argument("--max-lag", type=int, default=672)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_acf)

    d = sub.add_parser("dump-defaults", help="print the default configuration")
    d.add_argument("--out")
    d.set_defaults(func=cmd_dump_defaults)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        sys.stderr.write(f"error: invalid: {exc}\n")
        return EXIT_INVALID
    except (TrafficastError, RuntimeError, OSError, ValueError, IndexError) as exc:
        sys.stderr.write(f"error: runtime: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

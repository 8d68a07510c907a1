"""Run configuration: a TOML file layered over built-in defaults.

Precedence is command-line flags, then the file, then the defaults below.
Unknown tables or keys are rejected so typos do not silently fall back.
"""
from __future__ import annotations

import copy
import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .errors import ConfigurationError, ValidationError
from .evaluation import SplitSpec
from .hyperparams import METHOD_DEFAULTS, merged
from .pipeline import SynthSpec
from .predictors.base import METHOD_ORDER

PATH_KEYS = ("graph", "observations", "series_set", "clusters", "output_dir")
RUN_DEFAULTS = {"seed": 0, "threads": 1, "h": 12, "n_links": 50, "methods": list(METHOD_ORDER),
                "coverage_threshold": 0.20, "default_run": 4}
CLUSTER_DEFAULTS = {"k_max": 50, "n_clusters": 0}


@dataclass
class RunConfig:
    paths: dict = field(default_factory=lambda: {k: "" for k in PATH_KEYS})
    run: dict = field(default_factory=lambda: copy.deepcopy(RUN_DEFAULTS))
    synth: SynthSpec = field(default_factory=SynthSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    cluster: dict = field(default_factory=lambda: dict(CLUSTER_DEFAULTS))
    methods: dict = field(default_factory=lambda: copy.deepcopy(METHOD_DEFAULTS))

    @property
    def seed(self) -> int:
        return int(self.run["seed"])

    @property
    def threads(self) -> int:
        return int(self.run["threads"])

    def to_dict(self) -> dict:
        out = {"paths": dict(self.paths), "run": dict(self.run), "synth": dataclasses.asdict(self.synth),
               "split": dataclasses.asdict(self.split), "cluster": dict(self.cluster)}
        for m in METHOD_ORDER:
            if self.methods[m]:
                out[m] = dict(self.methods[m])
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        known = {"paths", "run", "synth", "split", "cluster", *METHOD_ORDER}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown configuration tables {sorted(unknown)}")
        cfg.paths = _overlay("paths", cfg.paths, data.get("paths", {}))
        cfg.run = _overlay("run", cfg.run, data.get("run", {}))
        cfg.cluster = _overlay("cluster", cfg.cluster, data.get("cluster", {}))
        try:
            cfg.synth = SynthSpec.from_dict(data.get("synth", {}))
            cfg.split = SplitSpec(**_overlay("split", dataclasses.asdict(cfg.split), data.get("split", {})))
        except (TypeError, ValidationError) as exc:
            raise ConfigurationError(str(exc)) from exc
        for m in METHOD_ORDER:
            if m in data:
                cfg.methods[m] = merged(m, data[m])
        bad = [m for m in cfg.run["methods"] if m not in METHOD_ORDER]
        if bad:
            raise ConfigurationError(f"unknown methods {bad}")
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if not path:
            return cls()
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


def _overlay(table: str, base: dict, update: dict) -> dict:
    out = dict(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigurationError(f"unknown key {key!r} in [{table}]")
        default = base[key]
        if isinstance(default, bool) != isinstance(value, bool) or (
                isinstance(default, (int, float)) and not isinstance(value, (int, float))) or (
                isinstance(default, str) and not isinstance(value, str)) or (
                isinstance(default, list) and not isinstance(value, list)):
            raise ConfigurationError(f"[{table}] {key} has the wrong type ({type(value).__name__})")
        out[key] = value
    return out


def dump_defaults() -> str:
    return RunConfig().dumps()

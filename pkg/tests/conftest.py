from datetime import datetime, timezone

import numpy as np
import pytest

from trafficast.pipeline import SynthSpec, generate_synthetic, preprocess
from trafficast.roadnet import LinkRecord, RoadGraph, SeriesSet, TimeAxis

# 2018-07-22 is a Sunday, so t=0 is (day 0, slot 0).
SUNDAY = datetime(2018, 7, 22, tzinfo=timezone.utc)


def chain_graph(n, length=500.0, ff=60.0):
    """Links 1..n along nodes 0 -> 1 -> ... -> n."""
    return RoadGraph([LinkRecord(i, i - 1, i, length, ff) for i in range(1, n + 1)])


def make_set(values, start=SUNDAY, links=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    links = list(range(1, values.shape[0] + 1)) if links is None else links
    return SeriesSet.from_matrix(TimeAxis(start, values.shape[1]), links, values)


@pytest.fixture(scope="session")
def small_synth():
    spec = SynthSpec(n_links=20, n_weeks=5, seed=3)
    graph, obs, truth = generate_synthetic(spec)
    sset, report = preprocess(obs, graph, spec.axis)
    return spec, graph, sset, truth


@pytest.fixture(scope="session")
def periodic_synth():
    spec = SynthSpec(n_links=8, n_weeks=5, seed=1, noise_std=0.0, wave_rate=0.0, missing_rate=0.0,
                     default_rate=0.0, timestamp_jitter_s=0.0)
    graph, obs, truth = generate_synthetic(spec)
    sset, _ = preprocess(obs, graph, spec.axis)
    return spec, graph, sset, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, repeated in the terminal summary so it
# shows up even when pytest captures output.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

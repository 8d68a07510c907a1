import logging
from datetime import timedelta

import numpy as np
import pytest

from trafficast.errors import ValidationError
from trafficast.pipeline import (
    Observations, RawObservation, SynthSpec, _Process, autocorrelation, default_speed_flags,
    fill_missing, filter_coverage, generate_synthetic, ingest_csv, preprocess, regularize,
    remove_default_speeds, wave_delays, write_observations_csv,
)
from trafficast.roadnet import SeriesSet, SpeedSeries, TimeAxis

from conftest import SUNDAY, chain_graph, make_set

T0 = int(SUNDAY.timestamp())


def _write(path, rows):
    path.write_text("segment_id,timestamp_utc,speed_kmh\n" + "".join(r + "\n" for r in rows))
    return path


def test_ingest_three_rows(tmp_path):
    p = _write(tmp_path / "o.csv", ["1,2018-07-22T00:00:00Z,40.5", "1,2018-07-22T00:15:00Z,41",
                                    "2,2018-07-22T00:00:00Z,12"])
    obs = ingest_csv(p)
    assert len(obs) == 3 and obs.rejected == 0
    assert obs[0] == RawObservation(1, T0, 40.5)


def test_ingest_counts_negative_speed(tmp_path):
    rows = [f"1,2018-07-22T00:{m % 60:02d}:00Z,30" for m in range(150)] + ["1,2018-07-22T01:00:00Z,-3"]
    obs = ingest_csv(_write(tmp_path / "o.csv", rows))
    assert len(obs) == 150 and obs.rejected == 1


def test_ingest_too_many_malformed(tmp_path):
    rows = ["1,2018-07-22T00:00:00Z,30", "1,garbage,30"]
    with pytest.raises(ValidationError, match="malformed"):
        ingest_csv(_write(tmp_path / "o.csv", rows))


def test_ingest_empty_file_warns(tmp_path, caplog):
    p = tmp_path / "o.csv"
    p.write_text("")
    with caplog.at_level(logging.WARNING):
        assert ingest_csv(p) == []
    assert "empty" in caplog.text


def test_ingest_missing_file(tmp_path):
    with pytest.raises(OSError):
        ingest_csv(tmp_path / "nope.csv")


def test_observation_csv_roundtrip(tmp_path):
    obs = [RawObservation(3, T0 + 60, 12.25), RawObservation(1, T0, 0.1 + 0.2)]
    write_observations_csv(obs, tmp_path / "o.csv")
    assert list(ingest_csv(tmp_path / "o.csv")) == obs


def _series_obs(link, speeds, start=T0):
    return [RawObservation(link, start + 900 * i, float(v)) for i, v in enumerate(speeds)]


def test_default_run_of_six_removed():
    g = chain_graph(1, ff=60.0)
    obs = _series_obs(1, [30, 60, 60, 60, 60, 60, 60, 31])
    kept = remove_default_speeds(obs, g)
    assert [o.speed_kmh for o in kept] == [30.0, 31.0]


def test_isolated_free_flow_value_kept():
    g = chain_graph(1, ff=60.0)
    obs = _series_obs(1, [30, 60, 31, 60, 60, 60, 32])
    assert default_speed_flags(obs, g).sum() == 0


def test_default_flags_use_time_order_not_input_order():
    g = chain_graph(1, ff=60.0)
    obs = _series_obs(1, [60, 20, 60, 60, 60, 21])
    # shuffled input: the run is positions 2..4 in time, only three long
    shuffled = [obs[i] for i in (4, 0, 5, 2, 1, 3)]
    assert default_speed_flags(shuffled, g).sum() == 0


def test_default_flags_unknown_link():
    with pytest.raises(ValidationError, match="unknown link"):
        default_speed_flags([RawObservation(9, T0, 1.0)], chain_graph(2))


def test_injected_defaults_are_found():
    spec = SynthSpec(n_links=12, n_weeks=3, seed=5, default_rate=0.02)
    graph, obs, truth = generate_synthetic(spec)
    flags = default_speed_flags(obs, graph)
    # map each reading back to its grid cell (jitter is under half a step)
    row = {lid: k for k, lid in enumerate(truth.link_ids)}
    t = np.array([round((o.timestamp - spec.axis.start_epoch) / 900) for o in obs])
    r = np.array([row[o.link_id] for o in obs])
    injected = truth.default_injected[r, t]
    assert injected.sum() > 100
    assert flags[injected].mean() >= 0.95
    assert not flags[~injected].any()


def test_regularize_interpolates_between_neighbours():
    axis = TimeAxis(SUNDAY, 3)
    obs = [RawObservation(1, T0 + 7 * 60, 20.0), RawObservation(1, T0 + 22 * 60, 30.0)]
    s = regularize(obs, axis).series[1]
    assert s.values[1] == pytest.approx(20 + 10 * 8 / 15)
    assert list(s.mask) == [False, True, False]


def test_regularize_on_grid_copy(rng):
    v = rng.uniform(5, 80, 10)
    s = regularize(_series_obs(4, v), TimeAxis(SUNDAY, 10)).series[4]
    np.testing.assert_array_equal(s.values, v)
    assert s.mask.all()


def test_regularize_long_gap_masked():
    axis = TimeAxis(SUNDAY, 9)
    obs = [RawObservation(1, T0, 10.0), RawObservation(1, T0 + 2 * 3600, 20.0)]
    s = regularize(obs, axis).series[1]
    assert s.mask[0] and s.mask[8]
    assert not s.mask[1:8].any()


def test_regularize_duplicate_timestamp_keeps_last():
    obs = [RawObservation(1, T0, 10.0), RawObservation(1, T0, 12.0)]
    assert regularize(obs, TimeAxis(SUNDAY, 1)).series[1].values[0] == 12.0


def test_regularize_link_without_readings():
    s = regularize([], TimeAxis(SUNDAY, 4), links=[7]).series[7]
    assert not s.mask.any()


def _masked(values):
    values = np.array(values, dtype=float)
    mask = ~np.isnan(values)
    return SeriesSet(TimeAxis(SUNDAY, len(values)), {1: SpeedSeries(1, values, mask)})


@pytest.mark.parametrize("raw, filled", [
    ([10, np.nan, 20], [10, 15, 20]),
    ([np.nan, np.nan, 8, 9], [8, 8, 8, 9]),
    ([1, 2, 3], [1, 2, 3]),
])
def test_fill_missing(raw, filled):
    out = fill_missing(_masked(raw)).series[1]
    np.testing.assert_allclose(out.values, filled)
    np.testing.assert_array_equal(out.mask, ~np.isnan(raw))


def test_fill_missing_entirely_missing():
    with pytest.raises(ValidationError):
        fill_missing(_masked([np.nan, np.nan]))


def test_filter_coverage_threshold():
    n = 1000
    a = np.ones(n)
    b = np.ones(n)
    a[:250] = np.nan   # 25 % missing
    b[:199] = np.nan   # 19.9 % missing
    sset = SeriesSet(TimeAxis(SUNDAY, n), {1: SpeedSeries(1, a, ~np.isnan(a)),
                                           2: SpeedSeries(2, b, ~np.isnan(b))})
    kept, report = filter_coverage(sset)
    assert kept.link_ids == [2]
    assert report.dropped[0][0] == 1 and report.dropped[0][1] == pytest.approx(0.25)


def test_preprocess_output_is_complete(small_synth):
    _, graph, sset, _ = small_synth
    m = sset.matrix()
    assert np.isfinite(m).all() and (m >= 0).all()
    assert set(sset.link_ids) <= set(graph.link_ids)


def test_noise_free_synthetic_is_weekly_periodic():
    spec = SynthSpec(n_links=6, n_weeks=3, seed=2, noise_std=0.0, wave_rate=0.0, missing_rate=0.0,
                     default_rate=0.0, timestamp_jitter_s=0.0)
    _, _, truth = generate_synthetic(spec)
    c = truth.clean
    np.testing.assert_array_equal(c[:, :672], c[:, 672:1344])
    np.testing.assert_array_equal(c[:, :672], c[:, 1344:])


def test_synthetic_is_deterministic():
    spec = SynthSpec(n_links=10, n_weeks=3, seed=11)
    g1, o1, t1 = generate_synthetic(spec)
    g2, o2, t2 = generate_synthetic(spec)
    assert g1 == g2 and list(o1) == list(o2)
    np.testing.assert_array_equal(t1.clean, t2.clean)


def test_synthetic_spec_validation():
    with pytest.raises(ValidationError):
        SynthSpec(wave_rate=2.0).validate()
    with pytest.raises(ValidationError):
        SynthSpec.from_dict({"bogus": 1})


def test_wave_dip_arrives_upstream_after_travel_time():
    # chain 1 -> 2 -> 3 -> 4; a wave starting on link 4 moves against traffic
    graph = chain_graph(4, length=1000.0, ff=60.0)
    spec = SynthSpec(n_links=4, n_weeks=3, wave_speed_kmh=5.0, wave_decay_m=50_000.0)
    proc = _Process.draw(spec, graph, np.random.default_rng(0))
    seconds = np.broadcast_to(np.arange(0, 86400.0, 60.0), (4, 1440))
    proc.waves = []
    calm = proc.evaluate(seconds)
    t0 = 10 * 3600.0
    proc.waves = [(4, t0, 1.0)]
    dip = calm - proc.evaluate(seconds)
    travel = 1000.0 / (5.0 / 3.6)  # one link length at the propagation speed
    for hops, row in ((0, 3), (1, 2), (2, 1), (3, 0)):
        assert seconds[row, np.argmax(dip[row])] == pytest.approx(t0 + hops * travel, abs=60)
    assert wave_delays(graph, 4, 5.0, 10_000.0) == pytest.approx({4: 0, 3: travel, 2: 2 * travel, 1: 3 * travel})


def test_autocorrelation_cosine():
    x = np.cos(2 * np.pi * np.arange(96 * 200) / 96)
    r = autocorrelation(x, 96)
    assert r[96] == pytest.approx(1.0, abs=0.01)
    assert r[48] == pytest.approx(-1.0, abs=0.01)


def test_autocorrelation_white_noise(rng):
    r = autocorrelation(rng.normal(size=10_000), 50)
    assert r[0] == pytest.approx(1.0)
    assert np.abs(r[1:]).max() < 0.05


def test_autocorrelation_synthetic_periodic(small_synth):
    _, _, sset, _ = small_synth
    r96 = [autocorrelation(sset.series[lid], 96)[96] for lid in sset.link_ids]
    assert np.median(r96) > 0.5


def test_autocorrelation_constant():
    with pytest.raises(ValidationError, match="constant"):
        autocorrelation(np.full(10, 3.0), 2)

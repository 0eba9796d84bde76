import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from povmtomo.core import DomainError
from povmtomo.ingest import (
    TimeBinnedFrequencies,
    TimestampStream,
    bin_clicks,
    click_window,
    correlate,
    dead_time_filter,
    find_window_center,
    ingest_streams,
    mean_photon_number,
    windowed_click_probability,
)

US = 1_000_000


def brute_force_dead_time(t, ch, window_ps):
    keep = []
    seen = []
    for ti, ci in zip(t, ch):
        if ci == 1:
            ok = all(ti - s >= window_ps for s in seen)
            seen.append(ti)
            keep.append(ok)
        else:
            keep.append(True)
    return np.array(keep, dtype=bool)


def stream(triggers, clicks):
    return TimestampStream.from_channels(triggers, clicks)


def test_click_within_dead_time_is_dropped():
    s = stream([0], [100, 100 + 5 * US, 100 + 18 * US])
    out = dead_time_filter(s, 10.0, 2.0)
    assert out.clicks.tolist() == [100, 100 + 18 * US]
    assert out.triggers.tolist() == [0]


def test_exclusion_counts_discarded_clicks_too():
    # the third click follows a dropped click by less than the window
    s = stream([], [0, 8 * US, 16 * US])
    out = dead_time_filter(s, 10.0, 2.0)
    assert out.clicks.tolist() == [0]


def test_boundary_is_kept():
    s = stream([], [0, 12 * US])
    assert dead_time_filter(s, 10.0, 2.0).clicks.tolist() == [0, 12 * US]


@given(st.integers(0, 2**31), st.integers(1, 300))
def test_filter_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, 50 * US, n))
    ch = rng.integers(0, 2, n)
    s = TimestampStream(ch, t)
    keep = brute_force_dead_time(s.t_ps, s.channel, 12 * US)
    out = dead_time_filter(s, 10.0, 2.0)
    assert np.array_equal(out.t_ps, s.t_ps[keep])
    assert np.array_equal(dead_time_filter(out, 10.0, 2.0).t_ps, out.t_ps)


def test_correlate_assigns_each_click_to_the_latest_trigger():
    s = stream([0, 1000, 2000], [5, 999, 1000, 2500, 2999])
    rel, n = correlate(s)
    assert n == 3 and rel.tolist() == [5, 999, 0, 500, 999]
    rel, _ = correlate(stream([100], [50, 150]))
    assert rel.tolist() == [50]
    rel, _ = correlate(stream([0], [10, 2000]), rep_period_ps=1000)
    assert rel.tolist() == [10]
    with pytest.raises(ValueError):
        correlate(stream([], [1]))


def test_window_centre_picks_the_main_peak_of_a_bimodal_histogram():
    rng = np.random.default_rng(0)
    rel = np.concatenate([rng.normal(3000, 40, 20000), rng.normal(9000, 40, 5000)])
    c = find_window_center(rel)
    assert abs(c - 3000) < 26
    lo, hi = click_window(rel, 8.0)
    assert hi - lo == 8000 and lo < 3000 < hi
    p = windowed_click_probability(rel, 10**5, 8.0)
    assert p == pytest.approx(np.count_nonzero((rel >= lo) & (rel < hi)) / 10**5)
    assert find_window_center(np.zeros(0)) == 0.0


def test_bin_clicks_cover_the_window():
    edges, counts = bin_clicks(np.array([0, 12, 13, 25, 26, 38, 39]), 10, 13.0, (0.0, 39.0))
    assert edges.tolist() == [0, 13, 26, 39]
    assert counts.tolist() == [2, 2, 2]
    with pytest.raises(ValueError):
        bin_clicks(np.array([1]), 10, 13.0, (0.0, 40.0))
    with pytest.raises(DomainError):
        bin_clicks(np.array([1]), 0, 13.0, (0.0, 39.0))


def test_mean_photon_number():
    # 1 nW at 1 MHz, 1550 nm, 60 dB: 1e-21 J per pulse over 1.2816e-19 J per photon
    mu = mean_photon_number(1e-9, 1e6, 1550.0, 60.0)
    assert mu == pytest.approx(1e-21 / (6.62607015e-34 * 299792458.0 / 1550e-9), rel=1e-12)
    with pytest.raises(DomainError):
        mean_photon_number(0.0, 1e6, 1550.0)


def test_stream_csv_roundtrip(tmp_path):
    s = stream([0, 10**8], [123, 10**8 + 77])
    s.write_csv(tmp_path / "s.csv")
    r = TimestampStream.read_csv(tmp_path / "s.csv")
    assert np.array_equal(r.t_ps, s.t_ps) and np.array_equal(r.channel, s.channel)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        TimestampStream.read_csv(tmp_path / "bad.csv")


def test_stream_validation():
    with pytest.raises(ValueError):
        TimestampStream([0, 2], [1, 2])
    with pytest.raises(ValueError):
        TimestampStream([1, 1], [5, 4])


def test_binned_csv_roundtrip(tmp_path):
    b = TimeBinnedFrequencies(np.array([0.0, 13.0, 26.0]), np.array([[1, 2], [3, 4]]), [10, 10], [0.5, 1.0])
    b.write_csv(tmp_path / "b.csv")
    r = TimeBinnedFrequencies.read_csv(tmp_path / "b.csv")
    assert np.array_equal(r.counts, b.counts) and np.array_equal(r.bin_edges, b.bin_edges)
    assert r.frequency_table().result_labels == ("bin_0", "bin_1")
    with pytest.raises(DomainError):
        TimeBinnedFrequencies(np.array([0.0, 1.0]), np.array([[11]]), [10], [1.0])


def test_ingest_streams_end_to_end():
    period = 10**8
    trig = np.arange(4) * period
    streams = [
        stream(trig, trig[[0, 2]] + np.array([1040, 1053])),
        stream(trig, trig[[1, 3]] + np.array([1066, 5000])),
    ]
    # the window snaps to the absolute 13 ps lattice
    table, binned = ingest_streams(streams, [1.0, 2.0], 10.0, window_ns=0.039, bin_ps=13.0, center=1059.5)
    assert table.counts[:, 0].tolist() == [2, 1]
    assert table.trials.tolist() == [4, 4]
    assert binned.bin_edges.tolist() == [1040, 1053, 1066, 1079]
    assert binned.counts.tolist() == [[1, 1, 0], [0, 0, 1]]

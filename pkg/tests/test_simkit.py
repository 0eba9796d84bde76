import csv

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from povmtomo.core import DomainError, PovmDiagonal, ProbeEnsemble, ideal_detector_povm
from povmtomo.jitter import (
    JitterDistribution,
    PulseShape,
    TimeGrid,
    convolve_masses,
    output_grid,
)
from povmtomo.simkit import (
    GroundTruthSpec,
    density_from_first_clicks,
    first_clicks_to_stream,
    frequency_table_from_first_clicks,
    histogram_first_clicks,
    outcome_probabilities,
    run_benchmark,
    sample_clicks,
    simulate_gouzien_first_clicks,
    substream,
)

DT = 13.0


def z_score(count, n, p):
    return (count / n - p) / np.sqrt(p * (1 - p) / n)


def test_substreams_are_deterministic_and_distinct():
    a = substream(3, 1, 2).random(5)
    assert np.array_equal(a, substream(3, 1, 2).random(5))
    assert not np.array_equal(a, substream(3, 2, 1).random(5))


def test_vacuum_never_clicks():
    t = sample_clicks(ideal_detector_povm(1.0, 10), ProbeEnsemble([0.0], 10**5), 0)
    assert t.counts[0, 0] == 0


def test_bright_probe_clicks_almost_always():
    t = sample_clicks(ideal_detector_povm(1.0, 60), ProbeEnsemble([29.0], 10**6), 1)
    p = 1 - np.exp(-29)
    assert t.counts[0, 0] >= 10**6 - 5 * np.sqrt(10**6 * p * (1 - p)) - 1


def test_click_frequency_matches_high_precision_oracle():
    p = float(1 - mpmath.e ** mpmath.mpf(-1.5))
    t = sample_clicks(ideal_detector_povm(0.3, 30), ProbeEnsemble([5.0], 10**6), 2)
    assert abs(z_score(t.counts[0, 0], 10**6, p)) < 5


def test_tail_absorption_gives_exact_ideal_probabilities():
    mus = np.array([0.5, 5.0, 40.0])
    p = outcome_probabilities(ideal_detector_povm(0.3, 20), mus)
    # every photon beyond the cutoff is treated as the cutoff photon
    assert np.all(p[:, 0] <= -np.expm1(-0.3 * mus) + 1e-15)
    np.testing.assert_allclose(outcome_probabilities(ideal_detector_povm(0.3, 200), mus)[:, 0], -np.expm1(-0.3 * mus), rtol=1e-12)
    with pytest.raises(ValueError):
        outcome_probabilities(ideal_detector_povm(0.3, 20), mus, tail="wrap")


def test_multi_outcome_sampling_respects_the_remainder():
    theta = np.column_stack([np.full(6, 0.2), np.full(6, 0.3)])
    t = sample_clicks(PovmDiagonal(theta, ("a", "b")), ProbeEnsemble([1.0, 2.0], 10**5), 4)
    assert np.all(t.counts.sum(axis=1) <= 10**5)
    for col, p in ((0, 0.2), (1, 0.3)):
        assert np.all(np.abs(z_score(t.counts[:, col], 10**5, p)) < 5)


def test_sampling_checks():
    with pytest.raises(DomainError):
        sample_clicks(PovmDiagonal(np.full(3, 1.5)), ProbeEnsemble([1.0], 10), 0)
    with pytest.raises(DomainError):
        sample_clicks(ideal_detector_povm(0.5, 3), ProbeEnsemble([1.0], 10.5), 0)
    with pytest.raises(DomainError):
        GroundTruthSpec.ideal(1.2)
    with pytest.raises(DomainError):
        GroundTruthSpec("made_up")


@settings(max_examples=20)
@given(st.integers(0, 2**31))
def test_same_seed_same_table(seed):
    ens = ProbeEnsemble(np.arange(5.0), 1000)
    a = sample_clicks(ideal_detector_povm(0.4, 12), ens, seed)
    b = sample_clicks(ideal_detector_povm(0.4, 12), ens, seed)
    assert np.array_equal(a.counts, b.counts)


def test_frequencies_concentrate_with_more_trials():
    p = outcome_probabilities(ideal_detector_povm(0.3, 40), np.arange(10.0))[:, 0]
    errs = []
    for n in (10**2, 10**4, 10**6):
        t = sample_clicks(ideal_detector_povm(0.3, 40), ProbeEnsemble(np.arange(10.0), n), 8)
        errs.append(np.abs(t.freq[:, 0] - p).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 5 * np.sqrt(0.25 / 10**6)


def test_random_uniform_truth_resamples():
    spec = GroundTruthSpec.random_uniform(5)
    rng = substream(0)
    assert not np.array_equal(spec.draw(rng), spec.draw(rng))


def test_benchmark_is_reproducible(tmp_path):
    spec = GroundTruthSpec.ideal(0.5, 10)
    kw = dict(M_grid=(10, 100), N=4, seed=5, mus=np.arange(11.0))
    a, b = run_benchmark(spec, **kw), run_benchmark(spec, **kw)
    for s in a.schemes:
        assert np.array_equal(a.linf[s], b.linf[s])
    assert a.linf["adaptive"].shape == (2, 4)
    a.write_csv(tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert rows[0] == ["scheme", "M", "replication", "linf", "fidelity"] and len(rows) == 1 + 3 * 2 * 4
    assert len(a.summary()["stats"]) == 6


def test_noiseless_adaptive_matches_unregularized():
    res = run_benchmark(GroundTruthSpec.ideal(0.3, 29), schemes=("none", "adaptive"), M_grid=(10**4,), N=1,
                        seed=0, noiseless=True)
    d = abs(res.mean("adaptive")[0] - res.mean("none")[0])
    assert d < 1e-3
    assert np.all(res.std("adaptive") == 0)


def test_large_M_schemes_within_factor_two():
    res = run_benchmark(GroundTruthSpec.ideal(0.3, 29), M_grid=(10**4,), N=100, seed=11)
    means = [float(res.mean(s)[0]) for s in res.schemes]
    assert max(means) <= 2 * min(means), dict(zip(res.schemes, means))


def test_no_efficiency_no_first_clicks():
    t = simulate_gouzien_first_clicks(0.0, PulseShape.gaussian(240.0, DT, mu=10.0), JitterDistribution.gaussian(100.0, DT), 1000, 0)
    assert np.all(np.isnan(t))


def test_bright_pulses_click_earlier_than_the_peak():
    pulse = PulseShape.gaussian(240.0, DT, mu=50.0)
    t = simulate_gouzien_first_clicks(1.0, pulse, JitterDistribution.delta(DT), 10**5, 3)
    grid = output_grid(pulse, JitterDistribution.delta(DT))
    _, probs, _ = histogram_first_clicks(t, DT, (grid.start_ps, grid.stop_ps))
    peak = pulse.grid.times[np.argmax(pulse.intensity)]
    assert grid.times[np.argmax(probs)] < peak - 2 * DT


def test_single_photon_regime_follows_convolution():
    # per-pulse probabilities against eta mu (J * I); the oracle drops only O(mu**2)
    mu = 0.01
    pulse = PulseShape.gaussian(240.0, DT, mu=mu)
    jit = JitterDistribution.gaussian(100.0, DT)
    t = simulate_gouzien_first_clicks(1.0, pulse, jit, 10**6, 6)
    grid = output_grid(pulse, jit)
    _, probs, _ = histogram_first_clicks(t, DT, (grid.start_ps, grid.stop_ps))
    oracle = mu * convolve_masses(pulse.intensity, jit.mass)
    tv = 0.5 * (np.abs(probs - oracle).sum() + abs(probs.sum() - oracle.sum()))
    assert tv < 0.02


def test_first_click_sampler_is_seeded():
    pulse = PulseShape.gaussian(240.0, DT, mu=3.0)
    jit = JitterDistribution.gaussian(100.0, DT)
    a = simulate_gouzien_first_clicks(0.5, pulse, jit, 5000, 9, chunk=700)
    b = simulate_gouzien_first_clicks(0.5, pulse, jit, 5000, 9, chunk=700)
    assert np.array_equal(a, b, equal_nan=True)
    assert np.all(a[~np.isnan(a)] == np.floor(a[~np.isnan(a)]))


def test_histogram_examples():
    edges, p, c = histogram_first_clicks(np.full(10, np.nan), 13.0, (0.0, 130.0))
    assert edges.size == 11 and np.all(p == 0)
    _, p, c = histogram_first_clicks(np.array([20.0, 21.0, np.nan, np.nan]), 13.0, (0.0, 130.0))
    assert c.tolist() == [0, 2] + [0] * 8 and p.sum() == 0.5
    _, p, _ = histogram_first_clicks(np.array([]), 13.0, (0.0, 26.0))
    assert p.tolist() == [0.0, 0.0]
    with pytest.raises(DomainError):
        histogram_first_clicks(np.array([1.0]), 0.0, (0.0, 13.0))


def test_uniform_times_give_flat_histogram():
    rng = np.random.default_rng(12)
    n = 10**5
    t = np.floor(rng.uniform(0, 1300.0, n))
    _, p, c = histogram_first_clicks(t, 13.0, (0.0, 1300.0))
    assert np.all(np.abs(z_score(c, n, 0.01)) < 5)


def test_density_and_stream_exports():
    grid = TimeGrid(0.0, DT, 10)
    times = np.array([0.0, 14.0, np.nan, 129.0])
    d = density_from_first_clicks(times, grid)
    assert d.n_pulses == 4 and d.probabilities[[0, 1, 9]].tolist() == [0.25, 0.25, 0.25]
    s = first_clicks_to_stream(times, rep_period_ps=1000)
    assert s.triggers.tolist() == [0, 1000, 2000, 3000]
    assert s.clicks.tolist() == [0, 1014, 3129]
    with pytest.raises(DomainError):
        first_clicks_to_stream(np.array([2000.0]), rep_period_ps=1000)


def test_frequency_table_from_first_clicks():
    sets = [np.array([1.0, np.nan, 30.0]), np.array([np.nan, np.nan])]
    table, counts = frequency_table_from_first_clicks(sets, (0.0, 26.0), 13.0)
    assert table.counts[:, 0].tolist() == [1, 0] and table.trials.tolist() == [3, 2]
    assert counts.tolist() == [[1, 0], [0, 0]]

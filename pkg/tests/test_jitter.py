import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from povmtomo.core import DimensionError, DomainError
from povmtomo.jitter import (
    ClickDensity,
    JitterDeconvolution,
    JitterDistribution,
    PulseShape,
    TimeGrid,
    click_density_wavepacket,
    click_rate,
    convolve_masses,
    deconvolution_gradient,
    deconvolution_objective,
    deconvolve_jitter,
    extract_rate,
    l1_distance,
    model_consistency_report,
    reconvolve_check,
    toeplitz_operator,
)

DT = 13.0


def test_zero_efficiency_gives_no_clicks():
    d = click_density_wavepacket(0.0, PulseShape.gaussian(240.0, DT, mu=5.0), JitterDistribution.gaussian(100.0, DT))
    assert d.total == 0.0 and np.all(d.probabilities == 0)


def test_rectangular_pulse_gives_truncated_exponential():
    # constant rate over n bins: P_i = exp(-i m) (1 - exp(-m))
    n, eta, mu = 20, 0.5, 4.0
    pulse = PulseShape.rectangular(n * DT, DT, mu=mu)
    d = click_density_wavepacket(eta, pulse, JitterDistribution.delta(DT))
    m = mpmath.mpf(eta * mu) / n
    ref = [float(mpmath.e ** (-i * m) * (1 - mpmath.e ** (-m))) for i in range(n)]
    np.testing.assert_allclose(d.probabilities[:n], ref, rtol=1e-13)
    assert np.all(d.probabilities[n:] == 0)


@pytest.mark.parametrize("mu", [0.1, 1.0, 10.0, 50.0])
def test_total_click_probability_high_precision(mu):
    eta = 0.169
    jit = JitterDistribution.gaussian(100.0, DT)
    d = click_density_wavepacket(eta, PulseShape.gaussian(240.0, DT, mu=mu), jit)
    ref = 1 - mpmath.e ** (-mpmath.mpf(eta) * mu * mpmath.mpf(float(jit.mass.sum())))
    assert d.total == pytest.approx(float(ref), rel=1e-12)


def test_constant_hazard_is_recovered_exactly():
    pulse = PulseShape.rectangular(30 * DT, DT, mu=3.0)
    d = click_density_wavepacket(0.7, pulse, JitterDistribution.delta(DT))
    r = extract_rate(d, min_survivors=None)
    np.testing.assert_allclose(r.rate[:30], 0.7 * 3.0 / (30 * DT), rtol=1e-12)
    assert r.eta_mu == pytest.approx(2.1, rel=1e-12)


def test_pointwise_form_differs_by_order_dt():
    pulse = PulseShape.gaussian(240.0, DT, mu=10.0)
    jit = JitterDistribution.gaussian(100.0, DT)
    a = click_density_wavepacket(0.169, pulse, jit).probabilities
    b = click_density_wavepacket(0.169, pulse, jit, form="pointwise").probabilities
    # m - (1 - exp(-m)) lies in [0, m**2 / 2]
    m = click_rate(0.169, pulse, jit).rate * DT
    assert np.all(b >= a) and np.all(b - a <= 0.5 * m * b + 1e-18)
    assert (b - a).max() > 0
    with pytest.raises(ValueError):
        click_density_wavepacket(0.169, pulse, jit, form="midpoint")


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.floats(0.05, 40.0), st.floats(0.05, 1.0))
def test_extract_rate_inverts_forward_model(seed, mu, eta):
    rng = np.random.default_rng(seed)
    n_pulse = int(rng.integers(1, 25))
    pulse = PulseShape.from_samples(TimeGrid(0.0, DT, n_pulse), rng.uniform(0, 1, n_pulse) + 1e-3, mu=mu)
    n_lag = int(rng.integers(1, 40))
    jit = JitterDistribution.from_mass(DT, rng.dirichlet(np.ones(n_lag)))
    d = click_density_wavepacket(eta, pulse, jit)
    r = extract_rate(d, min_survivors=None)
    truth = click_rate(eta, pulse, jit)
    valid = r.n_valid
    # S = 1 - sum(P) carries an absolute rounding error of a few ulp, amplified by 1 / S
    survive = 1.0 - np.concatenate([[0.0], np.cumsum(d.probabilities)[:-1]])
    err = np.abs(r.rate[:valid] - truth.rate[:valid]) * DT
    assert np.all(err <= 1e-9 * truth.rate[:valid] * DT + 1e-14 / survive[:valid])
    if not r.saturated:
        assert r.eta_mu == pytest.approx(eta * mu, rel=1e-9 + 1e-14 * np.exp(eta * mu) / (eta * mu))


def test_ratio_form_underestimates_high_rates():
    pulse = PulseShape.gaussian(240.0, DT, mu=50.0)
    jit = JitterDistribution.gaussian(100.0, DT)
    d = click_density_wavepacket(0.169, pulse, jit)
    log_rate, ratio_rate = extract_rate(d), extract_rate(d, form="ratio")
    n = min(log_rate.n_valid, ratio_rate.n_valid)
    assert np.all(ratio_rate.rate[:n] <= log_rate.rate[:n] * (1 + 1e-12))
    with pytest.raises(ValueError):
        extract_rate(d, form="sqrt")


def test_saturation_truncates_and_flags():
    pulse = PulseShape.rectangular(40 * DT, DT, mu=200.0)
    d = click_density_wavepacket(1.0, pulse, JitterDistribution.delta(DT))
    r = extract_rate(ClickDensity.from_probabilities(d.grid, d.probabilities, n_pulses=10**6))
    assert r.saturated and r.n_valid < 40
    assert np.all(r.rate[r.n_valid:] == 0)


@pytest.mark.parametrize("a,b,expected", [
    ([1.0], [1.0], [1.0]),
    ([1, 1, 1], [1, 1, 1], [1, 2, 3, 2, 1]),
])
def test_convolution_shapes(a, b, expected):
    out = convolve_masses(np.asarray(a, float), np.asarray(b, float))
    np.testing.assert_allclose(out, expected)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(-5, 5), st.integers(0, 2**31))
def test_toeplitz_operator_is_convolution(n_pulse, n_lag, shift, seed):
    rng = np.random.default_rng(seed)
    pulse, w = rng.uniform(size=n_pulse), rng.uniform(size=n_lag)
    full = np.convolve(pulse, w)
    n_out = n_pulse + n_lag + 3
    T = toeplitz_operator(pulse, n_out, n_lag, shift)
    ref = np.zeros(n_out)
    for i in range(n_out):
        j = i + shift
        if 0 <= j < full.size:
            ref[i] = full[j]
    np.testing.assert_allclose(T @ w, ref, atol=1e-14)


@given(st.integers(0, 2**31))
def test_deconvolution_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    T = toeplitz_operator(rng.dirichlet(np.ones(6)), 30, 12, 0)
    w, y, s = rng.uniform(size=12), rng.uniform(size=30), float(rng.uniform(0, 1))
    g = deconvolution_gradient(w, y, T, s)
    h = 1e-4
    fd = np.array([
        (deconvolution_objective(w + h * e, y, T, s) - deconvolution_objective(w - h * e, y, T, s)) / (2 * h)
        for e in np.eye(12)
    ])
    np.testing.assert_allclose(fd, g, rtol=1e-7, atol=1e-10)


def test_delta_pulse_deconvolution_returns_the_jitter():
    jit = JitterDistribution.gaussian(60.0, DT)
    pulse = PulseShape.delta(DT, mu=0.5)
    r = extract_rate(click_density_wavepacket(0.3, pulse, jit), min_survivors=None)
    dec = deconvolve_jitter(r, pulse, smooth_weight=0.0, n_lags=jit.density.size)
    assert l1_distance(dec.jitter.mass, jit.mass) < 1e-6


@pytest.mark.parametrize("mu", [1.0, 10.0])
def test_gaussian_round_trip(mu):
    pulse = PulseShape.gaussian(240.0, DT, mu=mu)
    jit = JitterDistribution.gaussian(100.0, DT)
    dec = deconvolve_jitter(extract_rate(click_density_wavepacket(0.169, pulse, jit)), pulse, n_pulses=10**6)
    assert dec.converged
    assert l1_distance(dec.jitter.mass, jit.mass) < 0.02
    assert dec.smooth_weight > 0


def test_default_weight_needs_pulse_count():
    pulse = PulseShape.gaussian(240.0, DT)
    r = extract_rate(click_density_wavepacket(0.169, pulse, JitterDistribution.gaussian(100.0, DT)))
    with pytest.raises(ValueError):
        deconvolve_jitter(r, pulse)


def test_reconvolution_residual_is_small_for_the_true_jitter():
    pulse = PulseShape.gaussian(240.0, DT, mu=5.0)
    jit = JitterDistribution.gaussian(100.0, DT)
    r = extract_rate(click_density_wavepacket(0.169, pulse, jit))
    chk = reconvolve_check(jit, pulse, r)
    assert chk.linf < 1e-9
    free = reconvolve_check(jit, pulse)
    assert free.rate_norm.sum() == pytest.approx(jit.mass.sum())


def test_consistency_single_dataset_has_no_pairs():
    pulse = PulseShape.gaussian(240.0, DT)
    jit = JitterDistribution.gaussian(100.0, DT)
    d = click_density_wavepacket(0.169, pulse.with_mu(2.0), jit)
    d = ClickDensity.from_probabilities(d.grid, d.probabilities, n_pulses=10**6)
    rep = model_consistency_report([(2.0, d)], pulse)
    assert rep.max_rate_l1 == 0.0 and rep.to_json()["rate_l1"] == []


def test_consistency_rejects_mismatched_grids():
    pulse = PulseShape.gaussian(240.0, DT)
    a = ClickDensity(TimeGrid(0.0, DT, 10), np.full(10, 1e-4), 1000)
    b = ClickDensity(TimeGrid(0.0, DT, 12), np.full(12, 1e-4), 1000)
    with pytest.raises(DimensionError):
        model_consistency_report([(1.0, a), (2.0, b)], pulse)


def test_analytic_consistency_and_counterexample():
    pulse = PulseShape.gaussian(240.0, DT)

    def dens(mu, jit):
        d = click_density_wavepacket(0.169, pulse.with_mu(mu), jit)
        return ClickDensity.from_probabilities(TimeGrid(0.0, DT, 200), np.pad(d.probabilities, (0, 200))[:200], 10**6)

    same = JitterDistribution.gaussian(100.0, DT)
    ok = model_consistency_report([(m, dens(m, same)) for m in (1.0, 10.0, 50.0)], pulse)
    assert ok.max_rate_l1 < 1e-6
    moving = [JitterDistribution.gaussian(s, DT, c) for s, c in ((100.0, 500.0), (70.0, 450.0), (40.0, 400.0))]
    bad = model_consistency_report([(m, dens(m, j)) for m, j in zip((1.0, 10.0, 50.0), moving)], pulse)
    assert bad.max_rate_l1 > 0.03


@given(st.floats(0.01, 20.0), st.floats(0.01, 20.0))
def test_total_click_probability_increases_with_mu(a, b):
    lo, hi = sorted((a, b))
    pulse = PulseShape.gaussian(240.0, DT)
    jit = JitterDistribution.gaussian(100.0, DT)
    pa = click_density_wavepacket(0.169, pulse.with_mu(lo), jit).total
    pb = click_density_wavepacket(0.169, pulse.with_mu(hi), jit).total
    assert pa <= pb


def test_value_type_checks():
    with pytest.raises(DomainError):
        click_rate(1.5, PulseShape.delta(DT), JitterDistribution.delta(DT))
    with pytest.raises(ValueError):
        JitterDistribution.from_mass(DT, [0.8, 0.8])
    g = TimeGrid(0.0, DT, 4)
    assert g.stop_ps == 52.0 and g.edges.size == 5
    assert g.offset_bins(TimeGrid(26.0, DT, 3)) == 2


def test_estimator_interface():
    pulse = PulseShape.gaussian(240.0, DT, mu=1.0)
    jit = JitterDistribution.gaussian(100.0, DT)
    d = click_density_wavepacket(0.169, pulse, jit)
    d = ClickDensity.from_probabilities(d.grid, d.probabilities, n_pulses=10**6)
    est = JitterDeconvolution(pulse=pulse).fit(d)
    assert l1_distance(est.jitter_.mass, jit.mass) < 0.02
    y = est.rate_.normalized()[: est.rate_.n_valid]
    assert l1_distance(est.transform(), y) < 0.01
    with pytest.raises(TypeError):
        est.fit(np.zeros(3))

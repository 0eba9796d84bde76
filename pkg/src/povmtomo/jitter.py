"""First-click densities of a jittered detector and their inversion.

The detector model treats every photon independently: a photon arriving at
``tau`` clicks at ``tau + T`` with probability density ``eta * J(T)``, and only
the earliest click of a pulse is recorded. For a coherent pulse the clicks then
form an inhomogeneous Poisson process with rate ``eta * mu * (J * I)`` and the
recorded click time is its first event.

Everything lives on uniform grids in picoseconds. Pulse intensities and
normalized rates are stored as per-bin masses that sum to one; jitter and
absolute rates are densities per picosecond.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import DimensionError, DomainError
from .qp import solve_box_qp
from .recon import apply_difference_gram, difference_gram

SATURATION_TOL = 1e-12
# below this many still-unclicked pulses a bin's hazard estimate is mostly noise
MIN_SURVIVORS = 1000


# --------------------------------------------------------------------------
# Grids and value types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Bins ``[start + i*dt, start + (i+1)*dt)`` for ``i < n``."""

    start_ps: float
    dt_ps: float
    n: int

    def __post_init__(self):
        if not self.dt_ps > 0:
            raise DomainError("grid spacing must be positive")
        if self.n < 1:
            raise DomainError("a grid needs at least one bin")

    @property
    def times(self) -> np.ndarray:
        return self.start_ps + self.dt_ps * np.arange(self.n)

    @property
    def edges(self) -> np.ndarray:
        return self.start_ps + self.dt_ps * np.arange(self.n + 1)

    @property
    def stop_ps(self) -> float:
        return self.start_ps + self.dt_ps * self.n

    def offset_bins(self, other: "TimeGrid") -> int:
        """Whole-bin offset of ``other.start`` from ``self.start``; grids must share a lattice."""
        if not np.isclose(self.dt_ps, other.dt_ps, rtol=1e-12, atol=0.0):
            raise DimensionError(f"grid spacings differ: {self.dt_ps} vs {other.dt_ps} ps")
        shift = (other.start_ps - self.start_ps) / self.dt_ps
        if abs(shift - round(shift)) > 1e-9:
            raise DimensionError("grids are not aligned to a common lattice")
        return int(round(shift))


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PulseShape:
    """Normalized intensity ``I_i = |alpha(t_i)|^2 dt / mu`` plus the mean photon number."""

    grid: TimeGrid
    intensity: np.ndarray
    mu: float = 1.0

    def __post_init__(self):
        i = _readonly(self.intensity)
        if i.shape != (self.grid.n,):
            raise DimensionError(f"{i.size} intensity samples for a {self.grid.n}-bin grid")
        if np.any(i < 0) or not np.all(np.isfinite(i)):
            raise DomainError("pulse intensity must be finite and nonnegative")
        if abs(i.sum() - 1.0) > 1e-12:
            raise DomainError(f"pulse intensity must sum to 1, got {i.sum():.15g}")
        if self.mu < 0:
            raise DomainError("mu must be >= 0")
        object.__setattr__(self, "intensity", i)

    @classmethod
    def from_samples(cls, grid: TimeGrid, samples, mu: float = 1.0) -> "PulseShape":
        s = np.clip(np.asarray(samples, dtype=float), 0.0, None)
        if s.sum() <= 0:
            raise DomainError("pulse samples are all zero")
        return cls(grid, s / s.sum(), mu)

    @classmethod
    def gaussian(cls, fwhm_ps: float, dt_ps: float, mu: float = 1.0, center_ps: Optional[float] = None,
                 width_sigmas: float = 6.0) -> "PulseShape":
        """Gaussian intensity integrated over each bin, truncated at ``width_sigmas``."""
        from scipy.special import ndtr

        sigma = fwhm_ps / (2.0 * np.sqrt(2.0 * np.log(2.0)))
        half = int(np.ceil(width_sigmas * sigma / dt_ps))
        # by default the grid starts at zero with the peak mid-bin
        center = (half + 0.5) * dt_ps if center_ps is None else center_ps
        grid = TimeGrid(center - half * dt_ps - 0.5 * dt_ps, dt_ps, 2 * half + 1)
        cdf = ndtr((grid.edges - center) / sigma)
        return cls.from_samples(grid, np.diff(cdf), mu)

    @classmethod
    def rectangular(cls, duration_ps: float, dt_ps: float, mu: float = 1.0, start_ps: float = 0.0) -> "PulseShape":
        n = int(round(duration_ps / dt_ps))
        if n < 1 or abs(n * dt_ps - duration_ps) > 1e-9 * duration_ps:
            raise DomainError("duration must be a whole number of bins")
        return cls(TimeGrid(start_ps, dt_ps, n), np.full(n, 1.0 / n), mu)

    @classmethod
    def delta(cls, dt_ps: float, mu: float = 1.0, at_ps: float = 0.0) -> "PulseShape":
        return cls(TimeGrid(at_ps, dt_ps, 1), np.ones(1), mu)

    def with_mu(self, mu: float) -> "PulseShape":
        return PulseShape(self.grid, self.intensity, mu)

    def shifted(self, offset_ps: float) -> "PulseShape":
        g = self.grid
        return PulseShape(TimeGrid(g.start_ps + offset_ps, g.dt_ps, g.n), self.intensity, self.mu)


@dataclass(frozen=True)
class JitterDistribution:
    """Click-delay density ``J(T)`` per ps on lags ``T = i*dt``, ``i >= 0``.

    The grid always starts at lag zero, so causality holds by construction.
    A total mass below one means some absorbed photons never click.
    """

    dt_ps: float
    density: np.ndarray

    def __post_init__(self):
        d = _readonly(self.density)
        if d.ndim != 1 or d.size < 1:
            raise DimensionError("jitter density must be a non-empty 1-D array")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise DomainError("jitter density must be finite and nonnegative")
        if d.sum() * self.dt_ps > 1.0 + 1e-9:
            raise DomainError(f"jitter mass {d.sum() * self.dt_ps:.12g} exceeds 1")
        object.__setattr__(self, "density", d)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.dt_ps, self.density.size)

    @property
    def mass(self) -> np.ndarray:
        """Probability per lag bin."""
        return self.density * self.dt_ps

    @classmethod
    def from_mass(cls, dt_ps: float, mass) -> "JitterDistribution":
        return cls(dt_ps, np.asarray(mass, dtype=float) / dt_ps)

    @classmethod
    def delta(cls, dt_ps: float, lag_bins: int = 0) -> "JitterDistribution":
        m = np.zeros(lag_bins + 1)
        m[lag_bins] = 1.0
        return cls.from_mass(dt_ps, m)

    @classmethod
    def gaussian(cls, sigma_ps: float, dt_ps: float, mean_ps: Optional[float] = None,
                 width_sigmas: float = 6.0) -> "JitterDistribution":
        """Bin-integrated Gaussian, cut at zero lag and renormalized."""
        from scipy.special import ndtr

        mean = 5.0 * sigma_ps if mean_ps is None else mean_ps
        n = int(np.ceil((mean + width_sigmas * sigma_ps) / dt_ps)) + 1
        edges = dt_ps * np.arange(n + 1)
        m = np.diff(ndtr((edges - mean) / sigma_ps))
        return cls.from_mass(dt_ps, m / m.sum())


@dataclass(frozen=True)
class ClickDensity:
    """First-click density ``p_wp`` per ps; ``density * dt`` is the per-bin probability."""

    grid: TimeGrid
    density: np.ndarray
    n_pulses: Optional[int] = None

    def __post_init__(self):
        d = _readonly(self.density)
        if d.shape != (self.grid.n,):
            raise DimensionError(f"{d.size} density samples for a {self.grid.n}-bin grid")
        object.__setattr__(self, "density", d)

    @property
    def probabilities(self) -> np.ndarray:
        return self.density * self.grid.dt_ps

    @property
    def total(self) -> float:
        return float(self.probabilities.sum())

    @classmethod
    def from_probabilities(cls, grid: TimeGrid, probs, n_pulses: Optional[int] = None) -> "ClickDensity":
        return cls(grid, np.asarray(probs, dtype=float) / grid.dt_ps, n_pulses)


@dataclass(frozen=True)
class RateProfile:
    """Click rate ``lambda`` per ps.

    Only the first ``n_valid`` bins are trustworthy; a saturated profile is
    zero beyond them. ``eta_mu_total`` carries the total ``eta * mu`` when it
    is known beyond the trusted bins.
    """

    grid: TimeGrid
    rate: np.ndarray
    saturated: bool = False
    n_valid: Optional[int] = None
    eta_mu_total: Optional[float] = None

    def __post_init__(self):
        r = _readonly(self.rate)
        if r.shape != (self.grid.n,):
            raise DimensionError(f"{r.size} rate samples for a {self.grid.n}-bin grid")
        if np.any(r < 0):
            raise DomainError("rates must be nonnegative")
        object.__setattr__(self, "rate", r)
        if self.n_valid is None:
            object.__setattr__(self, "n_valid", self.grid.n)

    @property
    def cumulative(self) -> np.ndarray:
        """Left-exclusive ``Lambda_i = sum_{l<i} lambda_l dt``."""
        m = self.rate * self.grid.dt_ps
        return np.concatenate(([0.0], np.cumsum(m)[:-1]))

    @property
    def eta_mu(self) -> float:
        """Estimate of ``eta * mu``: the rate's integral unless a total was recorded."""
        if self.eta_mu_total is not None:
            return float(self.eta_mu_total)
        return float(self.rate.sum() * self.grid.dt_ps)

    def normalized(self) -> np.ndarray:
        """Per-bin masses ``lambda_i dt / (eta mu)``; they sum to one unless the profile was cut short."""
        total = self.eta_mu
        if total <= 0:
            return np.zeros(self.grid.n)
        return self.rate * self.grid.dt_ps / total


# --------------------------------------------------------------------------
# Forward model
# --------------------------------------------------------------------------


def convolve_masses(pulse_mass, jitter_mass) -> np.ndarray:
    """Full discrete convolution; output bin ``a + l`` collects ``I_a * w_l``."""
    return np.convolve(np.asarray(pulse_mass, float), np.asarray(jitter_mass, float))


def output_grid(pulse: PulseShape, jitter: JitterDistribution) -> TimeGrid:
    if not np.isclose(pulse.grid.dt_ps, jitter.dt_ps, rtol=1e-12, atol=0.0):
        raise DimensionError(f"grid spacings differ: {pulse.grid.dt_ps} vs {jitter.dt_ps} ps")
    return TimeGrid(pulse.grid.start_ps, pulse.grid.dt_ps, pulse.grid.n + jitter.density.size - 1)


def click_rate(eta: float, pulse: PulseShape, jitter: JitterDistribution) -> RateProfile:
    """``lambda = eta * mu * (J * I)`` on the output grid."""
    if not 0.0 <= eta <= 1.0:
        raise DomainError("eta must lie in [0, 1]")
    grid = output_grid(pulse, jitter)
    m = eta * pulse.mu * convolve_masses(pulse.intensity, jitter.mass)
    return RateProfile(grid, m / grid.dt_ps)


def click_density_wavepacket(eta: float, pulse: PulseShape, jitter: JitterDistribution,
                             form: str = "exact") -> ClickDensity:
    """First-click density of the jittered coherent pulse.

    ``form="exact"`` gives each bin the probability that the first event of
    the Poisson process falls in it, ``exp(-Lambda_i) * (1 - exp(-m_i))`` with
    ``m_i`` the bin's expected click count. Its sum is ``1 - exp(-eta mu M)``
    with ``M`` the jitter mass. ``form="pointwise"`` is the sampled density
    ``lambda_i exp(-Lambda_i)``, off by ``O(dt)``.
    """
    rate = click_rate(eta, pulse, jitter)
    m = rate.rate * rate.grid.dt_ps
    survive = np.exp(-rate.cumulative)
    if form == "exact":
        probs = survive * -np.expm1(-m)
    elif form == "pointwise":
        probs = survive * m
    else:
        raise ValueError(f"unknown form {form!r}")
    return ClickDensity.from_probabilities(rate.grid, probs)


def extract_rate(density: ClickDensity, form: str = "log", tol: float = SATURATION_TOL,
                 min_survivors: Optional[float] = MIN_SURVIVORS) -> RateProfile:
    """Click rate from a measured first-click density; needs neither eta nor mu.

    With ``P_i = p_i dt`` and survival ``S_i = 1 - sum_{l<i} P_l``:

    ``form="log"``   ``lambda_i dt = -log(1 - P_i / S_i)``, exact inverse of the binned density,
    ``form="ratio"`` ``lambda_i = p_i / S_i``, the hazard ratio, ``O(dt)`` low where the rate is high.

    Once ``S`` falls to ``tol`` (or, for a histogram of ``n_pulses`` pulses,
    fewer than ``min_survivors`` pulses are left without a click) the
    remaining bins carry no usable information. The profile is zeroed from
    there on and flagged ``saturated``; with the log form the total
    ``eta * mu = -log(S_end)`` is still recorded, so normalized rates keep
    their scale.
    """
    probs = density.probabilities
    if np.any(probs < -1e-15):
        raise DomainError("click density must be nonnegative")
    probs = np.clip(probs, 0.0, None)
    if probs.sum() > 1.0 + 1e-9:
        raise DomainError(f"click probabilities sum to {probs.sum():.12g} > 1")
    survival = 1.0 - np.concatenate(([0.0], np.cumsum(probs)[:-1]))
    dt = density.grid.dt_ps
    n = probs.size
    floor = tol
    if density.n_pulses and min_survivors:
        floor = max(tol, min_survivors / density.n_pulses)
    # a bin that empties the survival entirely is also the last informative one
    dead = (survival < floor) | (probs >= survival - tol)
    n_valid = int(np.argmax(dead)) if dead.any() else n
    saturated = bool(dead.any() and probs[n_valid:].sum() > 0)
    if not saturated:
        n_valid = n
    hazard = np.zeros(n)
    ok = slice(0, n_valid)
    h = probs[ok] / survival[ok]
    if form == "log":
        hazard[ok] = -np.log1p(-np.minimum(h, 1.0 - 1e-300)) / dt
    elif form == "ratio":
        hazard[ok] = h / dt
    else:
        raise ValueError(f"unknown form {form!r}")
    total = None
    s_end = 1.0 - probs.sum()
    if saturated and form == "log" and s_end > 0:
        total = float(-np.log(s_end))
    return RateProfile(density.grid, hazard, saturated, n_valid, total)


# --------------------------------------------------------------------------
# Deconvolution
# --------------------------------------------------------------------------


def toeplitz_operator(pulse_mass, n_out: int, n_lags: int, shift: int = 0) -> np.ndarray:
    """``T[i, l] = I[i + shift - l]``, zero outside the pulse, so ``T @ w`` is ``I * w`` on the output bins."""
    I = np.asarray(pulse_mass, dtype=float)
    k = np.arange(n_out)[:, None] + shift - np.arange(n_lags)[None, :]
    inside = (k >= 0) & (k < I.size)
    return np.where(inside, I[np.clip(k, 0, I.size - 1)], 0.0)


def deconvolution_objective(w, target, T, smooth_weight: float) -> float:
    """``||target - T w||^2 + s * sum_i (w_{i+1} - w_i)^2``."""
    w = np.asarray(w, dtype=float)
    resid = np.asarray(target, dtype=float) - T @ w
    return float(resid @ resid + smooth_weight * np.sum(np.diff(w) ** 2))


def deconvolution_gradient(w, target, T, smooth_weight: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return 2.0 * T.T @ (T @ w - np.asarray(target, dtype=float)) + 2.0 * smooth_weight * apply_difference_gram(w)


def histogram_epsilon_sq(probs, n_pulses: float) -> float:
    """``max_i P_i (1 - P_i) / N`` over the measured click bins."""
    p = np.asarray(probs, dtype=float)
    return float(np.max(p * (1.0 - p), initial=0.0) / n_pulses)


@dataclass
class DeconvolutionResult:
    jitter: JitterDistribution
    misfit: float
    smooth_weight: float
    converged: bool
    iterations: int
    origin_offset_ps: float
    objective_value: float


def deconvolve_jitter(
    rate: RateProfile,
    pulse: PulseShape,
    smooth_weight: Optional[float] = None,
    n_pulses: Optional[int] = None,
    n_lags: Optional[int] = None,
    origin_offset_ps: float = 0.0,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    method: str = "spg",
) -> DeconvolutionResult:
    """Nonnegative, smoothed least-squares estimate of ``J`` from a click rate.

    The rate is normalized by its own integral. ``origin_offset_ps`` delays
    the pulse relative to the click record; lags that would need a click
    before its photon are dropped, i.e. fixed to zero. Without an explicit
    ``smooth_weight`` the weight is ``eps2 * n_bins**2``, ``eps2`` from the
    click histogram that produced the rate (``n_pulses`` required).
    """
    target = rate.normalized()[: rate.n_valid]
    if not np.any(target):
        raise DomainError("rate profile is identically zero")
    dt = rate.grid.dt_ps
    shifted = pulse.shifted(origin_offset_ps)
    shift = shifted.grid.offset_bins(rate.grid)
    n_out = target.size
    # largest useful lag: last rate bin minus first pulse bin
    max_lag = n_out - 1 + shift
    if max_lag < 0:
        raise DimensionError("the rate record ends before the pulse starts")
    lags = max_lag + 1 if n_lags is None else int(n_lags)
    T = toeplitz_operator(shifted.intensity, n_out, lags, shift)

    if smooth_weight is None:
        if n_pulses is None:
            raise ValueError("give smooth_weight or the pulse count behind the rate")
        # the histogram is one step back from the rate: P_i from lambda_i
        m = rate.rate[: n_out] * dt
        probs = np.exp(-np.concatenate(([0.0], np.cumsum(m)[:-1]))) * -np.expm1(-m)
        smooth_weight = histogram_epsilon_sq(probs, n_pulses) * n_out**2
    if smooth_weight < 0:
        raise DomainError("smooth_weight must be >= 0")

    res = solve_box_qp(
        2.0 * T.T @ T,
        -2.0 * T.T @ target,
        0.0,
        np.inf,
        B=2.0 * difference_gram(lags),
        weights=smooth_weight,
        tol=tol,
        max_iter=max_iter,
        method=method,
    )
    w = np.clip(res.x, 0.0, None)
    total = w.sum()
    if total > 1.0:
        w = w / total
    resid = target - T @ w
    return DeconvolutionResult(
        jitter=JitterDistribution.from_mass(dt, w),
        misfit=float(resid @ resid),
        smooth_weight=float(smooth_weight),
        converged=bool(res.converged),
        iterations=int(res.iterations),
        origin_offset_ps=float(origin_offset_ps),
        objective_value=deconvolution_objective(w, target, T, smooth_weight),
    )


@dataclass
class ReconvolutionCheck:
    rate_norm: np.ndarray
    grid: TimeGrid
    l1: Optional[float] = None
    linf: Optional[float] = None
    misfit: Optional[float] = None


def reconvolve_check(jitter: JitterDistribution, pulse: PulseShape, target: Optional[RateProfile] = None,
                     origin_offset_ps: float = 0.0) -> ReconvolutionCheck:
    """``T J`` as normalized per-bin masses, compared with ``target`` when given."""
    shifted = pulse.shifted(origin_offset_ps)
    if target is None:
        grid = output_grid(shifted, jitter)
        return ReconvolutionCheck(convolve_masses(shifted.intensity, jitter.mass), grid)
    y = target.normalized()[: target.n_valid]
    T = toeplitz_operator(shifted.intensity, y.size, jitter.density.size, shifted.grid.offset_bins(target.grid))
    model = T @ jitter.mass
    d = y - model
    grid = TimeGrid(target.grid.start_ps, target.grid.dt_ps, y.size)
    return ReconvolutionCheck(model, grid, float(np.abs(d).sum()), float(np.abs(d).max()), float(d @ d))


# --------------------------------------------------------------------------
# Consistency across photon numbers
# --------------------------------------------------------------------------


def l1_distance(a, b) -> float:
    """L1 distance of two mass vectors, the shorter padded with zeros."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(a.size, b.size)
    return float(np.abs(np.pad(a, (0, n - a.size)) - np.pad(b, (0, n - b.size))).sum())


@dataclass
class ConsistencyReport:
    mus: list
    rates: list
    jitters: list
    residuals: list
    rate_l1: dict = field(default_factory=dict)
    jitter_l1: dict = field(default_factory=dict)

    @property
    def max_rate_l1(self) -> float:
        return max(self.rate_l1.values(), default=0.0)

    @property
    def max_jitter_l1(self) -> float:
        return max(self.jitter_l1.values(), default=0.0)

    def to_json(self) -> dict:
        return {
            "mus": [float(m) for m in self.mus],
            "rate_l1": [{"mu_a": a, "mu_b": b, "l1": v} for (a, b), v in self.rate_l1.items()],
            "jitter_l1": [{"mu_a": a, "mu_b": b, "l1": v} for (a, b), v in self.jitter_l1.items()],
            "max_rate_l1": self.max_rate_l1,
            "max_jitter_l1": self.max_jitter_l1,
            "reconvolution": [
                {"mu": float(mu), "l1": r.l1, "linf": r.linf, "misfit": r.misfit}
                for mu, r in zip(self.mus, self.residuals)
            ],
        }


def model_consistency_report(
    datasets: Sequence[tuple],
    pulse: PulseShape,
    smooth_weight: Optional[float] = None,
    origin_offset_ps: float = 0.0,
    rate_form: str = "log",
    **solver,
) -> ConsistencyReport:
    """Rates and jitters per ``(mu, ClickDensity)``; under the model neither depends on mu.

    Pairwise L1 distances compare normalized rates and deconvolved jitters;
    per-mu re-convolution residuals show how well any ``J`` explains each rate.
    All densities must share one grid.
    """
    mus, rates, jitters, residuals = [], [], [], []
    grid0 = None
    for mu, dens in datasets:
        if grid0 is None:
            grid0 = dens.grid
        elif dens.grid != grid0:
            raise DimensionError("all click densities must share one grid")
        rate = extract_rate(dens, form=rate_form)
        dec = deconvolve_jitter(rate, pulse, smooth_weight, dens.n_pulses, origin_offset_ps=origin_offset_ps, **solver)
        mus.append(float(mu))
        rates.append(rate)
        jitters.append(dec.jitter)
        residuals.append(reconvolve_check(dec.jitter, pulse, rate, origin_offset_ps))
    report = ConsistencyReport(mus, rates, jitters, residuals)
    for a, b in combinations(range(len(mus)), 2):
        key = (mus[a], mus[b])
        # rates are compared where both are resolved
        n = min(rates[a].n_valid, rates[b].n_valid)
        report.rate_l1[key] = l1_distance(rates[a].normalized()[:n], rates[b].normalized()[:n])
        report.jitter_l1[key] = l1_distance(jitters[a].mass, jitters[b].mass)
    return report


# --------------------------------------------------------------------------
# Estimator interface
# --------------------------------------------------------------------------

class JitterDeconvolution(BaseEstimator):
    """Estimate ``J`` from a first-click density given the pulse shape.

    ``fit(density)`` takes a :class:`ClickDensity`; ``transform`` maps jitter
    masses back to normalized rates through the fitted pulse operator.
    """

    def __init__(self, pulse=None, smooth_weight=None, origin_offset_ps=0.0, rate_form="log",
                 tol=1e-12, max_iter=100_000, method="spg"):
        self.pulse = pulse
        self.smooth_weight = smooth_weight
        self.origin_offset_ps = origin_offset_ps
        self.rate_form = rate_form
        self.tol = tol
        self.max_iter = max_iter
        self.method = method

    def fit(self, X, y=None):
        if not isinstance(X, ClickDensity):
            raise TypeError("fit expects a ClickDensity")
        if self.pulse is None:
            raise ValueError("pulse shape is required")
        self.rate_ = extract_rate(X, form=self.rate_form)
        res = deconvolve_jitter(self.rate_, self.pulse, self.smooth_weight, X.n_pulses,
                                origin_offset_ps=self.origin_offset_ps, tol=self.tol,
                                max_iter=self.max_iter, method=self.method)
        self.result_ = res
        self.jitter_ = res.jitter
        self.converged_ = res.converged
        return self

    def transform(self, X=None):
        check_is_fitted(self, "jitter_")
        jit = self.jitter_ if X is None else X
        return reconvolve_check(jit, self.pulse, self.rate_, self.origin_offset_ps).rate_norm

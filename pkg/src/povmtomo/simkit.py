"""Synthetic click data, the regularization benchmark, and a Monte-Carlo jittered detector.

Every random draw comes from a Philox stream keyed by ``(seed, *indices)``,
so a replication's data never depends on how many others run beside it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    DomainError,
    FrequencyTable,
    PovmDiagonal,
    ProbeEnsemble,
    build_design_matrix,
    ideal_detector_povm,
    metric_fidelity,
    poisson_upper_tail,
)
from .ingest import TimestampStream, bin_clicks
from .jitter import ClickDensity, JitterDistribution, PulseShape, TimeGrid, output_grid
from .recon import (
    MODES,
    RegularizationPlan,
    SolverConfig,
    _solve_columns,
    adaptive_epsilon_sq,
    gamma_default,
)

DEFAULT_M_GRID = (10, 32, 100, 316, 1000, 3162, 10000)
BENCH_K_MAX = 29
BENCH_MUS = tuple(float(m) for m in range(30))
REP_PERIOD_PS = 100_000_000  # 10 kHz


def substream(seed: int, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, *index)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, index)])))


# --------------------------------------------------------------------------
# Click sampling
# --------------------------------------------------------------------------


def outcome_probabilities(povm: PovmDiagonal, mus, tail: str = "absorb") -> np.ndarray:
    """``(n_probes, i_max)`` outcome probabilities for coherent probes.

    ``tail="absorb"`` lets photon numbers above the cutoff act like the
    cutoff itself, so every probe's weights sum to one; ``"truncate"`` simply
    drops them.
    """
    mus = np.asarray(mus, dtype=float)
    c = build_design_matrix(mus, povm.k_max).c.copy()
    if tail == "absorb":
        c[:, -1] = poisson_upper_tail(mus, povm.k_max)
    elif tail != "truncate":
        raise ValueError(f"unknown tail rule {tail!r}")
    return np.clip(c @ povm.theta, 0.0, 1.0)


def _draw_counts(rng: np.random.Generator, n: np.ndarray, p: np.ndarray) -> np.ndarray:
    # multinomial over the listed outcomes plus the implicit remainder
    if p.shape[1] == 1:
        return rng.binomial(n.astype(np.int64), p[:, 0])[:, None].astype(float)
    rest = np.clip(1.0 - p.sum(axis=1, keepdims=True), 0.0, None)
    full = np.hstack([p, rest])
    full /= full.sum(axis=1, keepdims=True)
    return rng.multinomial(n.astype(np.int64), full)[:, :-1].astype(float)


def sample_clicks(povm: PovmDiagonal, ensemble: ProbeEnsemble, seed, tail: str = "absorb") -> FrequencyTable:
    """Outcome counts for each probe, jointly multinomial with the no-click remainder."""
    if not povm.is_valid(1e-12):
        raise DomainError("POVM elements must lie in [0, 1] with rows summing to at most 1")
    if np.any(ensemble.trials != np.round(ensemble.trials)):
        raise DomainError("sampling needs whole trial counts")
    p = outcome_probabilities(povm, ensemble.mus, tail)
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed)
    counts = _draw_counts(rng, ensemble.trials, p)
    return FrequencyTable(counts, ensemble.trials, povm.result_labels)


# --------------------------------------------------------------------------
# Benchmark
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruthSpec:
    """Which detector generates the data.

    ``kind="ideal"`` benchmarks the no-click element ``(1-eta)**k`` of an
    ideal detector; ``"random_uniform"`` draws every element i.i.d. from
    ``U[0, 1]`` anew in each replication; ``"explicit"`` uses ``povm``.
    """

    kind: str
    k_max: int = BENCH_K_MAX
    eta: Optional[float] = None
    povm: Optional[PovmDiagonal] = None

    def __post_init__(self):
        if self.kind == "ideal":
            if self.eta is None or not 0.0 <= self.eta <= 1.0:
                raise DomainError("an ideal detector needs eta in [0, 1]")
        elif self.kind == "explicit":
            if self.povm is None:
                raise DomainError("explicit ground truth needs a POVM")
            if self.povm.i_max != 1:
                raise DomainError("the benchmark handles single-outcome POVMs")
            object.__setattr__(self, "k_max", self.povm.k_max)
        elif self.kind != "random_uniform":
            raise DomainError(f"unknown ground-truth kind {self.kind!r}")

    @classmethod
    def ideal(cls, eta: float, k_max: int = BENCH_K_MAX) -> "GroundTruthSpec":
        return cls("ideal", k_max, eta=eta)

    @classmethod
    def random_uniform(cls, k_max: int = BENCH_K_MAX) -> "GroundTruthSpec":
        return cls("random_uniform", k_max)

    @classmethod
    def explicit(cls, povm: PovmDiagonal) -> "GroundTruthSpec":
        return cls("explicit", povm.k_max, povm=povm)

    @property
    def label(self) -> str:
        if self.kind == "ideal":
            return f"ideal_eta{self.eta:g}"
        return self.kind

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "ideal":
            return ideal_detector_povm(self.eta, self.k_max).complement().theta[:, 0]
        if self.kind == "explicit":
            return self.povm.theta[:, 0]
        return rng.uniform(0.0, 1.0, self.k_max + 1)


@dataclass
class BenchmarkResult:
    """Per-replication ``linf`` and ``fidelity`` arrays of shape ``(len(M_grid), N)`` per scheme."""

    truth: str
    schemes: tuple
    M_grid: tuple
    n_replications: int
    seed: int
    linf: dict
    fidelity: dict
    converged: dict
    config: dict = field(default_factory=dict)

    def mean(self, scheme: str, metric: str = "linf") -> np.ndarray:
        return getattr(self, metric)[scheme].mean(axis=1)

    def std(self, scheme: str, metric: str = "linf") -> np.ndarray:
        v = getattr(self, metric)[scheme]
        return v.std(axis=1, ddof=1) if v.shape[1] > 1 else np.zeros(v.shape[0])

    def rows(self):
        """Tidy records ``(scheme, M, replication, linf, fidelity)``."""
        for s in self.schemes:
            for a, M in enumerate(self.M_grid):
                for rep in range(self.n_replications):
                    yield s, M, rep, float(self.linf[s][a, rep]), float(self.fidelity[s][a, rep])

    def summary(self) -> dict:
        stats = []
        for s in self.schemes:
            for a, M in enumerate(self.M_grid):
                stats.append({
                    "scheme": s,
                    "M": int(M),
                    "linf_mean": float(self.mean(s)[a]),
                    "linf_std": float(self.std(s)[a]),
                    "fidelity_mean": float(self.mean(s, "fidelity")[a]),
                    "fidelity_std": float(self.std(s, "fidelity")[a]),
                    "converged_fraction": float(self.converged[s][a].mean()),
                })
        return {
            "truth": self.truth,
            "n_replications": self.n_replications,
            "seed": self.seed,
            "M_grid": [int(m) for m in self.M_grid],
            "schemes": list(self.schemes),
            "config": self.config,
            "stats": stats,
        }

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scheme", "M", "replication", "linf", "fidelity"])
            for s, M, rep, linf, fid in self.rows():
                w.writerow([s, M, rep, repr(linf), repr(fid)])


def run_benchmark(
    spec: GroundTruthSpec,
    schemes: Sequence[str] = MODES,
    M_grid: Sequence[int] = DEFAULT_M_GRID,
    N: int = 100,
    seed: int = 0,
    mus: Sequence[float] = BENCH_MUS,
    r_static: float = 0.1,
    gamma: Optional[float] = None,
    solver_cfg: SolverConfig = SolverConfig(),
    noiseless: bool = False,
    tail: str = "absorb",
) -> BenchmarkResult:
    """Sample, reconstruct and score every ``(M, replication)`` under each scheme.

    Replication ``rep`` at grid point ``a`` draws from ``substream(seed, a, rep)``;
    one batched solve per scheme covers the whole grid, and since the batched
    problems never interact the result equals solving them one by one.
    With ``noiseless=True`` the exact probabilities replace the samples.
    """
    if N < 1:
        raise DomainError("N must be >= 1")
    if not M_grid:
        raise DomainError("M_grid must not be empty")
    for s in schemes:
        if s not in MODES:
            raise DomainError(f"unknown scheme {s!r}")
    mus = np.asarray(mus, dtype=float)
    k_max = spec.k_max
    design = build_design_matrix(mus, k_max).c
    gam = gamma if gamma is not None else gamma_default(k_max, 1)

    truths, freqs, trials = [], [], []
    for a, M in enumerate(M_grid):
        for rep in range(N):
            rng = substream(seed, a, rep)
            theta = spec.draw(rng)
            povm = PovmDiagonal(theta[:, None], ("no_click",) if spec.kind == "ideal" else ("click",))
            if noiseless:
                f = outcome_probabilities(povm, mus, tail)[:, 0]
            else:
                table = sample_clicks(povm, ProbeEnsemble.uniform(mus, M), rng, tail)
                f = table.freq[:, 0]
            truths.append(theta)
            freqs.append(f)
            trials.append(M)
    TH = np.array(truths).T
    F = np.array(freqs).T
    eps = [adaptive_epsilon_sq(FrequencyTable(F[:, j] * M, np.full(mus.size, float(M))))
           for j, M in enumerate(trials)]

    shape = (len(M_grid), N)
    linf, fid, conv = {}, {}, {}
    for s in schemes:
        plan = RegularizationPlan(s, r_static=r_static, gamma=gam)
        r = np.array([plan.weight(e, gam) for e in eps])
        res = _solve_columns(design, F, r, solver_cfg)
        linf[s] = np.abs(res.x - TH).max(axis=0).reshape(shape)
        fid[s] = metric_fidelity(res.x, TH).reshape(shape)
        conv[s] = np.asarray(res.converged).reshape(shape)
    config = {
        "k_max": k_max,
        "mus": mus.tolist(),
        "r_static": r_static,
        "gamma": gam,
        "tol": solver_cfg.tol,
        "max_iter": solver_cfg.max_iter,
        "method": solver_cfg.method,
        "noiseless": noiseless,
        "tail": tail,
    }
    return BenchmarkResult(spec.label, tuple(schemes), tuple(int(m) for m in M_grid), N, int(seed),
                           linf, fid, conv, config)


# --------------------------------------------------------------------------
# Jittered detector Monte Carlo
# --------------------------------------------------------------------------


def simulate_gouzien_first_clicks(
    eta: float,
    pulse: PulseShape,
    jitter: JitterDistribution,
    n_pulses: int,
    seed,
    chunk: int = 200_000,
) -> np.ndarray:
    """Earliest click time per pulse in ps, ``nan`` for pulses without a click.

    Each pulse carries ``K ~ Poisson(mu)`` photons; each photon is absorbed
    with probability ``eta`` and clicks with probability ``sum(J) dt`` (one
    for a complete jitter density). Arrival bins follow the pulse intensity
    (inverse CDF), the arrival is uniform inside its bin, and the delay is a
    whole number of bins drawn from ``J``. The click therefore lands in bin
    ``arrival + delay`` exactly. Times are floored to whole picoseconds.
    """
    if not 0.0 <= eta <= 1.0:
        raise DomainError("eta must lie in [0, 1]")
    if n_pulses < 0:
        raise DomainError("n_pulses must be >= 0")
    grid = output_grid(pulse, jitter)
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed)
    jm = jitter.mass
    p_click = eta * float(jm.sum())
    cdf_pulse = np.cumsum(pulse.intensity)
    cdf_jit = np.cumsum(jm) / jm.sum() if jm.sum() > 0 else None
    dt = grid.dt_ps
    out = np.full(n_pulses, np.nan)
    for lo in range(0, n_pulses, chunk):
        n = min(chunk, n_pulses - lo)
        photons = rng.poisson(pulse.mu, n)
        clicking = rng.binomial(photons, p_click) if p_click > 0 else np.zeros(n, dtype=np.int64)
        total = int(clicking.sum())
        if total == 0:
            continue
        owner = np.repeat(np.arange(n), clicking)
        arrival = np.minimum(np.searchsorted(cdf_pulse, rng.random(total) * cdf_pulse[-1], side="right"), pulse.grid.n - 1)
        delay = np.minimum(np.searchsorted(cdf_jit, rng.random(total) * cdf_jit[-1], side="right"), jm.size - 1)
        t = np.floor(pulse.grid.start_ps + (arrival + delay + rng.random(total)) * dt)
        first = np.full(n, np.inf)
        np.minimum.at(first, owner, t)
        first[np.isinf(first)] = np.nan
        out[lo:lo + n] = first
    return out


def histogram_first_clicks(times, bin_width: float, window: tuple, n_pulses: Optional[int] = None):
    """Per-bin click probabilities over ``[start, stop)``; returns ``(edges, probabilities, counts)``.

    ``n_pulses`` defaults to the number of entries in ``times`` (clicks plus
    ``nan`` no-click markers).
    """
    t = np.asarray(times, dtype=float)
    n = t.size if n_pulses is None else int(n_pulses)
    clicks = t[~np.isnan(t)]
    start, stop = map(float, window)
    n_bins = (stop - start) / bin_width if bin_width > 0 else 0.0
    if bin_width <= 0:
        raise DomainError("bin_width must be positive")
    if n == 0:
        nb = int(round(n_bins))
        return start + bin_width * np.arange(nb + 1), np.zeros(nb), np.zeros(nb, dtype=np.int64)
    edges, counts = bin_clicks(clicks, n, bin_width, (start, stop))
    return edges, counts / n, counts


def density_from_first_clicks(times, grid: TimeGrid) -> ClickDensity:
    """Empirical :class:`ClickDensity` on ``grid`` from simulated or measured first clicks."""
    _, probs, _ = histogram_first_clicks(times, grid.dt_ps, (grid.start_ps, grid.stop_ps))
    return ClickDensity.from_probabilities(grid, probs, n_pulses=int(np.asarray(times).size))


def first_clicks_to_stream(times, rep_period_ps: int = REP_PERIOD_PS, resolution_ps: Optional[int] = None) -> TimestampStream:
    """Stream with one trigger per pulse at ``n * period`` and each click after its trigger."""
    t = np.asarray(times, dtype=float)
    hit = ~np.isnan(t)
    if np.any(t[hit] < 0) or np.any(t[hit] >= rep_period_ps):
        raise DomainError("click times must fall inside [0, rep_period_ps)")
    trig = np.arange(t.size, dtype=np.int64) * int(rep_period_ps)
    clicks = trig[hit] + t[hit].astype(np.int64)
    return TimestampStream.from_channels(trig, clicks, resolution_ps)


def frequency_table_from_first_clicks(click_sets, window: tuple, bin_width: float = 13.0):
    """Windowed click table and per-bin counts for one first-click array per probe."""
    rows, pulses = [], []
    for times in click_sets:
        _, _, counts = histogram_first_clicks(times, bin_width, window)
        rows.append(counts)
        pulses.append(np.asarray(times).size)
    counts = np.array(rows, dtype=float)
    return FrequencyTable(counts.sum(axis=1), np.array(pulses, float), ("click",)), counts

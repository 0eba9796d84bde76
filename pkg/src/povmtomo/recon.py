"""Regularized least-squares POVM reconstruction with data-adaptive weighting.

The smoothness penalty ``r * sum_k (theta[k+1] - theta[k])**2`` is weighted
either by a fixed ``r`` or adaptively by ``r = eps2 * gamma``: ``eps2`` is the
largest binomial variance of the measured frequencies and ``gamma`` the
inverse prior covariance of neighbouring elements.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import (
    DimensionError,
    DomainError,
    FrequencyTable,
    PoissonDesignMatrix,
    PovmDiagonal,
    ProbeEnsemble,
    build_design_matrix,
    predict_probabilities,
    suggest_k_max,
)
from .qp import solve_box_qp
from .validation import check_mus, check_trials, pool_duplicate_probes

log = logging.getLogger(__name__)

MODES = ("none", "static", "adaptive")


@dataclass(frozen=True)
class RegularizationPlan:
    """How the smoothness weight ``r`` is chosen.

    ``strength`` multiplies the adaptive weight only; ``gamma`` and
    ``epsilon_sq`` left as ``None`` are derived from the problem and data.
    """

    mode: str = "adaptive"
    r_static: float = 0.1
    gamma: Optional[float] = None
    epsilon_sq: Optional[float] = None
    strength: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("r_static", "strength"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        for name in ("gamma", "epsilon_sq"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise DomainError(f"{name} must be >= 0")

    def weight(self, epsilon_sq: float = 0.0, gamma: float = 0.0) -> float:
        if self.mode == "none":
            return 0.0
        if self.mode == "static":
            return float(self.r_static)
        eps = self.epsilon_sq if self.epsilon_sq is not None else epsilon_sq
        gam = self.gamma if self.gamma is not None else gamma
        return float(self.strength * eps * gam)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-9
    max_iter: int = 100_000
    enforce_completeness: bool = True
    method: str = "pgd"


@dataclass
class ReconstructionReport:
    povm: PovmDiagonal
    objective_value: float
    r_used: float
    iterations: int
    converged: bool
    per_bin_epsilon_sq: Optional[list] = None
    epsilon_sq: Optional[float] = None
    gamma: Optional[float] = None
    repair_changed: bool = False
    per_bin_r: Optional[list] = None
    per_bin_converged: Optional[list] = None

    def to_json(self) -> dict:
        return {
            "povm": self.povm.to_json(),
            "objective_value": self.objective_value,
            "r_used": self.r_used,
            "iterations": self.iterations,
            "converged": self.converged,
            "per_bin_epsilon_sq": self.per_bin_epsilon_sq,
            "per_bin_r": self.per_bin_r,
            "per_bin_converged": self.per_bin_converged,
            "epsilon_sq": self.epsilon_sq,
            "gamma": self.gamma,
            "repair_changed": self.repair_changed,
        }


# --------------------------------------------------------------------------
# Weights
# --------------------------------------------------------------------------


def adaptive_epsilon_sq(freq: FrequencyTable) -> float:
    """Largest binomial variance ``f (1 - f) / N`` over all cells of the table.

    When every frequency is exactly 0 or 1 the variance estimate vanishes; one
    pseudo-count of uncertainty, ``1 / (4 N_min**2)``, is returned instead.
    """
    f = freq.freq
    if f.size == 0:
        raise ValueError("empty frequency table")
    var = f * (1.0 - f) / freq.trials[:, None]
    eps = float(var.max())
    if eps <= 0.0:
        n_min = float(freq.trials.min())
        eps = 1.0 / (4.0 * n_min * n_min)
    return eps


def gamma_default(k_max: int, i_max: int = 1) -> float:
    if k_max < 1 or i_max < 1:
        raise DomainError("k_max and i_max must both be >= 1")
    return float(k_max) ** 2 * float(i_max) ** 2


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------


def _check_shapes(theta, f, design):
    c = design.c if isinstance(design, PoissonDesignMatrix) else np.asarray(design, float)
    theta = np.asarray(theta, dtype=float)
    f = np.asarray(f, dtype=float)
    if theta.shape[0] != c.shape[1] or f.shape[0] != c.shape[0] or theta.shape[1:] != f.shape[1:]:
        raise DimensionError(
            f"theta {theta.shape}, f {f.shape} incompatible with design {c.shape}"
        )
    return theta, f, c


def smoothness_penalty(theta) -> float:
    return float(np.sum(np.diff(np.asarray(theta, dtype=float), axis=0) ** 2))


def difference_gram(n: int) -> np.ndarray:
    """``L.T @ L`` for the ``(n-1, n)`` first-difference matrix ``L``."""
    D = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    if n:
        D[0, 0] = D[-1, -1] = 1.0
    if n == 1:
        D[0, 0] = 0.0
    return D


def apply_difference_gram(theta) -> np.ndarray:
    d = np.diff(theta, axis=0)
    out = np.zeros_like(theta)
    out[:-1] -= d
    out[1:] += d
    return out


def objective(theta, f, design, r: float) -> float:
    """``||f - C theta||^2 + r * sum_k (theta[k+1] - theta[k])**2``."""
    if r < 0:
        raise DomainError("regularization weight must be >= 0")
    theta, f, c = _check_shapes(theta, f, design)
    resid = f - c @ theta
    return float(np.sum(resid * resid)) + r * smoothness_penalty(theta)


def objective_gradient(theta, f, design, r: float) -> np.ndarray:
    theta, f, c = _check_shapes(theta, f, design)
    return 2.0 * c.T @ (c @ theta - f) + 2.0 * r * apply_difference_gram(theta)


# --------------------------------------------------------------------------
# Reconstruction
# --------------------------------------------------------------------------


def project_completeness(theta: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto ``{x >= 0, sum(x) <= 1}``."""
    x = np.clip(theta, 0.0, None)
    out = x.copy()
    over = x.sum(axis=1) > 1.0
    for k in np.flatnonzero(over):
        v = theta[k]
        # projection onto the probability simplex (sort-based)
        u = np.sort(v)[::-1]
        css = np.cumsum(u) - 1.0
        idx = np.arange(1, v.size + 1)
        rho = np.flatnonzero(u - css / idx > 0)[-1]
        tau = css[rho] / (rho + 1)
        out[k] = np.maximum(v - tau, 0.0)
    return out


def _solve_columns(c, f, r, cfg: SolverConfig):
    """Independent box-constrained solves, one per column of ``f``; ``r`` may vary per column."""
    n = c.shape[1]
    res = solve_box_qp(
        2.0 * (c.T @ c),
        -2.0 * (c.T @ f),
        0.0,
        1.0,
        B=2.0 * difference_gram(n),
        weights=np.broadcast_to(np.asarray(r, dtype=float), (f.shape[1],)),
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        method=cfg.method,
    )
    return res


def reconstruct(
    freq: FrequencyTable,
    ensemble,
    k_max: Optional[int] = None,
    plan: RegularizationPlan = RegularizationPlan(),
    solver_cfg: SolverConfig = SolverConfig(),
) -> ReconstructionReport:
    """Fit every outcome column of ``freq`` under box constraints ``0 <= theta <= 1``.

    With several outcome columns the rows are afterwards projected onto
    ``sum_i theta[k, i] <= 1`` unless ``solver_cfg.enforce_completeness`` is off.
    Non-convergence is reported through ``converged`` rather than raised.
    """
    mus = ensemble.mus if isinstance(ensemble, ProbeEnsemble) else check_mus(ensemble)
    if freq.counts.shape[0] != mus.size:
        raise DimensionError(f"{freq.counts.shape[0]} frequency rows for {mus.size} probes")
    if k_max is None:
        k_max = suggest_k_max(float(mus.max()))
    design = build_design_matrix(ProbeEnsemble(mus, freq.trials), k_max)
    f = freq.freq
    eps = adaptive_epsilon_sq(freq)
    gam = gamma_default(max(k_max, 1), freq.i_max)
    r = plan.weight(eps, gam)

    res = _solve_columns(design.c, f, r, solver_cfg)
    theta = res.x
    iters, conv = int(res.iterations.max(initial=0)), bool(res.converged.all())
    if not conv:
        log.warning("reconstruction stopped at %d iterations, |pg| = %.3g", iters, res.pg_norm.max())

    changed = False
    if freq.i_max > 1 and solver_cfg.enforce_completeness:
        repaired = project_completeness(theta)
        changed = bool(np.any(repaired != theta))
        theta = repaired

    povm = PovmDiagonal(theta, freq.result_labels)
    return ReconstructionReport(
        povm=povm,
        objective_value=objective(theta, f, design, r),
        r_used=r,
        iterations=iters,
        converged=bool(conv),
        epsilon_sq=eps if plan.mode == "adaptive" else None,
        gamma=(plan.gamma if plan.gamma is not None else gam) if plan.mode == "adaptive" else None,
        repair_changed=changed,
    )


def reconstruct_time_binned(
    binned,
    ensemble=None,
    k_max: Optional[int] = None,
    gamma: Optional[float] = None,
    solver_cfg: SolverConfig = SolverConfig(),
    strength: float = 1.0,
) -> ReconstructionReport:
    """One independent adaptive single-outcome reconstruction per time bin.

    Each bin gets its own ``eps2`` from its own counts and ``gamma = k_max**2``
    (single outcome per solve). Bins without any click yield a zero column.
    """
    mus = binned.mus if ensemble is None else (
        ensemble.mus if isinstance(ensemble, ProbeEnsemble) else check_mus(ensemble)
    )
    counts = np.asarray(binned.counts, dtype=float)
    trials = np.asarray(binned.trials, dtype=float)
    if counts.shape[0] != mus.size:
        raise DimensionError("time-binned rows must align with the probe ensemble")
    if k_max is None:
        k_max = suggest_k_max(float(mus.max()))
    gam = gamma if gamma is not None else gamma_default(max(k_max, 1), 1)
    plan = RegularizationPlan("adaptive", gamma=gam, strength=strength)

    # one batched solve; bins stay independent because columns never interact
    clicked = np.any(counts > 0, axis=0)
    n_bins = counts.shape[1]
    design = build_design_matrix(ProbeEnsemble(mus, trials), k_max)
    freqs = counts / trials[:, None]
    eps = np.array([adaptive_epsilon_sq(FrequencyTable(counts[:, b], trials)) for b in range(n_bins)])
    r = np.array([plan.weight(e, gam) for e in eps])
    theta = np.zeros((k_max + 1, n_bins))
    iters = np.zeros(n_bins, dtype=int)
    conv = np.ones(n_bins, dtype=bool)
    obj = np.zeros(n_bins)
    if clicked.any():
        res = _solve_columns(design.c, freqs[:, clicked], r[clicked], solver_cfg)
        theta[:, clicked] = res.x
        iters[clicked], conv[clicked] = res.iterations, res.converged
        for j, b in enumerate(np.flatnonzero(clicked)):
            obj[b] = objective(res.x[:, j], freqs[:, b], design, r[b])
    r[~clicked] = 0.0

    changed = False
    if solver_cfg.enforce_completeness:
        repaired = project_completeness(theta)
        changed = bool(np.any(repaired != theta))
        theta = repaired
    labels = tuple(f"bin_{b}" for b in range(theta.shape[1]))
    return ReconstructionReport(
        povm=PovmDiagonal(theta, labels),
        objective_value=float(obj.sum()),
        r_used=float(r.max(initial=0.0)),
        iterations=int(iters.max(initial=0)),
        converged=bool(conv.all()),
        per_bin_epsilon_sq=[float(e) if c else None for e, c in zip(eps, clicked)],
        per_bin_r=[float(x) for x in r],
        per_bin_converged=[bool(c) for c in conv],
        gamma=gam,
        repair_changed=changed,
    )


# --------------------------------------------------------------------------
# Efficiency
# --------------------------------------------------------------------------


def fit_efficiency(no_click_probs, mus) -> float:
    """Efficiency ``eta`` from a least-squares fit of ``exp(-eta * mu)``.

    The fit runs on the probability scale and starts from the log-linear
    regression of ``-log p`` on ``mu`` through the origin.
    """
    p = np.asarray(no_click_probs, dtype=float).ravel()
    mus = np.asarray(mus.mus if isinstance(mus, ProbeEnsemble) else mus, dtype=float).ravel()
    if p.shape != mus.shape:
        raise DimensionError("one no-click probability per probe is required")
    if np.any(p > 1.0 + 1e-12) or np.any(p < 0):
        raise ValueError("no-click probabilities must lie in [0, 1]")
    usable = (p > 0) & (mus > 0)
    if np.unique(mus[p > 0]).size < 3 or not usable.any():
        raise ValueError("need positive probabilities at >= 3 distinct mean photon numbers")
    if np.all(p >= 1.0):
        return 0.0
    y = -np.log(np.minimum(p[usable], 1.0))
    eta0 = float(np.clip(np.dot(mus[usable], y) / np.dot(mus[usable], mus[usable]), 1e-9, 1 - 1e-9))
    res = least_squares(
        lambda e: np.exp(-e[0] * mus) - p,
        x0=[eta0],
        jac=lambda e: (-mus * np.exp(-e[0] * mus))[:, None],
        bounds=(0.0, 1.0),
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
    )
    return float(np.clip(res.x[0], 0.0, 1.0))


def efficiency_from_theta1(povm: PovmDiagonal) -> float:
    """Click probability for a single photon, ``theta_click[1]``.

    A single ``no_click`` column is converted with ``1 - theta[1]``; several
    click columns (time bins) are summed.
    """
    if povm.k_max < 1:
        raise DomainError("the one-photon element needs k_max >= 1")
    if povm.result_labels == ("no_click",):
        return float(1.0 - povm.theta[1, 0])
    return float(povm.theta[1].sum())


# --------------------------------------------------------------------------
# Estimator interface
# --------------------------------------------------------------------------


class PovmTomography(RegressorMixin, BaseEstimator):
    """Detector tomography as a scikit-learn regressor.

    ``X`` holds the probe mean photon numbers (one row per probe), ``y`` the
    measured outcome frequencies (one column per listed outcome) and
    ``trials`` the pulses per probe. ``predict`` returns the outcome
    probabilities the fitted POVM assigns to new coherent probes.

    Parameters
    ----------
    k_max : int or None
        Photon-number cutoff; ``None`` uses ``ceil(mu_max + 2 sqrt(mu_max))``.
    regularization : {"adaptive", "static", "none"}
    r_static : float
        Weight used by ``regularization="static"``.
    gamma : float or None
        Inverse prior covariance; ``None`` gives ``k_max**2 * i_max**2``.
    strength : float
        Multiplier on the adaptive weight.
    tol, max_iter : solver stopping rule on the projected-gradient norm.
    enforce_completeness : bool
        Project multi-outcome rows onto ``sum_i theta[k, i] <= 1``.
    result_labels : tuple of str or None
    solver : {"pgd", "spg"}
        ``"spg"`` reaches the exact minimizer on ill-conditioned problems.
    """

    def __init__(
        self,
        k_max=None,
        regularization="adaptive",
        r_static=0.1,
        gamma=None,
        strength=1.0,
        tol=1e-9,
        max_iter=100_000,
        enforce_completeness=True,
        result_labels=None,
        solver="pgd",
    ):
        self.k_max = k_max
        self.regularization = regularization
        self.r_static = r_static
        self.gamma = gamma
        self.strength = strength
        self.tol = tol
        self.max_iter = max_iter
        self.enforce_completeness = enforce_completeness
        self.result_labels = result_labels
        self.solver = solver

    def fit(self, X, y, trials=None):
        mus = check_mus(X)
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[0] != mus.size:
            raise DimensionError("X and y must have the same number of probes")
        if trials is None:
            raise ValueError("trials (pulses per probe) are required to weight the data")
        n = check_trials(trials, mus.size)
        mus, counts, n = pool_duplicate_probes(mus, y * n[:, None], n)
        labels = self.result_labels or (
            ("click",) if counts.shape[1] == 1 else tuple(f"outcome_{i}" for i in range(counts.shape[1]))
        )
        table = FrequencyTable(counts, n, tuple(labels))
        plan = RegularizationPlan(
            self.regularization, r_static=self.r_static, gamma=self.gamma, strength=self.strength
        )
        cfg = SolverConfig(self.tol, self.max_iter, self.enforce_completeness, self.solver)
        self.report_ = reconstruct(table, ProbeEnsemble(mus, n), self.k_max, plan, cfg)
        self.povm_ = self.report_.povm
        self.theta_ = self.povm_.theta
        self.k_max_ = self.povm_.k_max
        self.r_ = self.report_.r_used
        self.epsilon_sq_ = adaptive_epsilon_sq(table)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "povm_")
        mus = check_mus(X, require_increasing=False)
        design = build_design_matrix(mus, self.k_max_)
        p = predict_probabilities(self.povm_, design)
        return p[:, 0] if p.shape[1] == 1 else p

    def efficiency(self) -> float:
        check_is_fitted(self, "povm_")
        return efficiency_from_theta1(self.povm_)


class EfficiencyFit(RegressorMixin, BaseEstimator):
    """Ideal-detector fit ``p_no_click(mu) = exp(-eta mu)``."""

    def fit(self, X, y):
        mus = check_mus(X, require_increasing=False)
        self.eta_ = fit_efficiency(y, mus)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "eta_")
        return np.exp(-self.eta_ * check_mus(X, require_increasing=False))


__all__ = [
    "RegularizationPlan",
    "SolverConfig",
    "ReconstructionReport",
    "adaptive_epsilon_sq",
    "gamma_default",
    "objective",
    "objective_gradient",
    "smoothness_penalty",
    "difference_gram",
    "project_completeness",
    "reconstruct",
    "reconstruct_time_binned",
    "fit_efficiency",
    "efficiency_from_theta1",
    "PovmTomography",
    "EfficiencyFit",
]

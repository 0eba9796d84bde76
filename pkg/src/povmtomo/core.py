"""Fock-diagonal POVM types, Poisson design matrices and comparison metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DimensionError(ValueError):
    """Array shapes of two operands are incompatible."""


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeEnsemble:
    """Coherent probe settings: mean photon numbers and pulse counts.

    Entries are kept in strictly increasing ``mu`` order; that ordering labels
    the rows of every design matrix built from the ensemble.
    """

    mus: np.ndarray
    trials: np.ndarray

    def __post_init__(self):
        mus = np.atleast_1d(np.array(self.mus, dtype=float))
        trials = np.broadcast_to(np.asarray(self.trials, dtype=float), mus.shape).copy()
        if mus.ndim != 1 or mus.size == 0:
            raise DomainError("a probe ensemble needs at least one entry")
        if np.any(~np.isfinite(mus)) or np.any(mus < 0):
            raise DomainError("mean photon numbers must be finite and >= 0")
        if np.any(trials < 1):
            raise DomainError("every probe needs at least one trial")
        if np.any(np.diff(mus) <= 0):
            raise DomainError("mean photon numbers must be strictly increasing")
        mus.setflags(write=False)
        trials.setflags(write=False)
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "trials", trials)

    @classmethod
    def uniform(cls, mus: Sequence[float], trials: float) -> "ProbeEnsemble":
        mus = np.asarray(mus, dtype=float)
        return cls(mus, np.full(mus.shape, float(trials)))

    def __len__(self) -> int:
        return self.mus.size


@dataclass(frozen=True)
class PoissonDesignMatrix:
    """``c[j, k] = exp(-mu_j) mu_j**k / k!`` for ``k = 0..k_max``."""

    c: np.ndarray
    k_max: int
    mus: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.c.shape


@dataclass(frozen=True)
class PovmDiagonal:
    """Fock-diagonal POVM elements, one column per listed outcome.

    ``theta[k, i]`` is the probability that ``k`` photons produce outcome ``i``.
    The listed outcomes never exhaust the measurement: the remaining element
    ``1 - theta.sum(axis=1)`` belongs to an implicit outcome (no click when the
    columns are clicks, click when the single column is the no-click element).
    """

    theta: np.ndarray
    result_labels: tuple[str, ...] = ("click",)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None]
        if theta.ndim != 2 or theta.shape[0] == 0:
            raise DimensionError("theta must be a non-empty (k_max+1, i_max) matrix")
        labels = tuple(str(s) for s in self.result_labels)
        if len(labels) != theta.shape[1]:
            if len(labels) == 1 and theta.shape[1] > 1:
                labels = tuple(f"{labels[0]}_{i + 1}" for i in range(theta.shape[1]))
            else:
                raise DimensionError("one result label per outcome column is required")
        theta = theta.copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "result_labels", labels)

    @property
    def k_max(self) -> int:
        return self.theta.shape[0] - 1

    @property
    def i_max(self) -> int:
        return self.theta.shape[1]

    def is_valid(self, atol: float = 0.0) -> bool:
        """Whether every element is a probability and each row sums to at most one."""
        t = self.theta
        return bool(
            np.all(t >= -atol) and np.all(t <= 1 + atol) and np.all(t.sum(axis=1) <= 1 + atol)
        )

    def complement(self) -> "PovmDiagonal":
        """The implicit binary partner element (click <-> no-click)."""
        if self.i_max != 1:
            raise DimensionError("complement is defined for single-outcome POVMs only")
        label = self.result_labels[0]
        other = {"click": "no_click", "no_click": "click"}.get(label, f"not_{label}")
        return PovmDiagonal(1.0 - self.theta, (other,))

    def to_json(self) -> dict:
        return {
            "k_max": self.k_max,
            "i_max": self.i_max,
            "result_labels": list(self.result_labels),
            "theta": self.theta.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PovmDiagonal":
        theta = np.asarray(doc["theta"], dtype=float).reshape(doc["k_max"] + 1, doc["i_max"])
        labels = doc.get("result_labels") or [f"outcome_{i + 1}" for i in range(doc["i_max"])]
        return cls(theta, tuple(labels))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", *self.result_labels])
            for k, row in enumerate(self.theta):
                w.writerow([k, *(repr(float(v)) for v in row)])

    @classmethod
    def read_csv(cls, path) -> "PovmDiagonal":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        theta = np.array([[float(v) for v in r[1:]] for r in body])
        return cls(theta, tuple(header[1:]))


@dataclass(frozen=True)
class FrequencyTable:
    """Outcome counts ``counts[j, i]`` for ``trials[j]`` pulses of probe ``j``.

    Counts are usually integers. Fractional counts are accepted so that exact
    probabilities can stand in for the infinite-trial limit
    (see :meth:`from_probabilities`).
    """

    counts: np.ndarray
    trials: np.ndarray
    result_labels: tuple[str, ...] = ("click",)

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        if counts.ndim == 1:
            counts = counts[:, None]
        trials = np.broadcast_to(np.asarray(self.trials, dtype=float), counts.shape[:1]).copy()
        if counts.ndim != 2 or counts.size == 0:
            raise DimensionError("counts must be a non-empty (j_max, i_max) matrix")
        if np.any(counts < 0):
            raise DomainError("counts must be non-negative")
        if np.any(trials < 1):
            raise DomainError("every row needs at least one trial")
        if np.any(counts.sum(axis=1) > trials * (1 + 1e-12)):
            raise DomainError("outcome counts exceed the number of trials")
        labels = tuple(self.result_labels)
        if len(labels) != counts.shape[1]:
            if len(labels) == 1:
                labels = tuple(f"{labels[0]}_{i + 1}" for i in range(counts.shape[1]))
            else:
                raise DimensionError("one result label per outcome column is required")
        counts.setflags(write=False)
        trials.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "result_labels", labels)

    @classmethod
    def from_probabilities(cls, probs, trials, result_labels=("click",)) -> "FrequencyTable":
        probs = np.asarray(probs, dtype=float)
        if probs.ndim == 1:
            probs = probs[:, None]
        trials = np.broadcast_to(np.asarray(trials, dtype=float), probs.shape[:1])
        return cls(probs * trials[:, None], trials, result_labels)

    @property
    def freq(self) -> np.ndarray:
        return self.counts / self.trials[:, None]

    @property
    def i_max(self) -> int:
        return self.counts.shape[1]

    def complement(self) -> "FrequencyTable":
        """Counts of the implicit remaining outcome, as a single-column table."""
        label = "no_click" if self.result_labels == ("click",) else "click"
        if self.i_max > 1:
            label = "no_click"
        elif self.result_labels[0] not in ("click", "no_click"):
            label = f"not_{self.result_labels[0]}"
        rest = np.maximum(self.trials - self.counts.sum(axis=1), 0.0)
        return FrequencyTable(rest, self.trials, (label,))


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def suggest_k_max(mu_max: float) -> int:
    """Photon-number cutoff covering ``mu_max`` plus two standard deviations."""
    if mu_max < 0:
        raise DomainError("mu_max must be >= 0")
    return int(math.ceil(mu_max + 2.0 * math.sqrt(mu_max)))


def poisson_pmf_rows(mus, k_max: int) -> np.ndarray:
    """Truncated Poisson pmf, one row per ``mu``, built by multiplicative recurrence.

    Rows with large ``mu`` start the recurrence in log space at the mode so no
    intermediate value under- or overflows before it is needed.
    """
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    if np.any(mus < 0) or np.any(~np.isfinite(mus)):
        raise DomainError("mean photon numbers must be finite and >= 0")
    if k_max < 0:
        raise DomainError("k_max must be >= 0")
    out = np.zeros((mus.size, k_max + 1))
    for j, mu in enumerate(mus):
        if mu == 0.0:
            out[j, 0] = 1.0
            continue
        mode = min(int(math.floor(mu)), k_max)
        log_mode = -mu + mode * math.log(mu) - math.lgamma(mode + 1)
        row = np.empty(k_max + 1)
        row[mode] = math.exp(log_mode)
        # upward and downward recurrences from the mode are both contractions
        for kk in range(mode, k_max):
            row[kk + 1] = row[kk] * mu / (kk + 1)
        for kk in range(mode, 0, -1):
            row[kk - 1] = row[kk] * kk / mu
        out[j] = row
    return out


def poisson_upper_tail(mus, k: int) -> np.ndarray:
    """``P(K >= k)`` for ``K ~ Poisson(mu)``."""
    from scipy.special import gammainc

    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    if k <= 0:
        return np.ones_like(mus)
    out = np.zeros_like(mus)
    pos = mus > 0
    # P(K >= k) = P(k, mu) (regularized lower incomplete gamma)
    out[pos] = gammainc(k, mus[pos])
    return out


def build_design_matrix(ensemble: ProbeEnsemble, k_max: int) -> PoissonDesignMatrix:
    if k_max < 0:
        raise DomainError("k_max must be >= 0")
    mus = ensemble.mus if isinstance(ensemble, ProbeEnsemble) else np.asarray(ensemble, float)
    c = poisson_pmf_rows(mus, int(k_max))
    c.setflags(write=False)
    return PoissonDesignMatrix(c=c, k_max=int(k_max), mus=np.array(mus, dtype=float))


def ideal_detector_povm(eta: float, k_max: int) -> PovmDiagonal:
    """Click element ``1 - (1 - eta)**k`` of a detector with efficiency ``eta``."""
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"efficiency must lie in [0, 1], got {eta}")
    if k_max < 0:
        raise DomainError("k_max must be >= 0")
    k = np.arange(k_max + 1)
    return PovmDiagonal(1.0 - (1.0 - eta) ** k, ("click",))


def predict_probabilities(povm: PovmDiagonal, design: PoissonDesignMatrix) -> np.ndarray:
    """Outcome probabilities ``C @ theta`` for every probe row."""
    if design.c.shape[1] != povm.theta.shape[0]:
        raise DimensionError(
            f"design has {design.c.shape[1]} photon-number columns, POVM has {povm.theta.shape[0]} rows"
        )
    return np.clip(design.c @ povm.theta, 0.0, 1.0)


def _as_theta(x) -> np.ndarray:
    t = x.theta if isinstance(x, PovmDiagonal) else np.asarray(x, dtype=float)
    return t[:, None] if t.ndim == 1 else t


def metric_linf(a, b) -> float:
    ta, tb = _as_theta(a), _as_theta(b)
    if ta.shape != tb.shape:
        raise DimensionError(f"shape mismatch {ta.shape} vs {tb.shape}")
    return float(np.max(np.abs(ta - tb)))


def metric_fidelity(a, b) -> np.ndarray:
    """Unnormalized overlap ``sum_k sqrt(a_k b_k)``, one value per outcome column.

    The value is not normalized and exceeds one for elements close to one.
    """
    ta, tb = _as_theta(a), _as_theta(b)
    if ta.shape != tb.shape:
        raise DimensionError(f"shape mismatch {ta.shape} vs {tb.shape}")
    if np.any(ta < 0) or np.any(tb < 0):
        raise DomainError("fidelity needs non-negative POVM elements")
    return np.sqrt(ta * tb).sum(axis=0)


# --------------------------------------------------------------------------
# Serialization of design matrices and frequency tables
# --------------------------------------------------------------------------


def design_to_json(design: PoissonDesignMatrix) -> dict:
    return {
        "k_max": design.k_max,
        "mus": design.mus.tolist(),
        "c": design.c.ravel().tolist(),
    }


def design_from_json(doc: dict) -> PoissonDesignMatrix:
    mus = np.asarray(doc["mus"], dtype=float)
    c = np.asarray(doc["c"], dtype=float).reshape(mus.size, doc["k_max"] + 1)
    return PoissonDesignMatrix(c=c, k_max=int(doc["k_max"]), mus=mus)


def write_design_csv(design: PoissonDesignMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu", *(f"k{k}" for k in range(design.k_max + 1))])
        for mu, row in zip(design.mus, design.c):
            w.writerow([repr(float(mu)), *(repr(float(v)) for v in row)])


def read_design_csv(path) -> PoissonDesignMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    return PoissonDesignMatrix(c=body[:, 1:], k_max=body.shape[1] - 2, mus=body[:, 0])


def write_frequency_csv(table: FrequencyTable, mus, path) -> None:
    """Columns ``mu, trials, count_<label>...``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu", "trials", *(f"count_{lab}" for lab in table.result_labels)])
        for mu, n, row in zip(mus, table.trials, table.counts):
            cells = [_fmt_count(v) for v in row]
            w.writerow([repr(float(mu)), _fmt_count(n), *cells])


def _fmt_count(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def read_frequency_csv(path) -> tuple[FrequencyTable, np.ndarray]:
    """Read a frequency table; returns ``(table, mus)``."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if len(header) < 3 or header[0] != "mu" or header[1] != "trials":
        raise ValueError(f"{path}: expected header 'mu,trials,count_...'")
    labels = tuple(h[len("count_"):] if h.startswith("count_") else h for h in header[2:])
    data = np.array([[float(v) for v in r] for r in rows])
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError(f"{path}: no data rows")
    return FrequencyTable(data[:, 2:], data[:, 1], labels), data[:, 0]


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


__all__ = [
    "DomainError",
    "DimensionError",
    "ProbeEnsemble",
    "PoissonDesignMatrix",
    "PovmDiagonal",
    "FrequencyTable",
    "suggest_k_max",
    "poisson_pmf_rows",
    "poisson_upper_tail",
    "build_design_matrix",
    "ideal_detector_povm",
    "predict_probabilities",
    "metric_linf",
    "metric_fidelity",
    "design_to_json",
    "design_from_json",
    "write_design_csv",
    "read_design_csv",
    "write_frequency_csv",
    "read_frequency_csv",
]

"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .core import DomainError


def check_mus(X, require_increasing: bool = True) -> np.ndarray:
    """Mean photon numbers from a column vector, a 1-D array or a probe list."""
    if hasattr(X, "mus"):
        X = X.mus
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2:
        arr = check_array(arr, ensure_2d=True, dtype=float)
        if arr.shape[1] != 1:
            raise ValueError(f"expected a single feature column of mean photon numbers, got {arr.shape[1]}")
        arr = arr[:, 0]
    arr = np.atleast_1d(arr)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty vector of mean photon numbers")
    if not np.all(np.isfinite(arr)):
        raise ValueError("mean photon numbers must be finite")
    if np.any(arr < 0):
        raise DomainError("mean photon numbers must be >= 0")
    if require_increasing and np.any(np.diff(arr) < 0):
        raise ValueError("mean photon numbers must be sorted in increasing order")
    return arr


def check_trials(trials, n: int) -> np.ndarray:
    t = np.broadcast_to(np.asarray(trials, dtype=float), (n,)).copy()
    if np.any(t < 1) or not np.all(np.isfinite(t)):
        raise DomainError("trial counts must be finite and >= 1")
    return t


def pool_duplicate_probes(mus, counts, trials):
    """Merge rows that share a mean photon number by summing counts and trials."""
    mus = np.asarray(mus, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if counts.ndim == 1:
        counts = counts[:, None]
    trials = np.asarray(trials, dtype=float)
    order = np.argsort(mus, kind="stable")
    mus, counts, trials = mus[order], counts[order], trials[order]
    uniq, inverse = np.unique(mus, return_inverse=True)
    if uniq.size == mus.size:
        return mus, counts, trials
    pooled = np.zeros((uniq.size, counts.shape[1]))
    np.add.at(pooled, inverse, counts)
    n = np.zeros(uniq.size)
    np.add.at(n, inverse, trials)
    return uniq, pooled, n

"""Timestamp streams to click frequencies and time-binned click histograms.

Streams are plain CSV files with header ``channel,t_ps``: channel 0 carries
the pulse-generator triggers, channel 1 the detector clicks, times are
integer picoseconds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import constants

from .core import DomainError, FrequencyTable

TRIGGER = 0
DETECTOR = 1

COARSE_BIN_PS = 130
FINE_BIN_PS = 13


@dataclass(frozen=True)
class TimestampStream:
    channel: np.ndarray
    t_ps: np.ndarray
    resolution_ps: Optional[int] = None

    def __post_init__(self):
        ch = np.array(self.channel, dtype=np.int8)
        t = np.array(self.t_ps, dtype=np.int64)
        if ch.shape != t.shape or ch.ndim != 1:
            raise ValueError("channel and t_ps must be 1-D arrays of equal length")
        if np.any((ch != TRIGGER) & (ch != DETECTOR)):
            raise ValueError("channel must be 0 (trigger) or 1 (detector)")
        for c in (TRIGGER, DETECTOR):
            if np.any(np.diff(t[ch == c]) < 0):
                raise ValueError("timestamps must be nondecreasing within each channel")
        ch.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "channel", ch)
        object.__setattr__(self, "t_ps", t)

    @property
    def triggers(self) -> np.ndarray:
        return self.t_ps[self.channel == TRIGGER]

    @property
    def clicks(self) -> np.ndarray:
        return self.t_ps[self.channel == DETECTOR]

    def __len__(self) -> int:
        return self.t_ps.size

    @classmethod
    def from_channels(cls, triggers, clicks, resolution_ps=None) -> "TimestampStream":
        """Merge two per-channel time lists into one time-ordered stream."""
        triggers = np.asarray(triggers, dtype=np.int64)
        clicks = np.asarray(clicks, dtype=np.int64)
        t = np.concatenate([triggers, clicks])
        ch = np.concatenate([np.zeros(triggers.size, np.int8), np.ones(clicks.size, np.int8)])
        order = np.lexsort((ch, t))
        return cls(ch[order], t[order], resolution_ps)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("channel,t_ps\n")
            np.savetxt(fh, np.column_stack([self.channel, self.t_ps]), fmt="%d", delimiter=",")

    @classmethod
    def read_csv(cls, path) -> "TimestampStream":
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().replace(" ", "")
            if header != "channel,t_ps":
                raise ValueError(f"{path}: expected header 'channel,t_ps', got {header!r}")
            data = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
        if data.size == 0:
            return cls(np.zeros(0), np.zeros(0))
        return cls(data[:, 0], data[:, 1])


@dataclass(frozen=True)
class TimeBinnedFrequencies:
    """Per-probe click counts in uniform bins ``[edge_b, edge_b+1)``."""

    bin_edges: np.ndarray
    counts: np.ndarray
    trials: np.ndarray
    mus: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.atleast_2d(np.asarray(self.counts, dtype=float))
        trials = np.atleast_1d(np.asarray(self.trials, dtype=float))
        mus = np.atleast_1d(np.asarray(self.mus, dtype=float))
        widths = np.diff(edges)
        if edges.ndim != 1 or edges.size < 2 or not np.allclose(widths, widths[0]):
            raise ValueError("bin edges must be uniform and define at least one bin")
        if counts.shape != (mus.size, edges.size - 1) or trials.shape != mus.shape:
            raise ValueError("counts must have one row per probe and one column per bin")
        if np.any(counts.sum(axis=1) > trials):
            raise DomainError("binned clicks exceed the pulse count")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "mus", mus)

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def probabilities(self) -> np.ndarray:
        """Per-bin click probabilities ``p_wp(t) * dt``."""
        return self.counts / self.trials[:, None]

    def frequency_table(self) -> FrequencyTable:
        labels = tuple(f"bin_{b}" for b in range(self.counts.shape[1]))
        return FrequencyTable(self.counts, self.trials, labels)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            starts = self.bin_edges[:-1]
            w.writerow(["mu", "trials", *(f"t{_fmt(s)}" for s in starts)])
            for mu, n, row in zip(self.mus, self.trials, self.counts):
                w.writerow([repr(float(mu)), int(n), *(int(v) for v in row)])

    @classmethod
    def read_csv(cls, path) -> "TimeBinnedFrequencies":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        starts = np.array([float(h[1:]) for h in rows[0][2:]])
        width = starts[1] - starts[0] if starts.size > 1 else 1.0
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        edges = np.append(starts, starts[-1] + width)
        return cls(edges, data[:, 2:], data[:, 1], data[:, 0])


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def dead_time_filter(stream: TimestampStream, dead_time_us: float, guard_us: float = 2.0) -> TimestampStream:
    """Drop detector clicks preceded by another click within dead time plus guard.

    The decision uses every recorded click, kept or not, so applying the filter
    twice changes nothing. Equal timestamps count as preceding in stream order.
    """
    window_ps = (dead_time_us + guard_us) * 1e6
    det = np.flatnonzero(stream.channel == DETECTOR)
    t = stream.t_ps[det]
    drop = np.zeros(t.size, dtype=bool)
    drop[1:] = np.diff(t) < window_ps
    keep = np.ones(stream.t_ps.size, dtype=bool)
    keep[det[drop]] = False
    return TimestampStream(stream.channel[keep], stream.t_ps[keep], stream.resolution_ps)


def correlate(stream: TimestampStream, rep_period_ps: Optional[float] = None) -> tuple[np.ndarray, int]:
    """Click times relative to the most recent trigger.

    Returns ``(relative_times_ps, n_pulses)``. Clicks before the first trigger
    and, when ``rep_period_ps`` is given, clicks a full period or more after
    their trigger are dropped.
    """
    trig = stream.triggers
    if trig.size == 0:
        raise ValueError("stream contains no trigger events")
    clicks = stream.clicks
    idx = np.searchsorted(trig, clicks, side="right") - 1
    ok = idx >= 0
    rel = clicks[ok] - trig[idx[ok]]
    if rep_period_ps is not None:
        rel = rel[rel < rep_period_ps]
    return rel, int(trig.size)


def find_window_center(relative_times, coarse_ps: float = COARSE_BIN_PS, fine_ps: float = FINE_BIN_PS) -> float:
    """Histogram mode: a coarse pass picks the region, a fine pass the peak."""
    rel = np.asarray(relative_times, dtype=float)
    if rel.size == 0:
        return 0.0
    lo = np.floor(rel.min() / coarse_ps) * coarse_ps
    n_coarse = int((rel.max() - lo) // coarse_ps) + 1
    coarse = np.bincount(((rel - lo) // coarse_ps).astype(np.int64), minlength=n_coarse)
    b = int(np.argmax(coarse))
    start = lo + (b - 1) * coarse_ps
    sel = rel[(rel >= start) & (rel < start + 3 * coarse_ps)]
    n_fine = int(np.ceil(3 * coarse_ps / fine_ps))
    fine = np.bincount(((sel - start) // fine_ps).astype(np.int64), minlength=n_fine)
    f = int(np.argmax(fine))
    return float(start + (f + 0.5) * fine_ps)


def click_window(relative_times, window_ns: float = 8.0, center="auto") -> tuple[float, float]:
    """Half-open window ``[start, stop)`` in ps around ``center`` (or the mode)."""
    c = find_window_center(relative_times) if center == "auto" else float(center)
    half = window_ns * 1e3 / 2.0
    return c - half, c + half


def windowed_click_probability(relative_times, n_pulses: int, window_ns: float = 8.0, center="auto") -> float:
    if n_pulses < 1:
        raise DomainError("n_pulses must be >= 1")
    rel = np.asarray(relative_times, dtype=float)
    start, stop = click_window(rel, window_ns, center)
    return int(np.count_nonzero((rel >= start) & (rel < stop))) / n_pulses


def bin_clicks(relative_times, n_pulses: int, bin_width_ps: float = 13.0, window=(0.0, 8000.0)):
    """Per-bin click counts in ``[start, stop)``; returns ``(edges, counts)``."""
    if n_pulses < 1:
        raise DomainError("n_pulses must be >= 1")
    start, stop = map(float, window)
    if bin_width_ps <= 0:
        raise DomainError("bin width must be positive")
    n_bins = (stop - start) / bin_width_ps
    if stop <= start or abs(n_bins - round(n_bins)) > 1e-9:
        raise ValueError(f"bin width {bin_width_ps} ps does not divide the window {start}..{stop}")
    n_bins = int(round(n_bins))
    rel = np.asarray(relative_times, dtype=float)
    rel = rel[(rel >= start) & (rel < stop)]
    idx = np.floor((rel - start) / bin_width_ps).astype(np.int64)
    # guard against rounding in (rel - start) / width at the last edge
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    edges = start + bin_width_ps * np.arange(n_bins + 1)
    return edges, counts


def mean_photon_number(avg_power_w: float, rep_rate_hz: float, wavelength_nm: float, attenuation_db: float = 0.0) -> float:
    """Mean photons per pulse after an attenuator of ``attenuation_db``."""
    if avg_power_w <= 0 or rep_rate_hz <= 0 or wavelength_nm <= 0:
        raise DomainError("power, repetition rate and wavelength must be positive")
    photon_energy = constants.h * constants.c / (wavelength_nm * 1e-9)
    return avg_power_w * 10.0 ** (-attenuation_db / 10.0) / (rep_rate_hz * photon_energy)


def ingest_streams(
    streams,
    mus,
    dead_time_us: float,
    guard_us: float = 2.0,
    window_ns: float = 8.0,
    bin_ps: float = 13.0,
    center="auto",
    rep_period_ps: Optional[float] = None,
):
    """Filter, correlate, window and bin one stream per probe.

    All probes share one window, centred on the histogram mode of the probe
    with the most clicks unless ``center`` is given. Returns
    ``(FrequencyTable, TimeBinnedFrequencies)``; the table's single column is
    the windowed click count.
    """
    rels, pulses = [], []
    for s in streams:
        rel, n = correlate(dead_time_filter(s, dead_time_us, guard_us), rep_period_ps)
        rels.append(rel)
        pulses.append(n)
    if center == "auto":
        richest = max(range(len(rels)), key=lambda i: rels[i].size)
        center = find_window_center(rels[richest])
    start, stop = click_window(np.zeros(0), window_ns, center)
    # snap to the bin grid so the window and the bins cover the same interval
    n_bins = int(round((stop - start) / bin_ps))
    start = float(np.floor(start / bin_ps) * bin_ps)
    stop = start + n_bins * bin_ps
    rows = []
    for rel, n in zip(rels, pulses):
        edges, counts = bin_clicks(rel, n, bin_ps, (start, stop))
        rows.append(counts)
    counts = np.array(rows, dtype=float)
    table = FrequencyTable(counts.sum(axis=1), np.array(pulses, float), ("click",))
    binned = TimeBinnedFrequencies(edges, counts, np.array(pulses, float), np.asarray(mus, float))
    return table, binned

"""Command-line front end.

Every subcommand reads its parameters from, in increasing precedence, a
preset, a ``key = value`` config file and long-form flags. Unknown keys are
usage errors. Exit codes: 0 success, 1 usage error, 2 data error,
3 solver did not converge (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .core import (
    DimensionError,
    DomainError,
    FrequencyTable,
    PovmDiagonal,
    ProbeEnsemble,
    dump_json,
    read_frequency_csv,
    write_frequency_csv,
)
from .ingest import TimeBinnedFrequencies, TimestampStream, ingest_streams
from .jitter import (
    ClickDensity,
    JitterDistribution,
    PulseShape,
    TimeGrid,
    model_consistency_report,
)
from .recon import (
    RegularizationPlan,
    SolverConfig,
    efficiency_from_theta1,
    fit_efficiency,
    reconstruct,
    reconstruct_time_binned,
)
from .simkit import (
    DEFAULT_M_GRID,
    REP_PERIOD_PS,
    BenchmarkResult,
    GroundTruthSpec,
    first_clicks_to_stream,
    run_benchmark,
    simulate_gouzien_first_clicks,
    substream,
)

log = logging.getLogger("povmtomo")

OUT_ENV = "POVMTOMO_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOCONV = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# Parameter parsing
# --------------------------------------------------------------------------


def parse_bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_floats(s) -> list:
    """``"1,2,5"`` or an inclusive range ``"start:stop:step"``."""
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    s = str(s).strip()
    if ":" in s:
        parts = [float(p) for p in s.split(":")]
        if len(parts) not in (2, 3):
            raise ValueError(f"bad range {s!r}")
        start, stop = parts[:2]
        step = parts[2] if len(parts) == 3 else 1.0
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(n)]
    return [float(x) for x in s.split(",") if x.strip()]


def parse_ints(s) -> list:
    return [int(round(x)) for x in parse_floats(s)]


def parse_optional(kind: Callable) -> Callable:
    def conv(s):
        if s is None or str(s).strip().lower() in ("", "none", "auto"):
            return None
        return kind(s)

    return conv


def parse_strs(s) -> list:
    if isinstance(s, (list, tuple)):
        return list(s)
    return [x.strip() for x in str(s).split(",") if x.strip()]


@dataclass(frozen=True)
class Param:
    conv: Callable
    default: object
    help: str = ""


SOLVER_KEYS = {
    "tol": Param(float, 1e-9, "projected-gradient stopping tolerance"),
    "max_iter": Param(int, 100_000, "iteration cap"),
    "method": Param(str, "pgd", "pgd or spg"),
}
RECON_KEYS = {
    "k_max": Param(parse_optional(int), None, "photon-number cutoff"),
    "mode": Param(str, "adaptive", "none, static or adaptive"),
    "r_static": Param(float, 0.1, "weight for mode=static"),
    "gamma": Param(parse_optional(float), None, "inverse prior covariance"),
    "strength": Param(float, 1.0, "multiplier on the adaptive weight"),
    "enforce_completeness": Param(parse_bool, True, "project rows onto sum <= 1"),
    **SOLVER_KEYS,
}
INGEST_KEYS = {
    "dead_time_us": Param(float, 10.0, "detector dead time"),
    "guard_us": Param(float, 2.0, "extra exclusion after the dead time"),
    "window_ns": Param(float, 8.0, "click window length"),
    "bin_ps": Param(float, 13.0, "time-bin width"),
    "center_ps": Param(parse_optional(float), None, "window centre; auto uses the histogram mode"),
    "rep_period_ps": Param(parse_optional(float), None, "drop clicks a period or more after their trigger"),
}
PULSE_KEYS = {
    "pulse": Param(parse_optional(str), None, "pulse-shape CSV (t_ps, intensity)"),
    "pulse_fwhm_ps": Param(float, 240.0, "Gaussian pulse FWHM when no pulse CSV is given"),
}
JITTER_KEYS = {
    "smooth_weight": Param(parse_optional(float), None, "smoothing weight; auto uses eps2 * n_bins**2"),
    "origin_offset_ps": Param(float, 0.0, "pulse delay relative to the click record"),
    "rate_form": Param(str, "log", "log or ratio"),
    "jitter_method": Param(str, "spg", "deconvolution solver"),
    "jitter_tol": Param(float, 1e-12, "deconvolution tolerance"),
    "jitter_max_iter": Param(int, 100_000, "deconvolution iteration cap"),
}

COMMAND_KEYS = {
    "reconstruct": {
        "input": Param(parse_optional(str), None, "FrequencyTable CSV"),
        "time_binned": Param(parse_bool, False, "input is a time-binned CSV"),
        **RECON_KEYS,
    },
    "benchmark": {
        "truths": Param(parse_strs, ["ideal:1", "ideal:0.3", "random"], "ideal:<eta>, random"),
        "schemes": Param(parse_strs, ["none", "static", "adaptive"], "regularization schemes"),
        "k_max": Param(int, 29, "photon-number cutoff"),
        "mus": Param(parse_floats, parse_floats("0:29"), "probe mean photon numbers"),
        "M_grid": Param(parse_ints, list(DEFAULT_M_GRID), "trials per probe"),
        "N": Param(int, 100, "replications per grid point"),
        "r_static": Param(float, 0.1, "static weight"),
        "gamma": Param(parse_optional(float), None, "adaptive gamma (default k_max**2)"),
        **SOLVER_KEYS,
    },
    "simulate": {
        "eta": Param(float, 0.169, "detection efficiency"),
        "mus": Param(parse_floats, [1.0, 10.0, 50.0], "mean photon numbers, one stream each"),
        "n_pulses": Param(int, 1_000_000, "pulses per stream"),
        "pulse_fwhm_ps": Param(float, 240.0, "Gaussian pulse FWHM"),
        "jitter_sigma_ps": Param(float, 100.0, "Gaussian jitter width"),
        "jitter_mean_ps": Param(parse_optional(float), None, "jitter mean (default 5 sigma)"),
        "dt_ps": Param(float, 13.0, "grid spacing"),
        "rep_period_ps": Param(int, REP_PERIOD_PS, "trigger period"),
    },
    "ingest": {"input": Param(parse_optional(str), None, "directory of stream CSVs"), **INGEST_KEYS},
    "jitter": {
        "density": Param(parse_strs, [], "mu=path pairs of density CSVs (t_ps, probability)"),
        "n_pulses": Param(parse_optional(int), None, "pulses behind each density"),
        **PULSE_KEYS,
        **JITTER_KEYS,
    },
    "pipeline": {
        "from": Param(parse_optional(str), None, "directory of stream CSVs"),
        **INGEST_KEYS,
        **RECON_KEYS,
        **PULSE_KEYS,
        **JITTER_KEYS,
    },
}

for _keys in COMMAND_KEYS.values():
    _keys["seed"] = Param(parse_optional(int), None, "master seed")

PRESETS = {
    "paper-fig1": {
        "k_max": "29",
        "mus": "0:29",
        "N": "100",
        "r_static": "0.1",
        "gamma": str(29 ** 2),
    },
    "paper-detector2": {
        "k_max": "64",
        "mus": "0:50:2",
        "window_ns": "8",
        "bin_ps": "13",
    },
}


def read_config(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    out = {}
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve_config(command: str, preset: Optional[str], config_path: Optional[str], flags: dict) -> dict:
    keys = COMMAND_KEYS[command]
    raw = {}
    if preset:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        raw.update({k: v for k, v in PRESETS[preset].items() if k in keys})
    if config_path:
        file_cfg = read_config(config_path)
        unknown = sorted(set(file_cfg) - set(keys))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        raw.update(file_cfg)
    raw.update({k: v for k, v in flags.items() if v is not None})
    cfg = {}
    for k, spec in keys.items():
        try:
            cfg[k] = spec.conv(raw[k]) if k in raw else spec.default
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {k}: {raw[k]!r} ({exc})") from None
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="povmtomo", description="Detector tomography with adaptive regularization.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./povmtomo-out)")
        p.add_argument("--verbose", action="store_true")
        for k, spec in keys.items():
            p.add_argument("--" + k.replace("_", "-"), dest=k, default=None, help=spec.help)
    return parser


# --------------------------------------------------------------------------
# Run bookkeeping
# --------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import scipy
    import sklearn

    return {
        "povmtomo": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


class Run:
    """Collects inputs and outputs so the manifest can be written at the end."""

    def __init__(self, command: str, argv, cfg: dict, seed, out_dir: Path):
        self.command = command
        self.argv = list(argv)
        self.cfg = cfg
        self.seed = seed
        self.final_dir = Path(out_dir)
        # outputs are staged and only moved into place once the run got through
        self.final_dir.parent.mkdir(parents=True, exist_ok=True)
        self.out_dir = Path(tempfile.mkdtemp(prefix=".povmtomo-", dir=self.final_dir.parent))
        self.inputs: dict = {}
        self.outputs: list = []
        self.converged = True

    def add_input(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"input file not found: {p}")
        self.inputs[str(p)] = sha256_file(p)
        return p

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        p = self.out_dir / name
        self.outputs.append(name)
        return p

    def write_manifest(self, exit_code: int) -> Path:
        doc = {
            "command": self.command,
            "argv": self.argv,
            "config": _jsonable(self.cfg),
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(set(self.outputs)),
            "versions": _versions(),
            "exit_code": exit_code,
        }
        p = self.path("manifest.json")
        dump_json(doc, p)
        return p

    def commit(self) -> None:
        self.final_dir.mkdir(parents=True, exist_ok=True)
        for f in self.out_dir.iterdir():
            os.replace(f, self.final_dir / f.name)
        self.out_dir.rmdir()
        self.out_dir = self.final_dir

    def discard(self) -> None:
        shutil.rmtree(self.out_dir, ignore_errors=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "povmtomo-out"))


# --------------------------------------------------------------------------
# Plot data
# --------------------------------------------------------------------------


def _write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def emit_plotdata(result, kind: str, out_dir, name: Optional[str] = None) -> list:
    """Tidy CSV(s) for one figure panel; returns the written paths.

    ``fig1``  list of BenchmarkResult: truth, scheme, M, linf/fidelity mean and std
    ``fig3``  dict(mus, no_click, eta_fit): mu, p_no_click, fit
    ``fig4``  PovmDiagonal: k, outcome, theta, log10_theta
    ``fig5``  TimeBinnedFrequencies: mu, t_ps, probability
    ``fig6``  PovmDiagonal over time bins plus bin starts: k, t_ps, theta
    ``fig7a`` ConsistencyReport: mu, t_ps, rate_norm
    ``fig7b`` ConsistencyReport: mu, lag_ps, jitter_density
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name or kind}.csv"
    if kind == "fig1":
        results = result if isinstance(result, (list, tuple)) else [result]
        if not all(isinstance(r, BenchmarkResult) for r in results):
            raise TypeError("fig1 needs BenchmarkResult objects")
        rows = []
        for r in results:
            for s in r.schemes:
                for a, M in enumerate(r.M_grid):
                    rows.append((r.truth, s, M, float(r.mean(s)[a]), float(r.std(s)[a]),
                                 float(r.mean(s, "fidelity")[a]), float(r.std(s, "fidelity")[a])))
        _write_rows(path, ["truth", "scheme", "M", "linf_mean", "linf_std", "fidelity_mean", "fidelity_std"], rows)
    elif kind == "fig3":
        mus = np.asarray(result["mus"], float)
        pn = np.asarray(result["no_click"], float)
        fit = np.exp(-result["eta_fit"] * mus)
        _write_rows(path, ["mu", "p_no_click", "fit"], zip(mus.tolist(), pn.tolist(), fit.tolist()))
    elif kind == "fig4":
        if not isinstance(result, PovmDiagonal):
            raise TypeError("fig4 needs a PovmDiagonal")
        rows = []
        for i, label in enumerate(result.result_labels):
            for k in range(result.k_max + 1):
                v = float(result.theta[k, i])
                rows.append((k, label, v, float(np.log10(v)) if v > 0 else float("-inf")))
        _write_rows(path, ["k", "outcome", "theta", "log10_theta"], rows)
    elif kind == "fig5":
        if not isinstance(result, TimeBinnedFrequencies):
            raise TypeError("fig5 needs TimeBinnedFrequencies")
        p = result.probabilities
        rows = [(float(mu), float(t), float(p[j, b]))
                for j, mu in enumerate(result.mus) for b, t in enumerate(result.bin_edges[:-1])]
        _write_rows(path, ["mu", "t_ps", "probability"], rows)
    elif kind == "fig6":
        povm, starts = result
        rows = [(k, float(t), float(povm.theta[k, b]))
                for b, t in enumerate(starts) for k in range(povm.k_max + 1)]
        _write_rows(path, ["k", "t_ps", "theta"], rows)
    elif kind in ("fig7a", "fig7b"):
        rows = []
        for mu, rate, jit in zip(result.mus, result.rates, result.jitters):
            if kind == "fig7a":
                y = rate.normalized()
                rows += [(mu, float(t), float(v)) for t, v in zip(rate.grid.times, y)]
            else:
                rows += [(mu, float(t), float(v)) for t, v in zip(jit.grid.times, jit.density)]
        header = ["mu", "t_ps", "rate_norm"] if kind == "fig7a" else ["mu", "lag_ps", "jitter_density"]
        _write_rows(path, header, rows)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    return [path]


# --------------------------------------------------------------------------
# Loading helpers
# --------------------------------------------------------------------------


def read_pulse_csv(path) -> PulseShape:
    """Pulse CSV with columns ``t_ps, intensity`` on a uniform grid; normalized on load."""
    rows = list(csv.reader(Path(path).open()))
    if not rows or [h.strip() for h in rows[0][:2]] != ["t_ps", "intensity"]:
        raise DataError(f"{path}: expected header t_ps,intensity")
    data = np.array([[float(v) for v in r[:2]] for r in rows[1:] if r])
    t = data[:, 0]
    if t.size < 1:
        raise DataError(f"{path}: no samples")
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    if t.size > 1 and not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-9):
        raise DataError(f"{path}: time grid is not uniform")
    return PulseShape.from_samples(TimeGrid(float(t[0]), dt, t.size), data[:, 1])


def write_pulse_csv(pulse: PulseShape, path) -> None:
    _write_rows(path, ["t_ps", "intensity"], zip(pulse.grid.times.tolist(), pulse.intensity.tolist()))


def read_density_csv(path, n_pulses=None) -> ClickDensity:
    rows = list(csv.reader(Path(path).open()))
    if not rows or [h.strip() for h in rows[0][:2]] != ["t_ps", "probability"]:
        raise DataError(f"{path}: expected header t_ps,probability")
    data = np.array([[float(v) for v in r[:2]] for r in rows[1:] if r])
    t = data[:, 0]
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    return ClickDensity.from_probabilities(TimeGrid(float(t[0]), dt, t.size), data[:, 1], n_pulses)


def write_density_csv(dens: ClickDensity, path) -> None:
    _write_rows(path, ["t_ps", "probability"], zip(dens.grid.times.tolist(), dens.probabilities.tolist()))


def discover_streams(directory) -> list:
    """``(mu, path)`` pairs from ``probes.csv`` (columns file, mu) in ``directory``."""
    d = Path(directory)
    index = d / "probes.csv"
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    if not index.is_file():
        raise DataError(f"{d} has no probes.csv index")
    rows = list(csv.DictReader(index.open()))
    if not rows or not {"file", "mu"} <= set(rows[0]):
        raise DataError(f"{index}: expected columns file,mu")
    pairs = sorted(((float(r["mu"]), d / r["file"]) for r in rows), key=lambda x: x[0])
    for _, p in pairs:
        if not p.is_file():
            raise DataError(f"stream file not found: {p}")
    return pairs


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def _solver(cfg) -> SolverConfig:
    return SolverConfig(cfg["tol"], cfg["max_iter"], cfg["enforce_completeness"], cfg["method"])


def _plan(cfg) -> RegularizationPlan:
    return RegularizationPlan(cfg["mode"], r_static=cfg["r_static"], gamma=cfg["gamma"], strength=cfg["strength"])


def cmd_reconstruct(run: Run, cfg: dict) -> None:
    if not cfg["input"]:
        raise UsageError("reconstruct needs --input")
    src = run.add_input(cfg["input"])
    if cfg["time_binned"]:
        binned = TimeBinnedFrequencies.read_csv(src)
        rep = reconstruct_time_binned(binned, None, cfg["k_max"], cfg["gamma"], _solver(cfg), cfg["strength"])
        emit_plotdata((rep.povm, binned.bin_edges[:-1]), "fig6", run.out_dir)
        run.outputs.append("fig6.csv")
    else:
        table, mus = read_frequency_csv(src)
        rep = reconstruct(table, ProbeEnsemble(mus, table.trials), cfg["k_max"], _plan(cfg), _solver(cfg))
        emit_plotdata(rep.povm, "fig4", run.out_dir)
        run.outputs.append("fig4.csv")
    dump_json(rep.to_json(), run.path("report.json"))
    rep.povm.write_csv(run.path("povm.csv"))
    run.converged &= rep.converged


def _parse_truth(token: str, k_max: int) -> GroundTruthSpec:
    if token.startswith("ideal:"):
        return GroundTruthSpec.ideal(float(token.split(":", 1)[1]), k_max)
    if token in ("random", "random_uniform"):
        return GroundTruthSpec.random_uniform(k_max)
    raise UsageError(f"unknown truth {token!r}; use ideal:<eta> or random")


def cmd_benchmark(run: Run, cfg: dict) -> None:
    seed = 0 if run.seed is None else run.seed
    run.seed = seed
    specs = [_parse_truth(t, cfg["k_max"]) for t in cfg["truths"]]
    solver = SolverConfig(cfg["tol"], cfg["max_iter"], True, cfg["method"])
    results = []
    for i, spec in enumerate(specs):
        # each truth gets its own seed branch so adding one leaves the others unchanged
        results.append(run_benchmark(spec, cfg["schemes"], cfg["M_grid"], cfg["N"], seed * 1000 + i,
                                     cfg["mus"], cfg["r_static"], cfg["gamma"], solver))
    with run.path("benchmark.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["truth", "scheme", "M", "replication", "linf", "fidelity"])
        for r in results:
            for s, M, rep, linf, fid in r.rows():
                w.writerow([r.truth, s, M, rep, repr(linf), repr(fid)])
    dump_json({"results": [r.summary() for r in results]}, run.path("summary.json"))
    emit_plotdata(results, "fig1", run.out_dir)
    run.outputs.append("fig1.csv")
    run.converged &= all(bool(np.all(c)) for r in results for c in r.converged.values())


def cmd_simulate(run: Run, cfg: dict) -> None:
    seed = 0 if run.seed is None else run.seed
    run.seed = seed
    dt = cfg["dt_ps"]
    pulse = PulseShape.gaussian(cfg["pulse_fwhm_ps"], dt)
    jit = JitterDistribution.gaussian(cfg["jitter_sigma_ps"], dt, cfg["jitter_mean_ps"])
    index = []
    for i, mu in enumerate(cfg["mus"]):
        times = simulate_gouzien_first_clicks(cfg["eta"], pulse.with_mu(mu), jit, cfg["n_pulses"], substream(seed, i))
        stream = first_clicks_to_stream(times, cfg["rep_period_ps"], int(dt) if float(dt).is_integer() else None)
        name = f"stream_{i:03d}.csv"
        stream.write_csv(run.path(name))
        index.append((name, mu))
    _write_rows(run.path("probes.csv"), ["file", "mu"], index)
    write_pulse_csv(pulse, run.path("pulse.csv"))
    dump_json({"eta": cfg["eta"], "jitter_mass": jit.mass.tolist(), "dt_ps": dt}, run.path("truth.json"))


def _ingest(run: Run, cfg: dict, directory) -> tuple:
    pairs = discover_streams(directory)
    for _, p in pairs:
        run.add_input(p)
    streams = [TimestampStream.read_csv(p) for _, p in pairs]
    mus = [mu for mu, _ in pairs]
    center = "auto" if cfg["center_ps"] is None else cfg["center_ps"]
    table, binned = ingest_streams(streams, mus, cfg["dead_time_us"], cfg["guard_us"], cfg["window_ns"],
                                   cfg["bin_ps"], center, cfg["rep_period_ps"])
    write_frequency_csv(table, np.array(mus), run.path("frequencies.csv"))
    binned.write_csv(run.path("time_binned.csv"))
    emit_plotdata(binned, "fig5", run.out_dir)
    run.outputs.append("fig5.csv")
    return table, binned, np.array(mus)


def cmd_ingest(run: Run, cfg: dict) -> None:
    if not cfg["input"]:
        raise UsageError("ingest needs --input")
    _ingest(run, cfg, cfg["input"])


def _pulse(run: Run, cfg: dict, dt: float) -> PulseShape:
    if cfg["pulse"]:
        pulse = read_pulse_csv(run.add_input(cfg["pulse"]))
        if not np.isclose(pulse.grid.dt_ps, dt):
            raise DataError(f"pulse grid spacing {pulse.grid.dt_ps} ps differs from the data's {dt} ps")
        return pulse
    return PulseShape.gaussian(cfg["pulse_fwhm_ps"], dt)


def _jitter_analysis(run: Run, cfg: dict, datasets, pulse) -> None:
    report = model_consistency_report(
        datasets, pulse, cfg["smooth_weight"], cfg["origin_offset_ps"], cfg["rate_form"],
        tol=cfg["jitter_tol"], max_iter=cfg["jitter_max_iter"], method=cfg["jitter_method"],
    )
    dump_json(report.to_json(), run.path("jitter_report.json"))
    emit_plotdata(report, "fig7a", run.out_dir, "rates")
    emit_plotdata(report, "fig7b", run.out_dir, "jitters")
    run.outputs += ["rates.csv", "jitters.csv"]


def cmd_jitter(run: Run, cfg: dict) -> None:
    if not cfg["density"]:
        raise UsageError("jitter needs --density mu=path[,mu=path...]")
    datasets = []
    for item in cfg["density"]:
        if "=" not in item:
            raise UsageError(f"density entries are mu=path, got {item!r}")
        mu, path = item.split("=", 1)
        datasets.append((float(mu), read_density_csv(run.add_input(path), cfg["n_pulses"])))
    pulse = _pulse(run, cfg, datasets[0][1].grid.dt_ps)
    _jitter_analysis(run, cfg, datasets, pulse)


def cmd_pipeline(run: Run, cfg: dict) -> None:
    if not cfg["from"]:
        raise UsageError("pipeline needs --from")
    # validate the pulse before the slow ingest step
    pulse = _pulse(run, cfg, cfg["bin_ps"])
    table, binned, mus = _ingest(run, cfg, cfg["from"])

    ens = ProbeEnsemble(mus, table.trials)
    rep = reconstruct(table, ens, cfg["k_max"], _plan(cfg), _solver(cfg))
    dump_json(rep.to_json(), run.path("report.json"))
    rep.povm.write_csv(run.path("povm.csv"))
    no_click = 1.0 - table.freq[:, 0]
    eff = {"eta_theta1": efficiency_from_theta1(rep.povm)}
    if np.unique(mus).size >= 3:
        eff["eta_fit"] = fit_efficiency(no_click, mus)
        emit_plotdata({"mus": mus, "no_click": no_click, "eta_fit": eff["eta_fit"]}, "fig3", run.out_dir)
        run.outputs.append("fig3.csv")
    dump_json(eff, run.path("efficiency.json"))

    trep = reconstruct_time_binned(binned, ens, cfg["k_max"], cfg["gamma"], _solver(cfg), cfg["strength"])
    dump_json(trep.to_json(), run.path("time_binned_report.json"))
    emit_plotdata((trep.povm, binned.bin_edges[:-1]), "fig6", run.out_dir)
    run.outputs.append("fig6.csv")
    run.converged &= rep.converged and trep.converged

    grid = TimeGrid(float(binned.bin_edges[0]), binned.bin_width, binned.counts.shape[1])
    datasets = [
        (float(mu), ClickDensity.from_probabilities(grid, binned.probabilities[j], int(binned.trials[j])))
        for j, mu in enumerate(mus)
        if mu > 0 and binned.counts[j].sum() > 0
    ]
    if datasets:
        _jitter_analysis(run, cfg, datasets, pulse)


COMMANDS = {
    "reconstruct": cmd_reconstruct,
    "benchmark": cmd_benchmark,
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "jitter": cmd_jitter,
    "pipeline": cmd_pipeline,
}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    job = None
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        flags = {k: getattr(ns, k) for k in COMMAND_KEYS[ns.command]}
        cfg = resolve_config(ns.command, ns.preset, ns.config, flags)
        out_dir = Path(ns.out) if ns.out else default_out_dir()
        job = Run(ns.command, argv, cfg, cfg["seed"], out_dir)
        if ns.config:
            job.add_input(ns.config)
        COMMANDS[ns.command](job, cfg)
    except UsageError as exc:
        if job is not None:
            job.discard()
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError, DimensionError, ValueError, OSError) as exc:
        if job is not None:
            job.discard()
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BaseException:
        if job is not None:
            job.discard()
        raise
    code = EXIT_OK if job.converged else EXIT_NOCONV
    if code == EXIT_NOCONV:
        log.warning("solver did not converge; outputs written anyway")
    job.write_manifest(code)
    job.commit()
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

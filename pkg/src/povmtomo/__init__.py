"""Fock-diagonal detector tomography with adaptive regularization, plus
time-resolved click analysis for jittered single-photon detectors."""

__version__ = "0.1.0"

from .core import (
    DimensionError,
    DomainError,
    FrequencyTable,
    PoissonDesignMatrix,
    PovmDiagonal,
    ProbeEnsemble,
    build_design_matrix,
    ideal_detector_povm,
    metric_fidelity,
    metric_linf,
    poisson_pmf_rows,
    predict_probabilities,
    suggest_k_max,
)
from .recon import (
    EfficiencyFit,
    PovmTomography,
    ReconstructionReport,
    RegularizationPlan,
    SolverConfig,
    adaptive_epsilon_sq,
    efficiency_from_theta1,
    fit_efficiency,
    objective,
    objective_gradient,
    reconstruct,
    reconstruct_time_binned,
)
from .jitter import (
    ClickDensity,
    JitterDeconvolution,
    JitterDistribution,
    PulseShape,
    RateProfile,
    TimeGrid,
    click_density_wavepacket,
    deconvolve_jitter,
    extract_rate,
    model_consistency_report,
    reconvolve_check,
)
from .simkit import (
    BenchmarkResult,
    GroundTruthSpec,
    histogram_first_clicks,
    run_benchmark,
    sample_clicks,
    simulate_gouzien_first_clicks,
)
from .ingest import (
    TimeBinnedFrequencies,
    TimestampStream,
    bin_clicks,
    correlate,
    dead_time_filter,
    ingest_streams,
    mean_photon_number,
    windowed_click_probability,
)

"""
Gaugecal - Statistical calibration of bounded water-level ensemble forecasts.

Post-processes multi-model ensemble forecasts into calibrated predictive
distributions with doubly truncated normal Bayesian model averaging
(fitted by a mean-corrected EM algorithm) and a truncated normal EMOS
reference, and verifies them with CRPS, PIT, coverage and
Diebold-Mariano tests.

Example:
    >>> from gaugecal import GroupSpec, RunConfig, load_dataset, run_calibration
    >>>
    >>> ds = load_dataset("forecasts.csv", "observations.csv", GroupSpec.kaub())
    >>> result = run_calibration(ds, RunConfig(output_dir="run"))
    >>> print(result.scores)
"""

from __future__ import annotations

__version__ = "0.1.0"

# Version must be bound before submodules import it.
from gaugecal.bma import BmaModel, EmDiagnostics, TrainingData, bma_fit, bma_predict
from gaugecal.boxcox import BoxCoxParam, bc_fit_lambda, bc_inverse, bc_transform
from gaugecal.config import (
    BmaControls,
    BoundsMode,
    BoundsPolicy,
    EmosControls,
    LambdaGrid,
    LocationSolver,
    MeanAnchor,
    RunConfig,
)
from gaugecal.dataset import Dataset, load_dataset, rolling_windows, write_dataset
from gaugecal.distributions import (
    TruncatedNormal,
    TruncatedNormalMixture,
    mix_cdf,
    mix_crps,
    mix_quantile,
    tn_cdf,
    tn_crps,
    tn_moments,
    tn_pdf,
    tn_quantile,
)
from gaugecal.documents import ModelDocument, read_document, write_document
from gaugecal.emos import EmosModel, OptimizerDiagnostics, emos_fit, emos_predict
from gaugecal.logging import LogConfig, configure_logging, get_logger
from gaugecal.metrics import RunMetrics, Timer
from gaugecal.pipeline import RunResult, RunStatus, run_calibration, score_run
from gaugecal.synthetic import Scenario, synth_generate
from gaugecal.types import (
    BmaVariant,
    ConfigError,
    DataError,
    DomainError,
    FitError,
    ForecastCase,
    GaugecalError,
    GroupSpec,
    GroupSpecMismatchError,
    MemberGroup,
    ModelName,
)
from gaugecal.verification import (
    ScoreSeries,
    crps_backtransformed,
    crpss,
    dm_test,
    interval_coverage_width,
    ks_uniformity_subsampled,
    pit,
    verification_rank,
)

__all__ = [
    "BmaControls",
    "BmaModel",
    "BmaVariant",
    "BoundsMode",
    "BoundsPolicy",
    "BoxCoxParam",
    "ConfigError",
    "DataError",
    "Dataset",
    "DomainError",
    "EmDiagnostics",
    "EmosControls",
    "EmosModel",
    "FitError",
    "ForecastCase",
    "GaugecalError",
    "GroupSpec",
    "GroupSpecMismatchError",
    "LambdaGrid",
    "LocationSolver",
    "LogConfig",
    "MeanAnchor",
    "MemberGroup",
    "ModelDocument",
    "ModelName",
    "OptimizerDiagnostics",
    "RunConfig",
    "RunMetrics",
    "RunResult",
    "RunStatus",
    "Scenario",
    "ScoreSeries",
    "Timer",
    "TrainingData",
    "TruncatedNormal",
    "TruncatedNormalMixture",
    "__version__",
    "bc_fit_lambda",
    "bc_inverse",
    "bc_transform",
    "bma_fit",
    "bma_predict",
    "configure_logging",
    "crps_backtransformed",
    "crpss",
    "dm_test",
    "emos_fit",
    "emos_predict",
    "get_logger",
    "interval_coverage_width",
    "ks_uniformity_subsampled",
    "load_dataset",
    "mix_cdf",
    "mix_crps",
    "mix_quantile",
    "pit",
    "read_document",
    "rolling_windows",
    "run_calibration",
    "score_run",
    "synth_generate",
    "tn_cdf",
    "tn_crps",
    "tn_moments",
    "tn_pdf",
    "tn_quantile",
    "verification_rank",
    "write_dataset",
    "write_document",
]

"""Run configuration for Gaugecal.

This module provides the configuration models for calibration runs:
estimator controls, the Box-Cox grid, the bounds policy and the
top-level RunConfig, loadable from a JSON file.
"""

from __future__ import annotations

import json
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from gaugecal.logging import LogConfig
from gaugecal.types import ConfigError, ModelName

# ============================================================================
# Estimator Controls
# ============================================================================


class MeanAnchor(str, Enum):
    """Location the mean correction is anchored to."""

    INITIAL = "initial"
    CURRENT = "current"


class LocationSolver(str, Enum):
    """How the pure ML location update solves its two normal equations.

    SEQUENTIAL is the textbook update: the intercept is solved with the
    previous slope and the slope with the previous intercept. JOINT, the
    default, solves both equations together at the same fixed point, which
    takes fewer EM iterations; it is a deviation from the textbook update,
    not a restatement of it.
    """

    JOINT = "joint"
    SEQUENTIAL = "sequential"


class BmaControls(BaseModel):
    """EM controls for BMA fitting."""

    model_config = ConfigDict(frozen=True)

    max_iter: int = Field(default=500, ge=1)
    """Maximum EM iterations."""

    tol: float = Field(default=1e-6, gt=0)
    """Relative log-likelihood change that ends the iteration."""

    anchor: MeanAnchor = MeanAnchor.INITIAL
    """Anchor of the mean correction (pure ML variant)."""

    location_solver: LocationSolver = LocationSolver.JOINT
    """Solver for the intercept/slope update (pure ML variant)."""


class EmosControls(BaseModel):
    """Optimizer controls for EMOS fitting."""

    model_config = ConfigDict(frozen=True)

    max_evaluations: int = Field(default=10_000, ge=10)
    """Total objective evaluations across all restarts."""

    fatol: float = Field(default=1e-9, gt=0)
    """Spread of mean CRPS across the simplex that counts as converged."""

    xatol: float = Field(default=1e-7, gt=0)
    """Simplex size in parameter space that counts as converged."""

    restarts: int = Field(default=3, ge=0)
    """Restarts from the best vertex after the first run."""


# ============================================================================
# Transform and Bounds
# ============================================================================


class LambdaGrid(BaseModel):
    """Search grid for the Box-Cox coefficient."""

    model_config = ConfigDict(frozen=True)

    lo: float = -1.0
    hi: float = 2.0
    step: float = Field(default=0.01, gt=0)

    @model_validator(mode="after")
    def validate_range(self) -> LambdaGrid:
        """Require lo < hi."""
        if not self.lo < self.hi:
            raise ValueError(f"lambda grid needs lo < hi, got ({self.lo}, {self.hi})")
        return self

    def values(self) -> np.ndarray:
        """Grid points from lo to hi inclusive, rounded to the step's precision."""
        n = int(np.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return np.round(self.lo + self.step * np.arange(n), 10)


class BoundsMode(str, Enum):
    """How physical truncation bounds are chosen."""

    HALF_MIN_DOUBLE_MAX = "half_min_double_max"
    EXPLICIT = "explicit"


class BoundsPolicy(BaseModel):
    """Physical (cm) truncation bounds."""

    model_config = ConfigDict(frozen=True)

    mode: BoundsMode = BoundsMode.HALF_MIN_DOUBLE_MAX
    lower_cm: float | None = None
    upper_cm: float | None = None

    @model_validator(mode="after")
    def validate_explicit(self) -> BoundsPolicy:
        """Explicit bounds need both values with 0 < lower < upper."""
        if self.mode is BoundsMode.EXPLICIT:
            if self.lower_cm is None or self.upper_cm is None:
                raise ValueError("explicit bounds need lower_cm and upper_cm")
            if not 0 < self.lower_cm < self.upper_cm:
                raise ValueError(
                    f"explicit bounds need 0 < lower < upper, got "
                    f"({self.lower_cm}, {self.upper_cm})"
                )
        return self

    def resolve(self, observations: np.ndarray) -> tuple[float, float]:
        """Physical bounds for a record of observations.

        Args:
            observations: All observed water levels in cm.

        Returns:
            (lower, upper) in cm.
        """
        if self.mode is BoundsMode.EXPLICIT:
            assert self.lower_cm is not None and self.upper_cm is not None
            return self.lower_cm, self.upper_cm
        obs = np.asarray(observations, dtype=float)
        if obs.size == 0:
            raise ConfigError("cannot derive bounds from an empty observation record")
        return 0.5 * float(obs.min()), 2.0 * float(obs.max())


# ============================================================================
# Run Configuration
# ============================================================================

DEFAULT_MODELS = (
    ModelName.BMA_PURE_ML,
    ModelName.BMA_SIMPLIFIED,
    ModelName.BMA_NAIVE,
    ModelName.EMOS,
)


class RunConfig(BaseModel):
    """Configuration of one calibration run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    window_days: int = Field(default=100, ge=30)
    """Length of the rolling training window in calendar days."""

    variants: list[ModelName] = Field(default_factory=lambda: list(DEFAULT_MODELS))
    """Post-processing models to fit (the raw ensemble is always scored)."""

    lead_times: list[int] | None = None
    """Lead times to process; None means all in the dataset."""

    bounds_policy: BoundsPolicy = Field(default_factory=BoundsPolicy)
    lambda_grid: LambdaGrid = Field(default_factory=LambdaGrid)

    refit_lambda: bool = False
    """Refit the Box-Cox coefficient on every window instead of once per lead time."""

    min_presence: float = Field(default=0.9, gt=0, le=1)
    """Fraction of window days that must have a complete case."""

    seed: int = 0
    """Seed for rank tie-breaking and KS subsampling."""

    workers: int = Field(default=1, ge=1)
    """Worker processes; results do not depend on this."""

    bma: BmaControls = Field(default_factory=BmaControls)
    emos: EmosControls = Field(default_factory=EmosControls)

    interval_alpha: float | None = Field(default=None, gt=0, lt=1)
    """Central interval miss probability; None means 2/(M+1)."""

    ks_samples: int = Field(default=1000, ge=1)
    ks_sample_size: int = Field(default=1000, ge=10)

    pit_bins: int | None = Field(default=None, ge=2)
    """PIT histogram bins; None means M+1."""

    dm_lags: int | None = Field(default=None, ge=1)
    """Autocovariance lags of the DM test; None derives them from the lead time."""

    output_dir: Path = Path("gaugecal-run")

    log: LogConfig = Field(default_factory=LogConfig)

    @model_validator(mode="after")
    def validate_variants(self) -> RunConfig:
        """Require at least one fitted model and no raw ensemble entry."""
        if not self.variants:
            raise ValueError("at least one model variant is required")
        if ModelName.RAW in self.variants:
            raise ValueError("the raw ensemble is always scored; do not list it as a variant")
        if len(set(self.variants)) != len(self.variants):
            raise ValueError("variants must be unique")
        return self

    @classmethod
    def from_file(cls, path: Path, **overrides: Any) -> RunConfig:
        """Load a configuration from a JSON file, applying overrides.

        Args:
            path: JSON file with RunConfig fields.
            **overrides: Field values that replace file values (None is ignored).

        Raises:
            ConfigError: If the file cannot be read or does not validate.
        """
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        return cls.build(**{**data, **overrides})

    @classmethod
    def build(cls, **values: Any) -> RunConfig:
        """Validate field values, mapping validation errors to ConfigError.

        Raises:
            ConfigError: If validation fails.
        """
        try:
            return cls.model_validate({k: v for k, v in values.items() if v is not None})
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

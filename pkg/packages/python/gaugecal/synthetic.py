"""Synthetic ensemble datasets for Gaugecal.

This module provides a generator of water-level forecast datasets with a
known error structure. A latent hourly water level follows a bounded
AR(1) process on the Box-Cox scale; each forecast case gets a shared
forecast error growing with lead time, per-group biases and a
configurable dispersion deficit, so the raw ensemble can be made
underdispersive and biased on purpose.
"""

from __future__ import annotations

import math
from datetime import date, timedelta

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gaugecal.boxcox import bc_inverse, bc_transform
from gaugecal.dataset import Dataset
from gaugecal.distributions import tn_ppf_array
from gaugecal.logging import get_logger
from gaugecal.types import ConfigError, ForecastCase, GroupSpec

logger = get_logger(__name__)

ISSUE_HOUR_UTC = 6


class Scenario(BaseModel):
    """Parameters of a synthetic dataset."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    start_date: date = date(2008, 1, 1)
    n_days: int = Field(default=400, ge=2)
    lead_times: list[int] = Field(default_factory=lambda: [1, 24, 72, 120])
    groups: GroupSpec = Field(default_factory=GroupSpec.kaub)
    location: str = "kaub"

    min_cm: float = 35.0
    """Lowest water level of the latent process."""

    max_cm: float = 825.0
    """Highest water level of the latent process."""

    lam: float = 0.25
    """Box-Cox coefficient of the scale the process lives on."""

    persistence: float = Field(default=0.998, ge=0, lt=1)
    """Hourly AR(1) coefficient."""

    volatility: float = Field(default=0.08, gt=0)
    """Hourly innovation standard deviation (transformed units)."""

    error_base: float = Field(default=0.05, ge=0)
    error_growth: float = Field(default=0.04, ge=0)
    """Forecast error sd is error_base + error_growth * sqrt(lead hours)."""

    observation_noise: float = Field(default=0.05, gt=0)
    """Standard deviation of the truncated observation noise."""

    dispersion: float = Field(default=0.4, gt=0)
    """Member spread relative to a calibrated ensemble (1 = calibrated)."""

    common_bias: float = 0.0
    """Bias shared by all members (transformed units)."""

    group_bias: list[float] | None = None
    """Additional bias per group (transformed units)."""

    @model_validator(mode="after")
    def validate_feasible(self) -> Scenario:
        """Reject crossed bounds, bad lead times and mismatched group biases."""
        if not 0 < self.min_cm < self.max_cm:
            raise ValueError(f"need 0 < min_cm < max_cm, got ({self.min_cm}, {self.max_cm})")
        if not self.lead_times or min(self.lead_times) < 1:
            raise ValueError("lead times must be positive hours")
        if len(set(self.lead_times)) != len(self.lead_times):
            raise ValueError("lead times must be unique")
        if self.group_bias is not None and len(self.group_bias) != self.groups.n_groups:
            raise ValueError(
                f"group_bias has {len(self.group_bias)} entries for {self.groups.n_groups} groups"
            )
        return self

    def forecast_error_sd(self, lead_time_h: int) -> float:
        return self.error_base + self.error_growth * math.sqrt(lead_time_h)

    def biases(self) -> np.ndarray:
        """Total bias per group."""
        extra = np.asarray(self.group_bias or [0.0] * self.groups.n_groups, dtype=float)
        return self.common_bias + extra


def _latent_process(scenario: Scenario, hours: int, rng: np.random.Generator) -> np.ndarray:
    """Hourly AR(1) on the transformed scale, clipped to the transformed range."""
    lo = float(bc_transform(scenario.min_cm, scenario.lam))
    hi = float(bc_transform(scenario.max_cm, scenario.lam))
    centre = 0.5 * (lo + hi)
    phi = scenario.persistence
    shocks = rng.normal(0.0, scenario.volatility, size=hours)
    level = np.empty(hours)
    stationary_sd = scenario.volatility / math.sqrt(1.0 - phi * phi)
    current = min(max(centre + stationary_sd * float(rng.normal()), lo), hi)
    for t in range(hours):
        current = min(max(centre + phi * (current - centre) + shocks[t], lo), hi)
        level[t] = current
    return level


def synth_generate(scenario: Scenario, seed: int) -> Dataset:
    """Generate a complete dataset in cm.

    Args:
        scenario: Generator parameters.
        seed: Seed of the random generator; equal seeds give equal datasets.

    Returns:
        A Dataset with one case per (day, lead time).

    Raises:
        ConfigError: If the transformed range is not usable with the scenario's lambda.
    """
    lam = scenario.lam
    lo = float(bc_transform(scenario.min_cm, lam))
    hi = float(bc_transform(scenario.max_cm, lam))
    member_floor = float(bc_transform(1.0, lam))
    if not lo < hi:
        raise ConfigError("scenario bounds collapse on the transformed scale")

    rng = np.random.default_rng(seed)
    spec = scenario.groups
    horizon = scenario.n_days * 24 + ISSUE_HOUR_UTC + max(scenario.lead_times) + 1
    truth = _latent_process(scenario, horizon, rng)
    noise = scenario.observation_noise
    observed = tn_ppf_array(rng.uniform(1e-12, 1.0 - 1e-12, size=horizon), truth, noise, lo, hi)

    groups = spec.member_groups()
    biases = scenario.biases()[groups]
    m = spec.total_members
    offsets = [*spec.offsets.tolist(), m]
    days = np.arange(scenario.n_days)

    cases: dict[tuple[date, int], ForecastCase] = {}
    for lead in sorted(scenario.lead_times):
        valid = days * 24 + ISSUE_HOUR_UTC + lead
        err_sd = scenario.forecast_error_sd(lead)
        centre = truth[valid] + rng.normal(0.0, err_sd, size=scenario.n_days)
        spread = scenario.dispersion * math.sqrt(err_sd**2 + noise**2)
        jitter = rng.standard_normal((scenario.n_days, m))
        members = centre[:, None] + biases[None, :] + spread * jitter
        members_cm = bc_inverse(np.maximum(members, member_floor), lam)
        obs_cm = bc_inverse(observed[valid], lam)
        for i, day in enumerate(days):
            issue = scenario.start_date + timedelta(days=int(day))
            row = np.round(np.asarray(members_cm[i]), 4)
            cases[(issue, lead)] = ForecastCase(
                location=scenario.location,
                issue_date=issue,
                lead_time_h=lead,
                members=[row[offsets[k] : offsets[k + 1]].tolist() for k in range(spec.n_groups)],
                observation=round(float(obs_cm[i]), 4),
            )

    logger.info(
        "Generated synthetic dataset",
        days=scenario.n_days,
        lead_times=len(scenario.lead_times),
        members=m,
        seed=seed,
    )
    return Dataset(spec=spec, cases=cases, location=scenario.location)

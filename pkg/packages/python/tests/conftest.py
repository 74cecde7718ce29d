"""Pytest configuration and fixtures."""

from __future__ import annotations

from collections.abc import Callable
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from gaugecal.bma import TrainingData
from gaugecal.config import EmosControls, RunConfig
from gaugecal.dataset import Dataset
from gaugecal.distributions import tn_ppf_array
from gaugecal.synthetic import Scenario, synth_generate
from gaugecal.types import ForecastCase, GroupSpec

CaseFactory = Callable[..., ForecastCase]


@pytest.fixture
def two_groups() -> GroupSpec:
    """A small two-group ensemble: one control run and three exchangeable members."""
    return GroupSpec.from_sizes({"ctrl": 1, "ens": 3})


@pytest.fixture
def make_case() -> CaseFactory:
    """Factory for forecast cases with sensible defaults."""

    def factory(
        members: list[list[float]] | None = None,
        observation: float | None = 100.0,
        issue_date: date = date(2010, 5, 1),
        lead_time_h: int = 24,
        location: str = "kaub",
    ) -> ForecastCase:
        return ForecastCase(
            location=location,
            issue_date=issue_date,
            lead_time_h=lead_time_h,
            members=members or [[98.0], [95.0, 101.0, 104.0]],
            observation=observation,
        )

    return factory


def mixture_training_data(
    seed: int,
    n: int = 5000,
    masses: tuple[float, float] = (0.3, 0.7),
    sigma: float = 1.0,
    bounds: tuple[float, float] = (0.0, 10.0),
) -> TrainingData:
    """Two single-member groups, observations drawn from the BMA mixture itself.

    f1 ~ U(4.5, 5.5), f2 = f1 +- 2 with a random sign; x ~ N_a^b(f_k, sigma^2)
    with group k chosen with probability ``masses[k]``. The narrow f1 range keeps
    the per-group regressions of x on f_k close to the true locations.
    """
    rng = np.random.default_rng(seed)
    f1 = rng.uniform(4.5, 5.5, size=n)
    f2 = f1 + rng.choice([-2.0, 2.0], size=n)
    forecasts = np.column_stack([f1, f2])
    pick = (rng.uniform(size=n) >= masses[0]).astype(int)
    centre = forecasts[np.arange(n), pick]
    x = tn_ppf_array(rng.uniform(size=n), centre, sigma, bounds[0], bounds[1])
    return TrainingData(
        spec=GroupSpec.from_sizes({"a": 1, "b": 1}),
        lower=bounds[0],
        upper=bounds[1],
        forecasts=forecasts,
        observations=np.asarray(x, dtype=float),
    )


@pytest.fixture
def small_scenario() -> Scenario:
    """A short synthetic record with a six-member, two-group ensemble."""
    return Scenario(
        start_date=date(2009, 1, 1),
        n_days=72,
        lead_times=[24, 72],
        groups=GroupSpec.from_sizes({"hres": 1, "eps": 5}),
    )


@pytest.fixture
def small_dataset(small_scenario: Scenario) -> Dataset:
    """Synthetic dataset generated from ``small_scenario`` with seed 7."""
    return synth_generate(small_scenario, seed=7)


@pytest.fixture
def fast_config(tmp_path: Path) -> RunConfig:
    """Run configuration sized for the small synthetic dataset."""
    return RunConfig(
        window_days=30,
        seed=11,
        ks_samples=20,
        ks_sample_size=10,
        emos=EmosControls(max_evaluations=1500, restarts=1),
        output_dir=tmp_path / "run",
    )


def daily_dates(start: date, n: int) -> list[date]:
    return [start + timedelta(days=i) for i in range(n)]

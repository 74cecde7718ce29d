"""Tests for the synthetic dataset generator."""

from __future__ import annotations

from datetime import date

import numpy as np
import pytest
from pydantic import ValidationError

from gaugecal.boxcox import bc_transform
from gaugecal.dataset import Dataset
from gaugecal.synthetic import Scenario, synth_generate
from gaugecal.types import GroupSpec
from gaugecal.verification import verification_rank


def extreme_rank_fraction(ds: Dataset, seed: int = 0) -> float:
    """Share of observations ranked below or above all members."""
    rng = np.random.default_rng(seed)
    m = ds.spec.total_members
    ranks = [
        verification_rank(c.flat_members(), c.observation, rng)
        for c in ds.cases.values()
        if c.observation is not None
    ]
    return float(np.mean([r in (1, m + 1) for r in ranks]))


def long_scenario(dispersion: float, **kwargs: float) -> Scenario:
    return Scenario(
        start_date=date(2005, 1, 1),
        n_days=600,
        lead_times=[24],
        groups=GroupSpec.from_sizes({"a": 1, "b": 4}),
        dispersion=dispersion,
        **kwargs,
    )


# ============================================================================
# Generator Tests
# ============================================================================


class TestSynthGenerate:
    """Tests for synth_generate."""

    def test_layout(self, small_scenario: Scenario, small_dataset: Dataset) -> None:
        """One complete case per day and lead time."""
        assert len(small_dataset.cases) == small_scenario.n_days * 2
        assert small_dataset.lead_times == [24, 72]
        assert small_dataset.issue_dates[0] == small_scenario.start_date
        assert len(small_dataset.issue_dates) == small_scenario.n_days
        for case in small_dataset.cases.values():
            assert case.conforms_to(small_scenario.groups)
            assert case.observation is not None and case.observation > 0
            assert np.all(case.flat_members() > 0)

    def test_deterministic(self, small_scenario: Scenario) -> None:
        """Equal seeds give equal datasets, different seeds differ."""
        first = synth_generate(small_scenario, seed=3)
        second = synth_generate(small_scenario, seed=3)
        other = synth_generate(small_scenario, seed=4)
        assert first.cases == second.cases
        assert first.cases != other.cases

    def test_values_rounded(self, small_dataset: Dataset) -> None:
        """Values carry four decimals."""
        case = next(iter(small_dataset.cases.values()))
        values = case.flat_members()
        np.testing.assert_array_equal(values, np.round(values, 4))

    def test_calibrated_ensemble_flat_ranks(self) -> None:
        """Dispersion 1 yields roughly uniform verification ranks."""
        fraction = extreme_rank_fraction(synth_generate(long_scenario(1.0), seed=21))
        assert fraction == pytest.approx(2 / 6, abs=0.1)

    def test_underdispersed_ensemble_u_shaped(self) -> None:
        """A narrow ensemble misses the observation much more often."""
        fraction = extreme_rank_fraction(synth_generate(long_scenario(0.4), seed=21))
        assert fraction > 0.5

    def test_common_bias(self) -> None:
        """A common bias shifts members above the observations."""
        scenario = long_scenario(1.0, common_bias=0.5)
        ds = synth_generate(scenario, seed=22)
        diffs = [
            np.mean(bc_transform(c.flat_members(), scenario.lam))
            - bc_transform(c.observation, scenario.lam)
            for c in ds.cases.values()
            if c.observation is not None
        ]
        assert float(np.mean(diffs)) == pytest.approx(0.5, abs=0.1)


class TestScenario:
    """Tests for Scenario validation."""

    def test_rejects_crossed_bounds(self) -> None:
        """min_cm must lie below max_cm."""
        with pytest.raises(ValidationError, match="min_cm < max_cm"):
            Scenario(min_cm=500.0, max_cm=100.0)

    def test_rejects_bad_lead_times(self) -> None:
        """Lead times are positive and unique."""
        with pytest.raises(ValidationError, match="positive"):
            Scenario(lead_times=[0, 24])
        with pytest.raises(ValidationError, match="unique"):
            Scenario(lead_times=[24, 24])

    def test_group_bias_length(self) -> None:
        """One group bias per group."""
        with pytest.raises(ValidationError, match="group_bias"):
            Scenario(groups=GroupSpec.from_sizes({"a": 1, "b": 2}), group_bias=[0.1])

    def test_error_grows_with_lead(self) -> None:
        """Forecast errors grow with lead time."""
        scenario = Scenario()
        assert scenario.forecast_error_sd(120) > scenario.forecast_error_sd(24)
        assert scenario.forecast_error_sd(1) == pytest.approx(0.09)

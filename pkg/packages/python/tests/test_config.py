"""Tests for run configuration."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from gaugecal.config import (
    DEFAULT_MODELS,
    BmaControls,
    BoundsMode,
    BoundsPolicy,
    EmosControls,
    LambdaGrid,
    LocationSolver,
    MeanAnchor,
    RunConfig,
)
from gaugecal.types import ConfigError, ModelName

# ============================================================================
# Controls Tests
# ============================================================================


class TestControls:
    """Tests for estimator controls."""

    def test_bma_defaults(self) -> None:
        """EM stops after 500 iterations or a 1e-6 relative change."""
        controls = BmaControls()
        assert controls.max_iter == 500
        assert controls.tol == 1e-6
        assert controls.anchor is MeanAnchor.INITIAL
        assert controls.location_solver is LocationSolver.JOINT

    def test_emos_defaults(self) -> None:
        """EMOS gets a budget of ten thousand evaluations."""
        controls = EmosControls()
        assert controls.max_evaluations == 10_000
        assert controls.restarts == 3

    def test_rejects_tiny_budget(self) -> None:
        """The evaluation budget has a floor."""
        with pytest.raises(ValidationError):
            EmosControls(max_evaluations=5)


class TestLambdaGrid:
    """Tests for LambdaGrid."""

    def test_default_grid(self) -> None:
        """-1 to 2 in steps of 0.01 gives 301 points."""
        values = LambdaGrid().values()
        assert values.size == 301
        assert values[0] == -1.0
        assert values[-1] == 2.0
        assert 0.0 in values
        assert 0.25 in values

    def test_coarse_grid(self) -> None:
        """Grids include their upper end when the step divides the range."""
        values = LambdaGrid(lo=0.0, hi=1.0, step=0.25).values()
        np.testing.assert_allclose(values, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_rejects_crossed_range(self) -> None:
        """lo must lie below hi."""
        with pytest.raises(ValidationError, match="lo < hi"):
            LambdaGrid(lo=1.0, hi=0.0)


class TestBoundsPolicy:
    """Tests for BoundsPolicy."""

    def test_half_min_double_max(self) -> None:
        """The default widens the observed range."""
        assert BoundsPolicy().resolve(np.array([40.0, 100.0, 800.0])) == (20.0, 1600.0)

    def test_explicit(self) -> None:
        """Explicit bounds ignore the observations."""
        policy = BoundsPolicy(mode=BoundsMode.EXPLICIT, lower_cm=10.0, upper_cm=2000.0)
        assert policy.resolve(np.array([40.0])) == (10.0, 2000.0)

    def test_explicit_needs_values(self) -> None:
        """Explicit mode needs both ordered, positive bounds."""
        with pytest.raises(ValidationError, match="lower_cm and upper_cm"):
            BoundsPolicy(mode=BoundsMode.EXPLICIT, lower_cm=10.0)
        with pytest.raises(ValidationError, match="0 < lower < upper"):
            BoundsPolicy(mode=BoundsMode.EXPLICIT, lower_cm=500.0, upper_cm=100.0)

    def test_empty_record(self) -> None:
        """Bounds cannot be derived without observations."""
        with pytest.raises(ConfigError, match="empty"):
            BoundsPolicy().resolve(np.array([]))


# ============================================================================
# RunConfig Tests
# ============================================================================


class TestRunConfig:
    """Tests for RunConfig."""

    def test_defaults(self) -> None:
        """Runs fit all four models over a 100-day window."""
        config = RunConfig()
        assert config.window_days == 100
        assert config.variants == list(DEFAULT_MODELS)
        assert config.min_presence == 0.9
        assert config.workers == 1
        assert config.lead_times is None

    def test_rejects_raw_variant(self) -> None:
        """The raw ensemble is never a fitted variant."""
        with pytest.raises(ValidationError, match="always scored"):
            RunConfig(variants=[ModelName.RAW])

    def test_rejects_duplicates_and_empty(self) -> None:
        """Variants are unique and not empty."""
        with pytest.raises(ValidationError, match="unique"):
            RunConfig(variants=[ModelName.EMOS, ModelName.EMOS])
        with pytest.raises(ValidationError, match="at least one"):
            RunConfig(variants=[])

    def test_rejects_unknown_fields(self) -> None:
        """Unknown keys are configuration errors."""
        with pytest.raises(ConfigError, match="Invalid configuration"):
            RunConfig.build(window=50)

    def test_short_window(self) -> None:
        """Windows shorter than 30 days are rejected."""
        with pytest.raises(ConfigError):
            RunConfig.build(window_days=20)

    def test_build_skips_none(self) -> None:
        """None values fall back to the defaults."""
        assert RunConfig.build(seed=None, window_days=40).seed == 0

    def test_from_file(self, tmp_path: Path) -> None:
        """Files load with overrides applied."""
        path = tmp_path / "run.json"
        path.write_text(
            json.dumps({"window_days": 50, "variants": ["emos"], "bma": {"max_iter": 20}})
        )
        config = RunConfig.from_file(path, seed=3)
        assert config.window_days == 50
        assert config.variants == [ModelName.EMOS]
        assert config.bma.max_iter == 20
        assert config.seed == 3

    def test_from_file_round_trip(self, tmp_path: Path) -> None:
        """A dumped configuration loads back equal."""
        config = RunConfig(window_days=45, seed=9, output_dir=tmp_path / "out")
        path = tmp_path / "run.json"
        path.write_text(config.model_dump_json())
        assert RunConfig.from_file(path) == config

    def test_from_file_errors(self, tmp_path: Path) -> None:
        """Unreadable or non-object files are configuration errors."""
        with pytest.raises(ConfigError, match="Cannot read"):
            RunConfig.from_file(tmp_path / "missing.json")
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="JSON object"):
            RunConfig.from_file(path)

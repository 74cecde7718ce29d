"""Tests for the command-line interface."""

from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from gaugecal import cli
from gaugecal.cli import (
    EXIT_DATA,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    build_parser,
    config_from_args,
    main,
)
from gaugecal.config import BoundsMode
from gaugecal.pipeline import RunResult, RunStatus
from gaugecal.types import ModelName

GROUPS = "hres:1,eps:5"


def simulate(out: Path, days: int = 40) -> tuple[Path, Path]:
    """Write a small synthetic dataset and return its CSV paths."""
    code = main(
        [
            "simulate",
            "--seed",
            "5",
            "--output-dir",
            str(out),
            "--start-date",
            "2011-03-01",
            "--days",
            str(days),
            "--lead-times",
            "24",
            "--groups",
            GROUPS,
        ]
    )
    assert code == EXIT_OK
    return out / "forecasts.csv", out / "observations.csv"


def calibrate_args(forecasts: Path, observations: Path, run_dir: Path) -> list[str]:
    return [
        "calibrate",
        "--forecasts",
        str(forecasts),
        "--observations",
        str(observations),
        "--groups",
        GROUPS,
        "--output-dir",
        str(run_dir),
        "--window-days",
        "30",
        "--variants",
        "bma_naive,emos",
        "--max-evaluations",
        "500",
        "--restarts",
        "0",
        "--ks-samples",
        "5",
        "--ks-sample-size",
        "10",
    ]


def parse(*extra: str) -> list[str]:
    return ["calibrate", "--forecasts", "fc.csv", "--observations", "obs.csv", *extra]


# ============================================================================
# Configuration Tests
# ============================================================================


class TestConfigFromArgs:
    """Tests for merging config files and flags."""

    def test_defaults(self) -> None:
        """Without flags the defaults apply."""
        config = config_from_args(build_parser().parse_args(parse()))
        assert config.window_days == 100
        assert config.bounds_policy.mode is BoundsMode.HALF_MIN_DOUBLE_MAX

    def test_flags_override_file(self, tmp_path: Path) -> None:
        """Flags win over file values, nested sections merge."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"window_days": 60, "seed": 5, "bma": {"tol": 1e-4}}))
        args = build_parser().parse_args(
            parse("--config", str(path), "--seed", "9", "--max-iter", "50")
        )
        config = config_from_args(args)
        assert config.window_days == 60
        assert config.seed == 9
        assert config.bma.max_iter == 50
        assert config.bma.tol == 1e-4

    def test_bounds_and_lists(self) -> None:
        """Explicit bounds, lead times and variants parse from flags."""
        args = build_parser().parse_args(
            parse("--bounds", "20,1600", "--lead-times", "24,48", "--variants", "emos")
        )
        config = config_from_args(args)
        assert config.bounds_policy.mode is BoundsMode.EXPLICIT
        assert config.bounds_policy.resolve([]) == (20.0, 1600.0)  # type: ignore[arg-type]
        assert config.lead_times == [24, 48]
        assert config.variants == [ModelName.EMOS]


# ============================================================================
# Command Tests
# ============================================================================


class TestCommands:
    """End-to-end tests through main()."""

    def test_simulate(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """simulate writes both CSVs and the scenario record."""
        forecasts, observations = simulate(tmp_path / "data")
        assert forecasts.exists() and observations.exists()
        record = json.loads((tmp_path / "data" / "scenario.json").read_text())
        assert record["seed"] == 5
        assert record["scenario"]["n_days"] == 40
        assert "wrote 40 cases" in capsys.readouterr().out
        assert len(pd.read_csv(forecasts)) == 40 * 6

    def test_calibrate_score_inspect(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """A calibrate run can be rescored and its documents inspected."""
        forecasts, observations = simulate(tmp_path / "data")
        run_dir = tmp_path / "run"
        assert main(calibrate_args(forecasts, observations, run_dir)) == EXIT_OK
        out = capsys.readouterr().out
        assert "bma_naive" in out
        assert "(complete)" in out

        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["targets"]["24"]["processed"] == 10

        score_argv = [
            "score",
            "--forecasts",
            str(forecasts),
            "--observations",
            str(observations),
            "--run-dir",
            str(run_dir),
        ]
        assert main(score_argv) == EXIT_OK
        assert "emos" in capsys.readouterr().out

        doc = next((run_dir / "models" / "lead_024").glob("*_emos.json"))
        assert main(["inspect", str(doc)]) == EXIT_OK
        assert "model:        emos" in capsys.readouterr().out
        assert main(["inspect", "--json", str(doc)]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["model_name"] == "emos"

    def test_partial_exit_code(
        self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Partial runs exit with code 3."""
        forecasts, observations = simulate(tmp_path / "data")

        def partial_run(ds, config):  # type: ignore[no-untyped-def]
            return RunResult(config.output_dir, RunStatus.PARTIAL, {}, pd.DataFrame())

        monkeypatch.setattr(cli, "run_calibration", partial_run)
        code = main(calibrate_args(forecasts, observations, tmp_path / "run"))
        assert code == EXIT_PARTIAL


class TestExitCodes:
    """Tests for error exit codes."""

    def test_missing_input(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Unreadable input data exits with code 2."""
        code = main(
            calibrate_args(tmp_path / "nope.csv", tmp_path / "nope_obs.csv", tmp_path / "run")
        )
        assert code == EXIT_DATA
        assert "data error" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Configuration that does not validate exits with code 1."""
        forecasts, observations = simulate(tmp_path / "data")
        argv = calibrate_args(forecasts, observations, tmp_path / "run")
        argv[argv.index("--window-days") + 1] = "5"
        assert main(argv) == EXIT_USAGE
        assert "configuration error" in capsys.readouterr().err

    def test_unreadable_config_file(self, tmp_path: Path) -> None:
        """A malformed config file exits with code 1."""
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(parse("--config", str(path))) == EXIT_USAGE

    def test_usage_error(self) -> None:
        """Unknown models are usage errors."""
        with pytest.raises(SystemExit) as exc:
            main(parse("--variants", "bma_magic"))
        assert exc.value.code == EXIT_USAGE

    def test_missing_document(self, tmp_path: Path) -> None:
        """Inspecting a missing document is a data error."""
        assert main(["inspect", str(tmp_path / "nope.json")]) == EXIT_DATA

    def test_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        """--version prints the package version."""
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "gaugecal" in capsys.readouterr().out

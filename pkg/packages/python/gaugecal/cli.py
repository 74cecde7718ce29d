"""Command-line interface for Gaugecal.

Subcommands:

- ``calibrate``: fit, predict and verify every configured model
- ``simulate``: write a synthetic forecast/observation dataset
- ``score``: recompute score tables from the model documents of a run
- ``inspect``: print a model document

Exit codes: 0 success, 1 configuration or usage error, 2 data error,
3 partial run (skipped targets or failed fits, see the manifest).
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from datetime import date
from pathlib import Path
from typing import Any, NoReturn

import pandas as pd
from pydantic import ValidationError

from gaugecal import __version__
from gaugecal.config import BoundsMode, LocationSolver, MeanAnchor, RunConfig
from gaugecal.dataset import load_dataset, write_dataset
from gaugecal.documents import document_summary, read_document
from gaugecal.logging import LogConfig, configure_logging, get_logger
from gaugecal.pipeline import RunStatus, run_calibration, score_run
from gaugecal.synthetic import Scenario, synth_generate
from gaugecal.types import ConfigError, DataError, GaugecalError, GroupSpec, ModelName

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3


class GaugecalArgumentParser(argparse.ArgumentParser):
    """Argument parser reporting usage errors with exit code 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ============================================================================
# Argument Helpers
# ============================================================================


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _model_list(text: str) -> list[ModelName]:
    try:
        return [ModelName(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as e:
        choices = ", ".join(m.value for m in ModelName if m is not ModelName.RAW)
        raise argparse.ArgumentTypeError(
            f"unknown model in {text!r} (choose from {choices})"
        ) from e


def _bounds(text: str) -> tuple[float, float]:
    try:
        lower, upper = (float(v) for v in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected LOWER,UPPER in cm, got {text!r}") from e
    return lower, upper


def _lambda_grid(text: str) -> dict[str, float]:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected LO:HI:STEP, got {text!r}") from e
    return {"lo": lo, "hi": hi, "step": step}


def _groups(text: str) -> GroupSpec:
    try:
        return GroupSpec.from_string(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(e.message) from e


def _deep_merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _prune(values: dict[str, Any]) -> dict[str, Any]:
    """Drop unset flags, including nested sections left empty."""
    pruned: dict[str, Any] = {}
    for key, value in values.items():
        if isinstance(value, dict):
            value = _prune(value)
            if not value:
                continue
        if value is not None:
            pruned[key] = value
    return pruned


def _log_config(args: argparse.Namespace) -> LogConfig:
    try:
        values = _prune({"level": args.log_level, "format": args.log_format})
        return LogConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"Invalid logging configuration: {e}") from e


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Build the run configuration from an optional JSON file and flag overrides.

    Raises:
        ConfigError: If the merged configuration does not validate.
    """
    bounds_policy = None
    if args.bounds is not None:
        lower, upper = args.bounds
        bounds_policy = {"mode": BoundsMode.EXPLICIT, "lower_cm": lower, "upper_cm": upper}
    overrides = _prune(
        {
            "window_days": args.window_days,
            "variants": args.variants,
            "lead_times": args.lead_times,
            "bounds_policy": bounds_policy,
            "lambda_grid": args.lambda_grid,
            "refit_lambda": True if args.refit_lambda else None,
            "min_presence": args.min_presence,
            "seed": args.seed,
            "workers": args.workers,
            "interval_alpha": args.interval_alpha,
            "ks_samples": args.ks_samples,
            "ks_sample_size": args.ks_sample_size,
            "pit_bins": args.pit_bins,
            "dm_lags": args.dm_lags,
            "output_dir": args.output_dir,
            "bma": {
                "max_iter": args.max_iter,
                "tol": args.tol,
                "anchor": args.anchor,
                "location_solver": args.location_solver,
            },
            "emos": {
                "max_evaluations": args.max_evaluations,
                "restarts": args.restarts,
            },
            "log": {"level": args.log_level, "format": args.log_format},
        }
    )
    base: dict[str, Any] = {}
    if args.config is not None:
        base = RunConfig.from_file(args.config).model_dump(mode="json")
    return RunConfig.build(**_deep_merge(base, overrides))


def _add_dataset_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--forecasts", type=Path, required=True, help="forecast CSV")
    parser.add_argument("--observations", type=Path, required=True, help="observation CSV")
    parser.add_argument(
        "--groups",
        type=_groups,
        default=None,
        help="member groups as name:size,... (default: hres:1,eps:51,cosmo_leps:16,ncep_gefs:11)",
    )
    parser.add_argument("--location", default="kaub", help="gauge name (default: kaub)")


def _add_log_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    parser.add_argument("--log-format", choices=["json", "text"])


def build_parser() -> GaugecalArgumentParser:
    """Argument parser of the ``gaugecal`` command."""
    parser = GaugecalArgumentParser(
        prog="gaugecal",
        description="Calibrate bounded multi-model ensemble forecasts with truncated normal "
        "BMA and EMOS.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=GaugecalArgumentParser)

    cal = sub.add_parser("calibrate", help="fit, predict and verify all models")
    _add_dataset_arguments(cal)
    cal.add_argument("--config", type=Path, help="JSON run configuration; flags override it")
    cal.add_argument("--output-dir", type=Path, help="run directory (default: gaugecal-run)")
    cal.add_argument("--window-days", type=int, help="training window in days (default: 100)")
    cal.add_argument("--variants", type=_model_list, help="comma-separated models to fit")
    cal.add_argument("--lead-times", type=_int_list, help="comma-separated lead times in hours")
    cal.add_argument("--bounds", type=_bounds, help="explicit physical bounds LOWER,UPPER in cm")
    cal.add_argument("--lambda-grid", type=_lambda_grid, help="Box-Cox grid LO:HI:STEP")
    cal.add_argument(
        "--refit-lambda", action="store_true", help="refit Box-Cox lambda on every window"
    )
    cal.add_argument("--min-presence", type=float, help="required window presence (default 0.9)")
    cal.add_argument("--seed", type=int, help="seed for ranks and KS subsampling")
    cal.add_argument("--workers", type=int, help="worker processes (default: 1)")
    cal.add_argument("--max-iter", type=int, help="EM iteration cap")
    cal.add_argument("--tol", type=float, help="EM relative log-likelihood tolerance")
    cal.add_argument("--anchor", choices=[a.value for a in MeanAnchor])
    cal.add_argument("--location-solver", choices=[s.value for s in LocationSolver])
    cal.add_argument("--max-evaluations", type=int, help="EMOS objective evaluation budget")
    cal.add_argument("--restarts", type=int, help="EMOS Nelder-Mead restarts")
    cal.add_argument("--interval-alpha", type=float, help="central interval miss probability")
    cal.add_argument("--ks-samples", type=int, help="KS subsamples (default: 1000)")
    cal.add_argument("--ks-sample-size", type=int, help="KS subsample size (default: 1000)")
    cal.add_argument("--pit-bins", type=int, help="PIT histogram bins (default: M+1)")
    cal.add_argument("--dm-lags", type=int, help="DM autocovariance lags")
    _add_log_arguments(cal)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--seed", type=int, required=True, help="generator seed")
    sim.add_argument("--output-dir", type=Path, required=True, help="directory for the CSVs")
    sim.add_argument("--scenario", type=Path, help="JSON scenario; flags override it")
    sim.add_argument("--start-date", type=date.fromisoformat, help="first issue date")
    sim.add_argument("--days", type=int, help="number of issue dates")
    sim.add_argument("--lead-times", type=_int_list, help="comma-separated lead times in hours")
    sim.add_argument("--groups", type=_groups, help="member groups as name:size,...")
    sim.add_argument("--dispersion", type=float, help="member spread factor (1 = calibrated)")
    sim.add_argument("--common-bias", type=float, help="bias shared by all members")
    sim.add_argument("--lam", type=float, help="Box-Cox coefficient of the latent scale")
    _add_log_arguments(sim)

    score = sub.add_parser("score", help="recompute score tables of an existing run")
    _add_dataset_arguments(score)
    score.add_argument("--run-dir", type=Path, required=True, help="run directory")
    _add_log_arguments(score)

    insp = sub.add_parser("inspect", help="print a model document")
    insp.add_argument("document", type=Path, help="model document JSON")
    insp.add_argument("--json", action="store_true", help="print the raw document")

    return parser


# ============================================================================
# Commands
# ============================================================================


def _print_scores(scores: pd.DataFrame) -> None:
    if scores.empty:
        print("no verified cases")
        return
    with pd.option_context("display.width", 160, "display.max_columns", None):
        print(scores.to_string(index=False, float_format=lambda v: f"{v:.4g}"))


def _manifest_spec(run_dir: Path) -> GroupSpec | None:
    path = run_dir / "manifest.json"
    if not path.exists():
        return None
    try:
        return GroupSpec.model_validate(json.loads(path.read_text())["group_spec"])
    except (KeyError, json.JSONDecodeError, ValidationError) as e:
        raise DataError(f"invalid manifest: {e}", file=str(path)) from e


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    configure_logging(config.log)
    spec = args.groups or GroupSpec.kaub()
    ds = load_dataset(args.forecasts, args.observations, spec, location=args.location)
    result = run_calibration(ds, config)
    _print_scores(result.scores)
    print(f"run written to {result.run_dir} ({result.status.value})")
    return EXIT_PARTIAL if result.status is RunStatus.PARTIAL else EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    configure_logging(_log_config(args))
    base: dict[str, Any] = {}
    if args.scenario is not None:
        try:
            base = json.loads(args.scenario.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read scenario {args.scenario}: {e}") from e
    overrides = {
        "start_date": args.start_date,
        "n_days": args.days,
        "lead_times": args.lead_times,
        "groups": args.groups.model_dump() if args.groups is not None else None,
        "dispersion": args.dispersion,
        "common_bias": args.common_bias,
        "lam": args.lam,
    }
    try:
        scenario = Scenario.model_validate(_deep_merge(base, overrides))
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario: {e}") from e

    ds = synth_generate(scenario, args.seed)
    out: Path = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out / "forecasts.csv", out / "observations.csv")
    record = {"seed": args.seed, "scenario": scenario.model_dump(mode="json")}
    (out / "scenario.json").write_text(json.dumps(record, indent=2) + "\n")
    print(f"wrote {len(ds.cases)} cases to {out}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    configure_logging(_log_config(args))
    run_dir: Path = args.run_dir
    spec = args.groups or _manifest_spec(run_dir) or GroupSpec.kaub()
    ds = load_dataset(args.forecasts, args.observations, spec, location=args.location)
    tables = score_run(ds, run_dir)
    _print_scores(tables["scores"])
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    doc = read_document(args.document)
    if args.json:
        print(doc.model_dump_json(indent=2, by_alias=True))
    else:
        print(document_summary(doc))
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "score": cmd_score,
    "inspect": cmd_inspect,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``gaugecal`` command; returns the exit code."""
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DataError as e:
        print(f"gaugecal: data error: {e.message}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as e:
        print(f"gaugecal: configuration error: {e.message}", file=sys.stderr)
        return EXIT_USAGE
    except GaugecalError as e:
        logger.exception("Run aborted", command=args.command)
        print(f"gaugecal: error: {e.message}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

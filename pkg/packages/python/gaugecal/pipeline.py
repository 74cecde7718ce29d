"""Calibration runs for Gaugecal.

This module provides the batch pipeline: per lead time it fits the
Box-Cox coefficient, rolls a training window over the record, fits the
requested BMA variants and EMOS for every target date, verifies the
predictions together with the raw ensemble and writes model documents,
score tables and a run manifest.

Run directory layout::

    manifest.json
    exclusions.csv
    models/lead_XXX/<date>_<model>.json
    scores/scores.csv
    scores/dm_tests.csv
    scores/pit_histograms.csv
    scores/rank_histograms.csv
    scores/cases.csv
"""

from __future__ import annotations

import itertools
import json
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from gaugecal import __version__
from gaugecal.bma import BmaModel, TrainingData, bma_fit
from gaugecal.boxcox import BoxCoxParam, bc_fit_lambda, bc_transform, transformed_bounds
from gaugecal.config import RunConfig
from gaugecal.dataset import (
    Dataset,
    TrainingWindow,
    rolling_windows,
    target_dates,
    write_exclusions,
)
from gaugecal.documents import ModelDocument, iter_documents, read_document, write_document
from gaugecal.emos import EmosModel, EmosTrainingSet, emos_fit
from gaugecal.logging import FitLogger, get_logger, get_run_id, set_run_id
from gaugecal.metrics import RunMetrics, Timer
from gaugecal.types import (
    BMA_VARIANT_BY_MODEL,
    DataError,
    ForecastCase,
    GaugecalError,
    GroupSpec,
    ModelName,
)
from gaugecal.verification import (
    ScoreKind,
    ScoreSeries,
    align_series,
    crps_backtransformed,
    crps_ensemble,
    crpss,
    dm_lag_count,
    dm_test,
    ensemble_interval,
    ensemble_median,
    interval_coverage_width,
    ks_uniformity_subsampled,
    mae_median,
    nominal_alpha,
    pit_histogram,
    predictive_quantile_cm,
    randomized_rank_pit,
    rank_histogram,
    verification_rank,
)

logger = get_logger(__name__)

FLOAT_FORMAT = "%.10g"
MIN_KS_SAMPLE = 10


class RunStatus(str, Enum):
    """Outcome of a calibration run."""

    COMPLETE = "complete"
    PARTIAL = "partial"


# ============================================================================
# Records
# ============================================================================


@dataclass(frozen=True)
class CaseRecord:
    """Verification inputs of one model for one forecast case."""

    lead_time_h: int
    issue_date: date
    model: ModelName
    case_id: str
    observation_cm: float
    crps_cm: float
    median_cm: float
    abs_err_cm: float
    pit: float
    interval_hit: bool
    interval_width_cm: float
    rank: int | None = None


@dataclass(frozen=True)
class Failure:
    """A model fit or target that could not be processed."""

    lead_time_h: int
    target_date: date
    model: str
    error: str


@dataclass
class TargetResult:
    """Everything produced for one (lead time, target date)."""

    lead_time_h: int
    target_date: date
    documents: list[ModelDocument] = field(default_factory=list)
    records: list[CaseRecord] = field(default_factory=list)
    failures: list[Failure] = field(default_factory=list)
    metrics: RunMetrics = field(default_factory=RunMetrics)


@dataclass(frozen=True)
class TargetTask:
    """Inputs of one target, shipped to a worker process."""

    window: TrainingWindow
    spec: GroupSpec
    location: str
    box_cox: BoxCoxParam | None
    physical_bounds: tuple[float, float]
    config: RunConfig
    run_id: str | None


@dataclass
class RunResult:
    """Artefacts of a finished run."""

    run_dir: Path
    status: RunStatus
    manifest: dict[str, Any]
    scores: pd.DataFrame


# ============================================================================
# Verification of One Case
# ============================================================================


def interval_alpha(config: RunConfig, spec: GroupSpec) -> float:
    """Central interval miss probability matching the raw ensemble's nominal coverage."""
    return config.interval_alpha or nominal_alpha(spec.total_members)


def verify_model_case(doc: ModelDocument, case: ForecastCase, alpha: float) -> CaseRecord:
    """Scores of a model document's prediction for a case in cm.

    Raises:
        DataError: If the case has no observation.
    """
    if case.observation is None:
        raise DataError(f"case {case.case_id} has no observation")
    y = case.observation
    forecast = doc.predict(case)
    median = predictive_quantile_cm(forecast, 0.5, doc.lam)
    hit, width = interval_coverage_width(forecast, alpha, y, doc.lam)
    y_transformed = doc.transform_case(case).observation
    assert y_transformed is not None
    return CaseRecord(
        lead_time_h=case.lead_time_h,
        issue_date=case.issue_date,
        model=doc.model_name,
        case_id=case.case_id,
        observation_cm=y,
        crps_cm=crps_backtransformed(forecast, doc.lam, y),
        median_cm=median,
        abs_err_cm=abs(median - y),
        pit=forecast.cdf(y_transformed),
        interval_hit=hit,
        interval_width_cm=width,
    )


def rank_rng(seed: int, lead_time_h: int, issue_date: date) -> np.random.Generator:
    """Tie-breaking generator of one case, independent of processing order."""
    return np.random.default_rng([seed, lead_time_h, issue_date.toordinal()])


def verify_raw_case(case: ForecastCase, seed: int) -> CaseRecord:
    """Scores of the raw ensemble for a case in cm.

    The PIT of the raw ensemble is the randomized rank PIT.
    """
    if case.observation is None:
        raise DataError(f"case {case.case_id} has no observation")
    y = case.observation
    members = case.flat_members()
    rng = rank_rng(seed, case.lead_time_h, case.issue_date)
    rank = verification_rank(members, y, rng)
    median = ensemble_median(members)
    hit, width = ensemble_interval(members, y)
    return CaseRecord(
        lead_time_h=case.lead_time_h,
        issue_date=case.issue_date,
        model=ModelName.RAW,
        case_id=case.case_id,
        observation_cm=y,
        crps_cm=crps_ensemble(members, y),
        median_cm=median,
        abs_err_cm=abs(median - y),
        pit=randomized_rank_pit(rank, members.size, rng),
        interval_hit=hit,
        interval_width_cm=width,
        rank=rank,
    )


# ============================================================================
# Fitting One Target
# ============================================================================


def fit_model(
    model: ModelName,
    window: TrainingWindow,
    spec: GroupSpec,
    location: str,
    box_cox: BoxCoxParam,
    physical_bounds: tuple[float, float],
    config: RunConfig,
) -> ModelDocument:
    """Fit one model on a training window and wrap it in a document."""
    lam = box_cox.lam
    bounds = transformed_bounds(physical_bounds, lam)
    training = [c.map_values(lambda v: float(bc_transform(v, lam))) for c in window.training]
    fitted: BmaModel | EmosModel
    if model is ModelName.EMOS:
        fitted = emos_fit(EmosTrainingSet.from_cases(training, spec, bounds), spec, config.emos)
    else:
        data = TrainingData.from_cases(training, spec, bounds)
        fitted = bma_fit(data, BMA_VARIANT_BY_MODEL[model], config.bma)
    return ModelDocument(
        model_name=model,
        location=location,
        lead_time_h=window.lead_time_h,
        target_date=window.target_date,
        training_start=window.training[0].issue_date,
        training_end=window.training[-1].issue_date,
        n_training=len(window.training),
        box_cox=box_cox,
        physical_bounds=physical_bounds,
        model=fitted,
    )


def _model_status(doc: ModelDocument) -> tuple[int, bool, list[str]]:
    diag = doc.model.diagnostics
    return diag.iterations, diag.converged, list(diag.flags)


def calibrate_target(task: TargetTask) -> TargetResult:
    """Fit every configured model for one target and verify all forecasts.

    Failures of single models are recorded, never raised.
    """
    if task.run_id is not None and get_run_id() != task.run_id:
        set_run_id(task.run_id)
    window = task.window
    config = task.config
    result = TargetResult(window.lead_time_h, window.target_date)
    fit_logger = FitLogger()
    log = logger.with_context(lead_time_h=window.lead_time_h, target_date=window.target_date)
    alpha = interval_alpha(config, task.spec)

    box_cox = task.box_cox
    if box_cox is None or config.refit_lambda:
        obs = np.array([c.observation for c in window.training], dtype=float)
        box_cox = bc_fit_lambda(obs, config.lambda_grid, window.lead_time_h)

    for model in config.variants:
        try:
            with Timer() as timer:
                doc = fit_model(
                    model,
                    window,
                    task.spec,
                    task.location,
                    box_cox,
                    task.physical_bounds,
                    config,
                )
            iterations, converged, flags = _model_status(doc)
            fit_logger.log_fit(
                model.value,
                window.lead_time_h,
                window.target_date,
                timer.duration_ms,
                iterations,
                converged,
                flags,
            )
            status = "converged" if converged else "not_converged"
            result.metrics.inc_counter("fits_total", model=model.value, status=status)
            result.metrics.observe_histogram(
                "fit_duration_ms", timer.duration_ms, model=model.value
            )
            result.records.append(verify_model_case(doc, window.target, alpha))
            result.documents.append(doc)
        except (GaugecalError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            log.exception("Model fit failed", model=model.value)
            result.metrics.inc_counter("fits_total", model=model.value, status="failed")
            result.failures.append(
                Failure(window.lead_time_h, window.target_date, model.value, str(e))
            )

    result.records.append(verify_raw_case(window.target, config.seed))
    return result


# ============================================================================
# Score Tables
# ============================================================================


def _series(records: list[CaseRecord], kind: ScoreKind) -> ScoreSeries:
    attr = {
        ScoreKind.CRPS_CM: "crps_cm",
        ScoreKind.ABS_ERR_CM: "abs_err_cm",
        ScoreKind.PIT: "pit",
        ScoreKind.INTERVAL_HIT: "interval_hit",
        ScoreKind.INTERVAL_WIDTH_CM: "interval_width_cm",
    }[kind]
    return ScoreSeries(
        case_ids=[r.case_id for r in records],
        values=[float(getattr(r, attr)) for r in records],
        kind=kind,
    )


def _ks_mean_p(pits: np.ndarray, config: RunConfig, lead: int, model: ModelName) -> float:
    size = min(config.ks_sample_size, pits.size)
    if size < MIN_KS_SAMPLE:
        return float("nan")
    # Keyed on the model, not its position, so rescoring reproduces the run.
    seed = np.random.SeedSequence([config.seed, lead, list(ModelName).index(model)])
    return ks_uniformity_subsampled(pits, config.ks_samples, size, seed)


def score_tables(
    records: list[CaseRecord], spec: GroupSpec, config: RunConfig
) -> dict[str, pd.DataFrame]:
    """Aggregate case records into the score, DM, PIT and rank tables.

    Cases missing for any model of a lead time are dropped for all models
    of that lead time so that every comparison is paired.
    """
    models = [ModelName.RAW, *config.variants]
    score_rows: list[dict[str, Any]] = []
    dm_rows: list[dict[str, Any]] = []
    pit_rows: list[dict[str, Any]] = []
    rank_rows: list[dict[str, Any]] = []
    bins = config.pit_bins or spec.total_members + 1

    leads = sorted({r.lead_time_h for r in records})
    for lead in leads:
        by_model = {
            m: sorted(
                (r for r in records if r.lead_time_h == lead and r.model is m),
                key=lambda r: r.issue_date,
            )
            for m in models
        }
        present = [m for m in models if by_model[m]]
        crps_all = align_series(*(_series(by_model[m], ScoreKind.CRPS_CM) for m in present))
        keep = set(crps_all[0].case_ids) if crps_all else set()
        by_model = {m: [r for r in by_model[m] if r.case_id in keep] for m in present}
        if not keep:
            continue

        crps = {m: _series(by_model[m], ScoreKind.CRPS_CM) for m in present}
        abs_err = {m: _series(by_model[m], ScoreKind.ABS_ERR_CM) for m in present}
        lags = config.dm_lags or dm_lag_count(lead)

        for m in present:
            rows = by_model[m]
            pits = np.array([r.pit for r in rows])
            dm_p = float("nan")
            if m is not ModelName.EMOS and ModelName.EMOS in crps and len(rows) >= 30:
                dm_p = dm_test(crps[m], crps[ModelName.EMOS], lead, lags).p_value
            skill = crpss(crps[m], crps[ModelName.RAW]) if crps[ModelName.RAW].mean() > 0 else 0.0
            score_rows.append(
                {
                    "lead_time_h": lead,
                    "model": m.value,
                    "n_cases": len(rows),
                    "mean_crps_cm": crps[m].mean(),
                    "crpss_vs_raw": skill,
                    "mae_cm": mae_median(
                        [r.median_cm for r in rows], [r.observation_cm for r in rows]
                    ),
                    "coverage": float(np.mean([r.interval_hit for r in rows])),
                    "avg_width_cm": float(np.mean([r.interval_width_cm for r in rows])),
                    "dm_p_vs_emos": dm_p,
                    "ks_mean_p": _ks_mean_p(pits, config, lead, m),
                }
            )
            if m is ModelName.RAW:
                hist = rank_histogram([r.rank or 1 for r in rows], spec.total_members)
                rank_rows.extend(
                    {"lead_time_h": lead, "rank": i + 1, "count": c}
                    for i, c in enumerate(hist.counts)
                )
            else:
                counts = pit_histogram(pits, bins)
                pit_rows.extend(
                    {
                        "lead_time_h": lead,
                        "model": m.value,
                        "bin": i,
                        "lower": i / bins,
                        "upper": (i + 1) / bins,
                        "count": c,
                    }
                    for i, c in enumerate(counts)
                )

        if len(keep) >= 30:
            for a, b in itertools.combinations(present, 2):
                for name, table in (("crps_cm", crps), ("abs_err_cm", abs_err)):
                    stat, p = dm_test(table[a], table[b], lead, lags)
                    dm_rows.append(
                        {
                            "lead_time_h": lead,
                            "score": name,
                            "model_a": a.value,
                            "model_b": b.value,
                            "n_cases": len(keep),
                            "statistic": stat,
                            "p_value": p,
                        }
                    )

    case_frame = pd.DataFrame(
        [
            {
                **{k: v for k, v in asdict(r).items() if k != "model"},
                "model": r.model.value,
                "issue_date": r.issue_date.isoformat(),
                "interval_hit": int(r.interval_hit),
                "rank": "" if r.rank is None else r.rank,
            }
            for r in sorted(records, key=lambda r: (r.lead_time_h, r.issue_date, r.model.value))
        ]
    )
    return {
        "scores": pd.DataFrame(score_rows, columns=SCORE_COLUMNS),
        "dm_tests": pd.DataFrame(dm_rows, columns=DM_COLUMNS),
        "pit_histograms": pd.DataFrame(pit_rows, columns=PIT_COLUMNS),
        "rank_histograms": pd.DataFrame(rank_rows, columns=["lead_time_h", "rank", "count"]),
        "cases": case_frame,
    }


SCORE_COLUMNS = [
    "lead_time_h",
    "model",
    "n_cases",
    "mean_crps_cm",
    "crpss_vs_raw",
    "mae_cm",
    "coverage",
    "avg_width_cm",
    "dm_p_vs_emos",
    "ks_mean_p",
]
DM_COLUMNS = ["lead_time_h", "score", "model_a", "model_b", "n_cases", "statistic", "p_value"]
PIT_COLUMNS = ["lead_time_h", "model", "bin", "lower", "upper", "count"]


def write_score_tables(tables: dict[str, pd.DataFrame], run_dir: Path) -> None:
    """Write every table to ``run_dir/scores/<name>.csv``."""
    scores_dir = Path(run_dir) / "scores"
    scores_dir.mkdir(parents=True, exist_ok=True)
    for name, frame in tables.items():
        frame.to_csv(scores_dir / f"{name}.csv", index=False, float_format=FLOAT_FORMAT)


# ============================================================================
# Runs
# ============================================================================


def _plan(
    ds: Dataset, config: RunConfig
) -> tuple[dict[int, list[TrainingWindow]], dict[int, list[date]]]:
    leads = config.lead_times or ds.lead_times
    unknown = sorted(set(leads) - set(ds.lead_times))
    if unknown:
        logger.warning("Lead times not in dataset", lead_times=unknown)
    windows: dict[int, list[TrainingWindow]] = {}
    skipped: dict[int, list[date]] = {}
    targets = target_dates(ds, config.window_days)
    for lead in sorted(set(leads) & set(ds.lead_times)):
        planned = list(rolling_windows(ds, config.window_days, lead, config.min_presence))
        windows[lead] = planned
        done = {w.target_date for w in planned}
        by_date = ds.cases_for_lead(lead)
        skipped[lead] = [d for d in targets if d in by_date and d not in done]
    return windows, skipped


def _map_tasks(tasks: list[TargetTask], workers: int) -> list[TargetResult]:
    if workers <= 1 or len(tasks) <= 1:
        return [calibrate_target(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(calibrate_target, tasks, chunksize=4))


def run_calibration(ds: Dataset, config: RunConfig) -> RunResult:
    """Fit, predict and verify every configured model over the whole record.

    Each lead time is processed independently. Results do not depend on
    the number of workers.

    Args:
        ds: Dataset in cm.
        config: Run configuration; ``config.output_dir`` receives the artefacts.

    Returns:
        The run result with status and manifest.
    """
    run_id = str(uuid.uuid4())
    set_run_id(run_id)
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics = RunMetrics()

    with Timer() as total:
        physical = config.bounds_policy.resolve(ds.observations())
        ds.check_bounds(physical)
        windows, skipped = _plan(ds, config)

        lambdas: dict[int, BoxCoxParam] = {}
        for lead, planned in windows.items():
            if planned:
                first = np.array([c.observation for c in planned[0].training], dtype=float)
                lambdas[lead] = bc_fit_lambda(first, config.lambda_grid, lead)

        tasks = [
            TargetTask(
                window=w,
                spec=ds.spec,
                location=ds.location,
                box_cox=lambdas[lead],
                physical_bounds=physical,
                config=config,
                run_id=run_id,
            )
            for lead, planned in sorted(windows.items())
            for w in planned
        ]
        logger.info("Starting calibration run", targets=len(tasks), workers=config.workers)
        results = sorted(
            _map_tasks(tasks, config.workers), key=lambda r: (r.lead_time_h, r.target_date)
        )

        records: list[CaseRecord] = []
        failures: list[Failure] = []
        for res in results:
            for doc in res.documents:
                write_document(doc, run_dir)
            records.extend(res.records)
            failures.extend(res.failures)
            metrics.merge(res.metrics)
            metrics.inc_counter("targets_total", status="processed")
        n_skipped = sum(len(v) for v in skipped.values())
        if n_skipped:
            metrics.inc_counter("targets_total", value=float(n_skipped), status="skipped")

        tables = score_tables(records, ds.spec, config)
        write_score_tables(tables, run_dir)
        write_exclusions(ds.exclusions, run_dir / "exclusions.csv")

    status = RunStatus.PARTIAL if failures or n_skipped else RunStatus.COMPLETE
    metrics.observe_histogram("run_duration_ms", total.duration_ms)
    manifest = {
        "gaugecal_version": __version__,
        "run_id": run_id,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "status": status.value,
        "config": config.model_dump(mode="json"),
        "seed": config.seed,
        "location": ds.location,
        "group_spec": ds.spec.model_dump(mode="json"),
        "physical_bounds_cm": list(physical),
        "box_cox": {
            str(lead): {
                "lambda": p.lam,
                "n_obs": p.n_obs,
                "transformed_bounds": list(transformed_bounds(physical, p.lam)),
            }
            for lead, p in sorted(lambdas.items())
        },
        "targets": {
            str(lead): {
                "processed": len(windows[lead]),
                "skipped": [d.isoformat() for d in skipped[lead]],
            }
            for lead in sorted(windows)
        },
        "failures": [
            {**asdict(f), "target_date": f.target_date.isoformat()} for f in failures
        ],
        "exclusions": len(ds.exclusions),
        "duration_ms": round(total.duration_ms, 1),
        "metrics": metrics.snapshot(),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    logger.info(
        "Calibration run finished",
        status=status.value,
        targets=len(tasks),
        failures=len(failures),
        duration_ms=round(total.duration_ms, 1),
    )
    set_run_id(None)
    return RunResult(run_dir, status, manifest, tables["scores"])


def score_run(
    ds: Dataset, run_dir: Path, config: RunConfig | None = None
) -> dict[str, pd.DataFrame]:
    """Recompute all score tables of a run from its model documents.

    The configuration defaults to the one recorded in the run manifest.

    Raises:
        DataError: If the run has no documents or a document's case is missing.
    """
    run_dir = Path(run_dir)
    if config is None:
        manifest_path = run_dir / "manifest.json"
        if manifest_path.exists():
            recorded = json.loads(manifest_path.read_text())["config"]
            config = RunConfig.build(**recorded)
        else:
            config = RunConfig()
    paths = iter_documents(run_dir)
    if not paths:
        raise DataError("no model documents found", file=str(run_dir / "models"))

    alpha = interval_alpha(config, ds.spec)
    records: list[CaseRecord] = []
    targets: set[tuple[int, date]] = set()
    for path in paths:
        doc = read_document(path)
        case = ds.case(doc.target_date, doc.lead_time_h)
        if case is None:
            raise DataError(
                f"no case for {doc.target_date.isoformat()} at {doc.lead_time_h} h",
                file=str(path),
            )
        records.append(verify_model_case(doc, case, alpha))
        targets.add((doc.lead_time_h, doc.target_date))
    for lead, target in sorted(targets):
        case = ds.case(target, lead)
        assert case is not None
        records.append(verify_raw_case(case, config.seed))

    variants = sorted({r.model for r in records} - {ModelName.RAW}, key=lambda m: m.value)
    scoring_config = config.model_copy(update={"variants": variants})
    tables = score_tables(records, ds.spec, scoring_config)
    write_score_tables(tables, run_dir)
    return tables

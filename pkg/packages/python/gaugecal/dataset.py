"""Forecast datasets for Gaugecal.

This module provides the in-memory Dataset of forecast cases in cm, CSV
ingestion with schema validation and an exclusion report, CSV output,
and the rolling training windows used by the calibration pipeline.

File formats:
    forecasts:    date,lead_time_h,group,member_index,value_cm  (one row per member)
    observations: date,lead_time_h,value_cm  (valid at issue date 6 UTC + lead time)
"""

from __future__ import annotations

import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from gaugecal.logging import get_logger
from gaugecal.types import DataError, ForecastCase, GroupSpec, GroupSpecMismatchError

logger = get_logger(__name__)

FORECAST_COLUMNS = ("date", "lead_time_h", "group", "member_index", "value_cm")
OBSERVATION_COLUMNS = ("date", "lead_time_h", "value_cm")
_MISSING = {"", "na", "nan", "null"}


# ============================================================================
# Dataset
# ============================================================================


@dataclass(frozen=True)
class Exclusion:
    """A (date, lead time) dropped during ingestion."""

    issue_date: date
    lead_time_h: int
    reason: str


@dataclass(frozen=True, eq=False)
class Dataset:
    """Forecast cases in cm indexed by (issue date, lead time)."""

    spec: GroupSpec
    cases: dict[tuple[date, int], ForecastCase]
    location: str = "kaub"
    exclusions: list[Exclusion] = field(default_factory=list)

    def __post_init__(self) -> None:
        for case in self.cases.values():
            case.require_spec(self.spec)

    @property
    def issue_dates(self) -> list[date]:
        """Distinct issue dates, strictly increasing."""
        return sorted({d for d, _ in self.cases})

    @property
    def lead_times(self) -> list[int]:
        """Distinct lead times in hours, increasing."""
        return sorted({h for _, h in self.cases})

    def case(self, issue_date: date, lead_time_h: int) -> ForecastCase | None:
        return self.cases.get((issue_date, lead_time_h))

    def cases_for_lead(self, lead_time_h: int) -> dict[date, ForecastCase]:
        """Cases of one lead time by issue date, in date order."""
        return {
            d: self.cases[(d, h)] for d, h in sorted(self.cases) if h == lead_time_h
        }

    def observations(self, lead_time_h: int | None = None) -> np.ndarray:
        """All known observations, optionally for one lead time."""
        return np.array(
            [
                c.observation
                for (_, h), c in sorted(self.cases.items())
                if c.observation is not None and (lead_time_h is None or h == lead_time_h)
            ],
            dtype=float,
        )

    def check_bounds(self, bounds: tuple[float, float]) -> bool:
        """Warn unless every observation lies strictly inside the bounds."""
        obs = self.observations()
        if obs.size == 0:
            return True
        inside = bounds[0] < float(obs.min()) and float(obs.max()) < bounds[1]
        if not inside:
            logger.warning(
                "Observations reach the physical bounds",
                min_cm=float(obs.min()),
                max_cm=float(obs.max()),
                lower_cm=bounds[0],
                upper_cm=bounds[1],
            )
        return inside


# ============================================================================
# CSV Ingestion
# ============================================================================


def _read_csv(path: Path, columns: tuple[str, ...]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as e:
        raise DataError("file not found", file=str(path)) from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse CSV: {e}", file=str(path)) from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"missing column(s) {missing}", file=str(path), line=1, column=missing[0])
    return frame[list(columns)]


def _first_bad(mask: pd.Series) -> int:
    """CSV line number (header is line 1) of the first flagged row."""
    return int(np.flatnonzero(mask.to_numpy())[0]) + 2


def _parse_dates(frame: pd.DataFrame, path: Path) -> pd.Series:
    parsed = pd.to_datetime(frame["date"], format="%Y-%m-%d", errors="coerce")
    bad = parsed.isna()
    if bad.any():
        line = _first_bad(bad)
        raise DataError(
            f"invalid date {frame['date'].iloc[line - 2]!r}",
            file=str(path),
            line=line,
            column="date",
        )
    return parsed.dt.date


def _parse_int(frame: pd.DataFrame, column: str, path: Path, minimum: int) -> pd.Series:
    raw = frame[column]
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = parsed.isna() | (parsed != parsed.round()) | (parsed < minimum)
    if bad.any():
        line = _first_bad(bad)
        raise DataError(
            f"expected an integer >= {minimum}, got {raw.iloc[line - 2]!r}",
            file=str(path),
            line=line,
            column=column,
        )
    return parsed.astype(int)


def _parse_values(frame: pd.DataFrame, path: Path) -> pd.Series:
    """Water levels; blank or NA entries become NaN (missing)."""
    raw = frame["value_cm"]
    missing = raw.str.strip().str.lower().isin(_MISSING)
    parsed = pd.to_numeric(raw.where(~missing), errors="coerce")
    bad = (parsed.isna() & ~missing) | (parsed <= 0) | np.isinf(parsed)
    if bad.any():
        line = _first_bad(bad)
        raise DataError(
            f"water level must be a positive number, got {raw.iloc[line - 2]!r}",
            file=str(path),
            line=line,
            column="value_cm",
        )
    return parsed.astype(float)


def _check_duplicates(frame: pd.DataFrame, keys: list[str], path: Path) -> None:
    dup = frame.duplicated(subset=keys, keep="first")
    if dup.any():
        line = _first_bad(dup)
        row = frame.iloc[line - 2]
        raise DataError(
            f"duplicate entry for {tuple(str(row[k]) for k in keys)}",
            file=str(path),
            line=line,
            column=keys[0],
        )


def load_dataset(
    forecast_file: Path,
    observation_file: Path,
    spec: GroupSpec,
    location: str = "kaub",
) -> Dataset:
    """Read and validate forecast and observation CSV files.

    Cases with missing members or without a usable observation are dropped
    and listed in ``Dataset.exclusions``.

    Raises:
        DataError: On schema violations, naming file, line and column.
        GroupSpecMismatchError: If a member index exceeds its group's size.
    """
    forecast_file = Path(forecast_file)
    observation_file = Path(observation_file)

    fc = _read_csv(forecast_file, FORECAST_COLUMNS)
    fc = fc.assign(
        date=_parse_dates(fc, forecast_file),
        lead_time_h=_parse_int(fc, "lead_time_h", forecast_file, 1),
        member_index=_parse_int(fc, "member_index", forecast_file, 0),
        value_cm=_parse_values(fc, forecast_file),
    )
    group_index = fc["group"].str.strip().map({n: i for i, n in enumerate(spec.names)})
    unknown = group_index.isna()
    if unknown.any():
        line = _first_bad(unknown)
        raise DataError(
            f"unknown group {fc['group'].iloc[line - 2]!r}, expected one of {spec.names}",
            file=str(forecast_file),
            line=line,
            column="group",
        )
    group_index = group_index.astype(int)
    sizes = np.asarray(spec.sizes)
    too_big = fc["member_index"].to_numpy() >= sizes[group_index.to_numpy()]
    if too_big.any():
        line = int(np.flatnonzero(too_big)[0]) + 2
        row = fc.iloc[line - 2]
        raise GroupSpecMismatchError(
            f"{forecast_file}:{line} [member_index]: member {row['member_index']} exceeds "
            f"size {sizes[group_index.iloc[line - 2]]} of group {row['group']!r}"
        )
    fc = fc.assign(group=group_index)
    _check_duplicates(fc, ["date", "lead_time_h", "group", "member_index"], forecast_file)

    obs = _read_csv(observation_file, OBSERVATION_COLUMNS)
    obs = obs.assign(
        date=_parse_dates(obs, observation_file),
        lead_time_h=_parse_int(obs, "lead_time_h", observation_file, 1),
        value_cm=_parse_values(obs, observation_file),
    )
    _check_duplicates(obs, ["date", "lead_time_h"], observation_file)

    fc = fc.assign(column=spec.offsets[fc["group"].to_numpy()] + fc["member_index"].to_numpy())
    wide = fc.pivot(index=["date", "lead_time_h"], columns="column", values="value_cm")
    wide = wide.reindex(columns=range(spec.total_members)).sort_index()
    observed = obs.set_index(["date", "lead_time_h"])["value_cm"]

    cases: dict[tuple[date, int], ForecastCase] = {}
    exclusions: list[Exclusion] = []
    offsets = list(spec.offsets) + [spec.total_members]
    for (issue_date, lead), row in zip(wide.index, wide.to_numpy(), strict=True):
        present = int(np.sum(~np.isnan(row)))
        if present < spec.total_members:
            reason = f"missing members ({present} of {spec.total_members})"
            exclusions.append(Exclusion(issue_date, int(lead), reason))
            continue
        value = observed.get((issue_date, lead))
        if value is None or math.isnan(value):
            exclusions.append(Exclusion(issue_date, int(lead), "missing observation"))
            continue
        members = [row[offsets[k] : offsets[k + 1]].tolist() for k in range(spec.n_groups)]
        cases[(issue_date, int(lead))] = ForecastCase(
            location=location,
            issue_date=issue_date,
            lead_time_h=int(lead),
            members=members,
            observation=float(value),
        )

    orphan = observed.index.difference(wide.index)
    exclusions.extend(Exclusion(d, int(h), "observation without forecast") for d, h in orphan)
    exclusions.sort(key=lambda e: (e.issue_date, e.lead_time_h))

    if exclusions:
        logger.warning("Excluded incomplete cases", count=len(exclusions))
    logger.info(
        "Loaded dataset",
        cases=len(cases),
        forecast_file=str(forecast_file),
        observation_file=str(observation_file),
    )
    return Dataset(spec=spec, cases=cases, location=location, exclusions=exclusions)


# ============================================================================
# CSV Output
# ============================================================================


def write_dataset(ds: Dataset, forecast_file: Path, observation_file: Path) -> None:
    """Write a dataset in the forecast/observation CSV formats."""
    names = ds.spec.names
    fc_rows: list[tuple[str, int, str, int, float]] = []
    obs_rows: list[tuple[str, int, float]] = []
    for (issue_date, lead), case in sorted(ds.cases.items()):
        day = issue_date.isoformat()
        for k, group in enumerate(case.members):
            fc_rows.extend((day, lead, names[k], i, v) for i, v in enumerate(group))
        if case.observation is not None:
            obs_rows.append((day, lead, case.observation))
    pd.DataFrame(fc_rows, columns=list(FORECAST_COLUMNS)).to_csv(
        forecast_file, index=False, float_format="%.4f"
    )
    pd.DataFrame(obs_rows, columns=list(OBSERVATION_COLUMNS)).to_csv(
        observation_file, index=False, float_format="%.4f"
    )


def write_exclusions(exclusions: list[Exclusion], path: Path) -> None:
    """Write the exclusion report as CSV (header only when empty)."""
    frame = pd.DataFrame(
        [(e.issue_date.isoformat(), e.lead_time_h, e.reason) for e in exclusions],
        columns=["date", "lead_time_h", "reason"],
    )
    frame.to_csv(path, index=False)


# ============================================================================
# Rolling Windows
# ============================================================================


@dataclass(frozen=True)
class TrainingWindow:
    """Training cases for one target date and lead time."""

    lead_time_h: int
    target_date: date
    training: list[ForecastCase]
    target: ForecastCase


def target_dates(ds: Dataset, window_days: int) -> list[date]:
    """Issue dates preceded by a full window of calendar days in the record."""
    dates = ds.issue_dates
    if not dates:
        return []
    first_target = dates[0] + timedelta(days=window_days)
    return [d for d in dates if d >= first_target]


def rolling_windows(
    ds: Dataset,
    window_days: int,
    lead_time_h: int,
    min_presence: float = 0.9,
) -> Iterator[TrainingWindow]:
    """Yield the preceding ``window_days`` calendar days of cases per target date.

    Only cases issued strictly before the target enter its window. Targets
    whose window holds fewer than ``min_presence * window_days`` cases are
    skipped with a warning.
    """
    by_date = ds.cases_for_lead(lead_time_h)
    required = math.ceil(min_presence * window_days - 1e-9)
    for target in target_dates(ds, window_days):
        target_case = by_date.get(target)
        if target_case is None:
            continue
        start = target - timedelta(days=window_days)
        training = [c for d, c in by_date.items() if start <= d < target]
        if len(training) < required:
            logger.warning(
                "Skipping target with sparse training window",
                target_date=target.isoformat(),
                lead_time_h=lead_time_h,
                cases=len(training),
                required=required,
            )
            continue
        yield TrainingWindow(lead_time_h, target, training, target_case)

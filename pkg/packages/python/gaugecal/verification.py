"""Forecast verification for Gaugecal.

This module provides proper scores and calibration diagnostics for
predictive distributions and raw ensembles: CRPS on the original scale,
CRPSS, MAE of medians, central interval coverage and width, PIT and
verification rank histograms, and the Diebold-Mariano and subsampled
Kolmogorov-Smirnov tests.

Quantile-based scores and the CRPS are always evaluated in cm, after the
inverse Box-Cox transform. PIT values are invariant under the transform.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from enum import Enum
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import stats

from gaugecal.boxcox import bc_inverse, bc_transform
from gaugecal.distributions import Predictive, crps_quadrature
from gaugecal.types import DomainError

BACKTRANSFORMED_EPSREL = 1e-7
SUPPORT_TAIL_CM = 1e-12
MIN_DM_CASES = 30


# ============================================================================
# Score Series
# ============================================================================


class ScoreKind(str, Enum):
    """What a score series holds."""

    CRPS_CM = "crps_cm"
    ABS_ERR_CM = "abs_err_cm"
    PIT = "pit"
    INTERVAL_HIT = "interval_hit"
    INTERVAL_WIDTH_CM = "interval_width_cm"


class ScoreSeries(BaseModel):
    """Per-case score values aligned by case id."""

    model_config = ConfigDict(frozen=True)

    case_ids: list[str]
    values: list[float]
    kind: ScoreKind

    @model_validator(mode="after")
    def validate_lengths(self) -> ScoreSeries:
        """One value per case id, ids unique."""
        if len(self.case_ids) != len(self.values):
            raise ValueError("case_ids and values must have equal length")
        if len(set(self.case_ids)) != len(self.case_ids):
            raise ValueError("case ids must be unique")
        return self

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def mean(self) -> float:
        """Mean value, NaN for an empty series."""
        return float(np.mean(self.array)) if self.values else math.nan

    def __len__(self) -> int:
        return len(self.values)


def align_series(*series: ScoreSeries) -> tuple[ScoreSeries, ...]:
    """Restrict series to cases present and finite in all of them.

    Case order follows the first series.
    """
    if not series:
        return ()
    lookups = [dict(zip(s.case_ids, s.values, strict=True)) for s in series]
    keep = [
        cid
        for cid in series[0].case_ids
        if all(cid in lk and math.isfinite(lk[cid]) for lk in lookups)
    ]
    return tuple(
        ScoreSeries(case_ids=keep, values=[lk[c] for c in keep], kind=s.kind)
        for s, lk in zip(series, lookups, strict=True)
    )


def _require_aligned(a: ScoreSeries, b: ScoreSeries) -> None:
    if a.case_ids != b.case_ids:
        raise DomainError("score series are not aligned on the same cases")


# ============================================================================
# CRPS
# ============================================================================


def crps_backtransformed(forecast: Predictive, lam: float, y: float) -> float:
    """CRPS in cm of a transformed-scale predictive distribution.

    Integrates F(h_lambda(u)) over the physical support, split at the
    observation y; observations outside the support add their distance.

    Raises:
        DomainError: If y is not finite or the support leaves the domain of
            the inverse transform.
    """
    if not math.isfinite(y):
        raise DomainError(f"observation must be finite, got {y}")
    lo, hi = forecast.support(SUPPORT_TAIL_CM)
    u_lo = float(bc_inverse(lo, lam))
    u_hi = float(bc_inverse(hi, lam))

    def cdf_cm(u: float) -> float:
        return forecast.cdf(float(bc_transform(u, lam))) if u > 0 else 0.0

    return crps_quadrature(cdf_cm, u_lo, u_hi, y, epsrel=BACKTRANSFORMED_EPSREL)


def crps_ensemble(members: Sequence[float] | np.ndarray, y: float) -> float:
    """CRPS of the empirical CDF: E|X - y| - 1/2 E|X - X'|.

    Uses the order-statistic form of the pair term, O(M log M).
    """
    x = np.sort(np.asarray(members, dtype=float))
    m = x.size
    if m == 0:
        raise DomainError("ensemble needs at least one member")
    ranks = np.arange(1, m + 1)
    spread = float(np.dot(2 * ranks - m - 1, x)) / (m * m)
    return max(float(np.mean(np.abs(x - y))) - spread, 0.0)


def crpss(score: ScoreSeries, reference: ScoreSeries) -> float:
    """Skill of the mean score relative to the mean reference score.

    Raises:
        DomainError: If the series are not aligned or the reference mean is not positive.
    """
    _require_aligned(score, reference)
    ref = reference.mean()
    if not ref > 0:
        raise DomainError(f"reference mean score must be positive, got {ref}")
    return 1.0 - score.mean() / ref


# ============================================================================
# Point Forecasts and Intervals
# ============================================================================


def ensemble_median(members: Sequence[float] | np.ndarray) -> float:
    """Empirical median; midpoint of the central order statistics for even M."""
    return float(np.median(np.asarray(members, dtype=float)))


def mae_median(
    medians: Sequence[float] | np.ndarray, observations: Sequence[float] | np.ndarray
) -> float:
    """Mean absolute difference between predictive medians and observations."""
    med = np.asarray(medians, dtype=float)
    obs = np.asarray(observations, dtype=float)
    if med.shape != obs.shape:
        raise DomainError("medians and observations must be aligned")
    return float(np.mean(np.abs(med - obs)))


def nominal_alpha(n_members: int) -> float:
    """Miss probability 2/(M+1) of the interval spanned by an M-member ensemble."""
    if n_members < 1:
        raise DomainError("ensemble needs at least one member")
    return 2.0 / (n_members + 1)


class IntervalOutcome(NamedTuple):
    hit: bool
    width: float


def predictive_quantile_cm(forecast: Predictive, p: float, lam: float) -> float:
    """p-quantile of a transformed-scale forecast, mapped back to cm."""
    q = min(max(forecast.quantile(p), forecast.lower), forecast.upper)
    return float(bc_inverse(q, lam))


def interval_coverage_width(
    forecast: Predictive, alpha: float, y: float, lam: float
) -> IntervalOutcome:
    """Hit and width (cm) of the central (1 - alpha) prediction interval.

    Raises:
        DomainError: If alpha is outside (0, 1).
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    lo = predictive_quantile_cm(forecast, alpha / 2, lam)
    hi = predictive_quantile_cm(forecast, 1 - alpha / 2, lam)
    return IntervalOutcome(lo <= y <= hi, hi - lo)


def ensemble_interval(members: Sequence[float] | np.ndarray, y: float) -> IntervalOutcome:
    """Hit and width of the [min, max] range of a raw ensemble."""
    x = np.asarray(members, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    return IntervalOutcome(lo <= y <= hi, hi - lo)


# ============================================================================
# Calibration
# ============================================================================


def pit(forecast: Predictive, x: float) -> float:
    """Predictive CDF at the (transformed) observation."""
    return forecast.cdf(x)


def verification_rank(
    members: Sequence[float] | np.ndarray, x: float, rng: np.random.Generator
) -> int:
    """Rank of x within {members, x}, ties broken uniformly at random.

    Returns:
        An integer in [1, M + 1].
    """
    values = np.asarray(members, dtype=float)
    below = int(np.sum(values < x))
    ties = int(np.sum(values == x))
    return 1 + below + (int(rng.integers(0, ties + 1)) if ties else 0)


def randomized_rank_pit(rank: int, n_members: int, rng: np.random.Generator) -> float:
    """Uniform draw within the rank's bin, so ranks of a calibrated ensemble give uniform PITs."""
    return (rank - 1 + float(rng.uniform())) / (n_members + 1)


class RankHistogram(BaseModel):
    """Verification rank counts, one bin per rank 1..M+1."""

    model_config = ConfigDict(frozen=True)

    counts: list[int]

    @field_validator("counts")
    @classmethod
    def validate_counts(cls, v: list[int]) -> list[int]:
        """At least two bins, no negative counts."""
        if len(v) < 2 or any(c < 0 for c in v):
            raise ValueError("rank histogram needs at least two nonnegative bins")
        return v

    @property
    def total(self) -> int:
        return sum(self.counts)

    def chisquare_pvalue(self) -> float:
        """p-value of the chi-square test for a flat histogram."""
        return rank_histogram_chisquare(self.counts)


def rank_histogram(ranks: Sequence[int], n_members: int) -> RankHistogram:
    """Count ranks into M + 1 bins.

    Raises:
        DomainError: If a rank lies outside [1, M + 1].
    """
    r = np.asarray(ranks, dtype=int)
    if r.size and (r.min() < 1 or r.max() > n_members + 1):
        raise DomainError(f"ranks must lie in [1, {n_members + 1}]")
    counts = np.bincount(r - 1, minlength=n_members + 1) if r.size else np.zeros(n_members + 1)
    return RankHistogram(counts=[int(c) for c in counts])


def pit_histogram(pits: Sequence[float] | np.ndarray, bins: int) -> list[int]:
    """Counts of PIT values in ``bins`` equal-width bins on [0, 1]."""
    values = np.clip(np.asarray(pits, dtype=float), 0.0, 1.0)
    counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return [int(c) for c in counts]


def rank_histogram_chisquare(counts: Sequence[int]) -> float:
    """Chi-square goodness-of-fit p-value of bin counts against a flat histogram."""
    observed = np.asarray(counts, dtype=float)
    if observed.sum() == 0:
        return math.nan
    return float(stats.chisquare(observed).pvalue)


# ============================================================================
# Statistical Tests
# ============================================================================


class DmResult(NamedTuple):
    statistic: float
    p_value: float


def dm_lag_count(horizon_h: int) -> int:
    """Autocovariance lags for daily issues at a lead time of ``horizon_h`` hours."""
    return max(1, math.ceil(horizon_h / 24))


def dm_test(
    series_a: ScoreSeries,
    series_b: ScoreSeries,
    horizon_h: int,
    lags: int | None = None,
) -> DmResult:
    """Diebold-Mariano test of equal mean score.

    The loss differential d = A - B is studentised with the
    rectangular-truncated autocovariance sum over lags 0..L-1, L derived from
    the horizon unless given. A nonpositive long-run variance falls back to
    the lag-0 variance.

    Returns:
        Statistic and two-sided normal p-value; (0, 1) for a constant differential.

    Raises:
        DomainError: If the series are not aligned or shorter than 30 cases.
    """
    _require_aligned(series_a, series_b)
    d = series_a.array - series_b.array
    n = d.size
    if n < MIN_DM_CASES:
        raise DomainError(f"DM test needs at least {MIN_DM_CASES} cases, got {n}")

    centred = d - d.mean()
    n_lags = min(lags or dm_lag_count(horizon_h), n)
    gamma = [float(centred[j:] @ centred[: n - j]) / n for j in range(n_lags)]
    if gamma[0] <= 0:
        return DmResult(0.0, 1.0)
    variance = gamma[0] + 2.0 * sum(gamma[1:])
    if variance <= 0:
        variance = gamma[0]
    statistic = float(d.mean()) / math.sqrt(variance / n)
    return DmResult(statistic, float(2.0 * stats.norm.sf(abs(statistic))))


def ks_uniformity_subsampled(
    pits: Sequence[float] | np.ndarray,
    n_samples: int = 1000,
    sample_size: int = 1000,
    seed: int | np.random.SeedSequence | None = 0,
) -> float:
    """Mean asymptotic KS p-value against U[0, 1] over random subsamples.

    Raises:
        DomainError: If there are fewer PIT values than ``sample_size``.
    """
    values = np.asarray(pits, dtype=float)
    if values.size < sample_size:
        raise DomainError(f"need at least {sample_size} PIT values, got {values.size}")
    rng = np.random.default_rng(seed)
    p_values = [
        stats.kstest(
            rng.choice(values, size=sample_size, replace=False), "uniform", method="asymp"
        ).pvalue
        for _ in range(n_samples)
    ]
    return float(np.mean(p_values))

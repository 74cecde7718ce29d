"""Box-Cox transformation for Gaugecal.

This module provides the power transform applied to water levels before
calibration, its inverse, and the per-lead-time coefficient fit by grid
search over the profile log-likelihood.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from gaugecal.config import LambdaGrid
from gaugecal.logging import get_logger
from gaugecal.types import DomainError, FitError

logger = get_logger(__name__)

# |lambda| below this uses the log branch.
LOG_BRANCH_THRESHOLD = 1e-8

MIN_FIT_OBSERVATIONS = 30


class BoxCoxParam(BaseModel):
    """A fitted Box-Cox coefficient."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(alias="lambda", allow_inf_nan=False)
    """Transform coefficient."""

    lead_time_h: int | None = None
    """Lead time the coefficient was fitted for."""

    n_obs: int = 0
    """Number of observations in the fit."""

    log_likelihood: float | None = None
    """Profile log-likelihood at the optimum."""


def _is_log_branch(lam: float) -> bool:
    return abs(lam) < LOG_BRANCH_THRESHOLD


def bc_transform(x: float | np.ndarray, lam: float) -> float | np.ndarray:
    """h_lambda(x) = (x^lambda - 1)/lambda, or log(x) for lambda = 0.

    Args:
        x: Positive value(s) in cm.
        lam: Transform coefficient.

    Returns:
        Transformed value(s), a float for scalar input.

    Raises:
        DomainError: If any value is not positive and finite.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr) & (arr > 0)):
        raise DomainError("Box-Cox transform needs positive finite values")
    log_x = np.log(arr)
    out = log_x if _is_log_branch(lam) else np.expm1(lam * log_x) / lam
    return float(out) if out.ndim == 0 else out


def bc_inverse(y: float | np.ndarray, lam: float) -> float | np.ndarray:
    """Inverse transform (lambda*y + 1)^(1/lambda), or exp(y) for lambda = 0.

    Raises:
        DomainError: If lambda*y + 1 <= 0 for any value.
    """
    arr = np.asarray(y, dtype=float)
    if _is_log_branch(lam):
        out = np.exp(arr)
    else:
        base = lam * arr
        if np.any(~(base > -1.0)):
            raise DomainError(f"Box-Cox inverse undefined: lambda*y + 1 <= 0 for lambda={lam}")
        out = np.exp(np.log1p(base) / lam)
    return float(out) if out.ndim == 0 else out


def bc_profile_loglik(observations: Sequence[float] | np.ndarray, lam: float) -> float:
    """Gaussian profile log-likelihood of transformed data with the Jacobian term."""
    data = np.asarray(observations, dtype=float)
    if np.any(data <= 0):
        raise DomainError("Box-Cox likelihood needs positive values")
    return float(stats.boxcox_llf(0.0 if _is_log_branch(lam) else lam, data))


def bc_fit_lambda(
    observations: Sequence[float] | np.ndarray,
    grid: LambdaGrid | None = None,
    lead_time_h: int | None = None,
) -> BoxCoxParam:
    """Grid search for the coefficient maximizing the profile log-likelihood.

    Ties resolve to the smaller coefficient.

    Args:
        observations: Positive water levels.
        grid: Search grid, default (-1, 2, 0.01).
        lead_time_h: Lead time recorded with the result.

    Returns:
        The fitted BoxCoxParam.

    Raises:
        FitError: With fewer than 30 observations.
        DomainError: If any observation is not positive.
    """
    data = np.asarray(observations, dtype=float)
    if data.size < MIN_FIT_OBSERVATIONS:
        raise FitError(
            f"Box-Cox fit needs at least {MIN_FIT_OBSERVATIONS} observations, got {data.size}"
        )
    grid = grid or LambdaGrid()
    lams = grid.values()
    loglik = np.array([bc_profile_loglik(data, float(lam)) for lam in lams])
    if not np.any(np.isfinite(loglik)):
        raise FitError("Box-Cox profile likelihood is not finite anywhere on the grid")
    best = int(np.argmax(np.where(np.isnan(loglik), -np.inf, loglik)))
    lam = float(lams[best])
    if best in (0, len(lams) - 1):
        logger.warning("Box-Cox coefficient at grid edge", lam=lam, lead_time_h=lead_time_h)
    return BoxCoxParam(
        lam=lam, lead_time_h=lead_time_h, n_obs=int(data.size), log_likelihood=float(loglik[best])
    )


def transformed_bounds(physical: tuple[float, float], lam: float) -> tuple[float, float]:
    """Map physical (cm) bounds to the transformed scale."""
    lower, upper = physical
    if not 0 < lower < upper or not math.isfinite(upper):
        raise DomainError(f"physical bounds need 0 < lower < upper < inf, got {physical}")
    return float(bc_transform(lower, lam)), float(bc_transform(upper, lam))

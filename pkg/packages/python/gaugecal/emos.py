"""Truncated normal EMOS for Gaugecal.

This module provides the reference EMOS model: a single truncated normal
whose location is affine in the exchangeable-group means and whose
variance is affine in the ensemble variance, fitted by minimum mean CRPS.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize

from gaugecal.config import EmosControls
from gaugecal.distributions import TruncatedNormal, tn_crps_array
from gaugecal.logging import get_logger
from gaugecal.types import FitError, ForecastCase, GroupSpec

logger = get_logger(__name__)

# Predicted scales are floored at this fraction of the bound range.
SIGMA_FLOOR_FRACTION = 1e-6


# ============================================================================
# Model
# ============================================================================


class OptimizerDiagnostics(BaseModel):
    """Convergence record of an EMOS fit."""

    model_config = ConfigDict(frozen=True)

    iterations: int
    """Objective evaluations used."""

    mean_crps: float
    """Mean training CRPS at the returned parameters."""

    initial_mean_crps: float
    """Mean training CRPS at the starting parameters."""

    converged: bool
    restarts: int = 0
    flags: list[str] = Field(default_factory=list)


class EmosModel(BaseModel):
    """A fitted truncated normal EMOS model on the transformed scale."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    model_type: Literal["emos"] = "emos"

    group_spec: GroupSpec

    a: list[float]
    """Location coefficients a_0 (intercept) and a_1..a_K (group means)."""

    b0: float = Field(ge=0)
    b1: float = Field(ge=0)

    lower: float
    upper: float

    diagnostics: OptimizerDiagnostics

    @model_validator(mode="after")
    def validate_parameters(self) -> EmosModel:
        """Require K + 1 location coefficients and ordered bounds."""
        if len(self.a) != self.group_spec.n_groups + 1:
            raise ValueError(f"expected {self.group_spec.n_groups + 1} location coefficients")
        if not self.lower < self.upper:
            raise ValueError("lower bound must be below upper bound")
        return self

    @property
    def n_free_parameters(self) -> int:
        """Intercept, K group coefficients and two variance coefficients."""
        return self.group_spec.n_groups + 3

    def sigma_floor(self) -> float:
        return _sigma_floor(self.lower, self.upper)


def _sigma_floor(lower: float, upper: float) -> float:
    width = upper - lower if math.isfinite(upper - lower) else 1.0
    return SIGMA_FLOOR_FRACTION * width


# ============================================================================
# Features
# ============================================================================


@dataclass(frozen=True)
class EmosFeatures:
    """Group means and ensemble variance of one case."""

    group_means: np.ndarray
    variance: float
    degenerate: bool = False
    """True when the ensemble has a single member and the variance is 0 by convention."""


def emos_features(case: ForecastCase, spec: GroupSpec) -> EmosFeatures:
    """Mean of each group and unbiased variance of all members pooled.

    Raises:
        GroupSpecMismatchError: If the case does not match the spec.
    """
    case.require_spec(spec)
    means = np.array([float(np.mean(g)) for g in case.members])
    values = case.flat_members()
    if values.size == 1:
        return EmosFeatures(means, 0.0, degenerate=True)
    return EmosFeatures(means, float(np.var(values, ddof=1)))


@dataclass(frozen=True, eq=False)
class EmosTrainingSet:
    """Stacked EMOS features of a training window."""

    design: np.ndarray
    """Shape (N, K + 1): a leading column of ones, then the group means."""

    variance: np.ndarray
    observations: np.ndarray
    lower: float
    upper: float

    @classmethod
    def from_cases(
        cls, cases: Sequence[ForecastCase], spec: GroupSpec, bounds: tuple[float, float]
    ) -> EmosTrainingSet:
        """Stack features of transformed cases with observations.

        Raises:
            FitError: With fewer than two cases or a case without observation.
        """
        if len(cases) < 2:
            raise FitError(f"EMOS needs at least 2 training cases, got {len(cases)}")
        feats: list[EmosFeatures] = []
        obs: list[float] = []
        for case in cases:
            if case.observation is None:
                raise FitError(f"training case {case.case_id} has no observation")
            feats.append(emos_features(case, spec))
            obs.append(case.observation)
        means = np.vstack([f.group_means for f in feats])
        design = np.hstack([np.ones((len(feats), 1)), means])
        lower, upper = bounds
        return cls(
            design=design,
            variance=np.array([f.variance for f in feats]),
            observations=np.clip(np.asarray(obs, dtype=float), lower, upper),
            lower=lower,
            upper=upper,
        )


# ============================================================================
# Objective
# ============================================================================


def _unpack(theta: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Location coefficients and (b0, b1) from their square roots."""
    return theta[:-2], float(theta[-2] ** 2), float(theta[-1] ** 2)


def emos_mean_crps(theta: np.ndarray, data: EmosTrainingSet) -> float:
    """Mean closed-form CRPS over the training set.

    ``theta`` is (a_0..a_K, sqrt(b0), sqrt(b1)).
    """
    a, b0, b1 = _unpack(np.asarray(theta, dtype=float))
    mu = data.design @ a
    sigma = np.maximum(np.sqrt(b0 + b1 * data.variance), _sigma_floor(data.lower, data.upper))
    if not np.all(np.isfinite(mu)):
        return math.inf
    return float(np.mean(tn_crps_array(data.observations, mu, sigma, data.lower, data.upper)))


def emos_initial_parameters(data: EmosTrainingSet, spec: GroupSpec) -> np.ndarray:
    """a_0 = 0, a_k = M_k / M, b0 = residual variance about the pooled mean, b1 = 1."""
    weights = np.asarray(spec.sizes, dtype=float) / spec.total_members
    a = np.concatenate([[0.0], weights])
    resid = data.observations - data.design @ a
    b0 = max(float(np.var(resid)), _sigma_floor(data.lower, data.upper) ** 2)
    return np.concatenate([a, [math.sqrt(b0), 1.0]])


# ============================================================================
# Fitting
# ============================================================================


def emos_fit(
    data: EmosTrainingSet,
    spec: GroupSpec,
    controls: EmosControls | None = None,
) -> EmosModel:
    """Minimum-CRPS fit by Nelder-Mead with restarts from the best vertex.

    Nonnegativity of b0, b1 holds exactly through the square-root
    parameterization. The evaluation budget is shared by all restarts.

    Args:
        data: Stacked training features.
        spec: Group layout of the ensemble.
        controls: Optimizer controls.

    Returns:
        The fitted EmosModel.
    """
    controls = controls or EmosControls()
    theta0 = emos_initial_parameters(data, spec)

    def objective(theta: np.ndarray) -> float:
        return emos_mean_crps(theta, data)

    initial = objective(theta0)
    best_theta, best_value = theta0, initial
    used = 0
    converged = False
    restarts = 0

    for attempt in range(controls.restarts + 1):
        budget = controls.max_evaluations - used
        if budget <= 0:
            break
        result = optimize.minimize(
            objective,
            best_theta,
            method="Nelder-Mead",
            options={
                "maxfev": budget,
                "fatol": controls.fatol,
                "xatol": controls.xatol,
                "adaptive": True,
            },
        )
        used += int(result.nfev)
        restarts = attempt
        improvement = best_value - float(result.fun)
        if float(result.fun) < best_value:
            best_theta, best_value = np.asarray(result.x, dtype=float), float(result.fun)
        converged = bool(result.success)
        if converged and improvement <= controls.fatol:
            break

    flags: list[str] = []
    if not converged:
        flags.append("evaluation_budget")
        logger.warning(
            "EMOS optimizer did not converge", evaluations=used, mean_crps=best_value
        )

    a, b0, b1 = _unpack(best_theta)
    if np.any(b0 + b1 * data.variance <= 0):
        flags.append("sigma_floor")

    return EmosModel(
        group_spec=spec,
        a=[float(v) for v in a],
        b0=b0,
        b1=b1,
        lower=data.lower,
        upper=data.upper,
        diagnostics=OptimizerDiagnostics(
            iterations=used,
            mean_crps=best_value,
            initial_mean_crps=initial,
            converged=converged,
            restarts=restarts,
            flags=flags,
        ),
    )


def emos_predict(model: EmosModel, case: ForecastCase) -> TruncatedNormal:
    """Predictive N_a^b(a_0 + sum a_k mean_k, b0 + b1 S^2) for a transformed case.

    Scales at or below the floor 1e-6 * (b - a) are raised to it and logged.

    Raises:
        GroupSpecMismatchError: If the case does not match the model's spec.
    """
    feats = emos_features(case, model.group_spec)
    a = np.asarray(model.a)
    mu = float(a[0] + a[1:] @ feats.group_means)
    variance = model.b0 + model.b1 * feats.variance
    floor = model.sigma_floor()
    sigma = math.sqrt(variance) if variance > 0 else 0.0
    if sigma <= floor:
        logger.debug("EMOS scale floored", case_id=case.case_id, sigma=sigma)
        sigma = floor
    return TruncatedNormal(mu, sigma, model.lower, model.upper)

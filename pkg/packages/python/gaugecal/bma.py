"""Truncated normal Bayesian model averaging for Gaugecal.

This module provides the exchangeable-group BMA model with doubly
truncated normal components, its EM estimation in three variants and
predictive mixture construction.

Every member of group k carries the weight omega_k and the location
alpha_k + beta_k * f; a single scale sigma is shared by all components.
Per-member weights satisfy sum_k M_k * omega_k = 1.

Variants:
    pure_ml:    weight, location (intercept/slope) and scale updates with a
                mean correction of the component locations.
    simplified: no intercept/slope update; component locations follow the
                mean correction evaluated at the previous locations and the
                coefficients are regressed from the final locations.
    naive:      locations stay at the initial regression fit.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import logsumexp

from gaugecal.config import BmaControls, LocationSolver, MeanAnchor
from gaugecal.distributions import (
    TruncatedNormalMixture,
    boundary_ratio,
    mean_offset_ratio,
    tn_logpdf_array,
)
from gaugecal.logging import get_logger
from gaugecal.types import BmaVariant, FitError, ForecastCase, GroupSpec

logger = get_logger(__name__)

# Sums of responsibilities below this leave a group's coefficients unchanged.
DENOMINATOR_FLOOR = 1e-12


# ============================================================================
# Model
# ============================================================================


class EmDiagnostics(BaseModel):
    """Convergence record of an EM fit."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    iterations: int
    """Completed EM iterations."""

    log_likelihood: float
    """Observed-data log-likelihood of the returned parameters."""

    initial_log_likelihood: float
    """Log-likelihood at the initial parameters."""

    converged: bool
    """Whether the relative log-likelihood change fell below tolerance."""

    trace: list[float] = Field(default_factory=list)
    """Log-likelihood per iteration, starting with the initial value."""

    flags: list[str] = Field(default_factory=list)
    """Numerical fallbacks taken during the fit."""


class BmaModel(BaseModel):
    """A fitted truncated normal BMA model on the transformed scale."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    model_type: Literal["bma"] = "bma"

    group_spec: GroupSpec
    variant: BmaVariant

    weights: list[float]
    """Per-member weight omega_k of each group."""

    alpha: list[float]
    """Location intercepts per group."""

    beta: list[float]
    """Location slopes per group."""

    sigma: float = Field(gt=0)
    """Common component scale."""

    lower: float
    upper: float

    diagnostics: EmDiagnostics

    @model_validator(mode="after")
    def validate_parameters(self) -> BmaModel:
        """Check per-group lengths, weight normalisation and bounds."""
        k = self.group_spec.n_groups
        if not len(self.weights) == len(self.alpha) == len(self.beta) == k:
            raise ValueError(f"expected {k} weights and coefficients per group")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        total = math.fsum(m * w for m, w in zip(self.group_spec.sizes, self.weights, strict=True))
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"sum of M_k * omega_k must be 1, got {total!r}")
        if not self.lower < self.upper:
            raise ValueError("lower bound must be below upper bound")
        return self

    @property
    def group_masses(self) -> list[float]:
        """Total weight M_k * omega_k of each group."""
        return [m * w for m, w in zip(self.group_spec.sizes, self.weights, strict=True)]

    @property
    def n_free_parameters(self) -> int:
        """K - 1 weights, 2K location coefficients and one scale."""
        return 3 * self.group_spec.n_groups


# ============================================================================
# Training Data
# ============================================================================


def clamp_margin(lower: float, upper: float) -> float:
    """Distance kept from the bounds when clamping values inside them."""
    if math.isfinite(lower) and math.isfinite(upper):
        return 1e-9 * (upper - lower)
    finite = [abs(v) for v in (lower, upper) if math.isfinite(v)]
    return 1e-9 * max([1.0, *finite])


@dataclass(frozen=True, eq=False)
class TrainingData:
    """A training window stacked into arrays.

    ``forecasts`` has shape (N, M) in group-major column order with members
    sorted within each group, so any permutation of exchangeable members
    yields the same arrays.
    """

    spec: GroupSpec
    lower: float
    upper: float
    forecasts: np.ndarray
    observations: np.ndarray
    n_clamped: int = 0

    @classmethod
    def from_cases(
        cls,
        cases: Sequence[ForecastCase],
        spec: GroupSpec,
        bounds: tuple[float, float],
    ) -> TrainingData:
        """Stack transformed cases, clamping values that fall outside the bounds.

        Raises:
            FitError: With fewer than two cases or a case without observation.
            GroupSpecMismatchError: If a case does not match the group spec.
        """
        lower, upper = bounds
        if not lower < upper:
            raise FitError(f"invalid bounds {bounds}")
        if len(cases) < 2:
            raise FitError(f"BMA needs at least 2 training cases, got {len(cases)}")
        rows: list[np.ndarray] = []
        obs: list[float] = []
        for case in cases:
            case.require_spec(spec)
            if case.observation is None:
                raise FitError(f"training case {case.case_id} has no observation")
            rows.append(case.flat_members())
            obs.append(case.observation)

        forecasts = np.vstack(rows)
        offsets = spec.offsets
        for start, size in zip(offsets, spec.sizes, strict=True):
            forecasts[:, start : start + size] = np.sort(forecasts[:, start : start + size], axis=1)
        x = np.asarray(obs, dtype=float)

        eps = clamp_margin(lower, upper)
        lo, hi = lower + eps, upper - eps
        n_out = int(np.sum((forecasts < lo) | (forecasts > hi)) + np.sum((x < lo) | (x > hi)))
        if n_out:
            logger.warning(
                "Clamped values outside the truncation bounds",
                count=n_out,
                lower=lower,
                upper=upper,
            )
            forecasts = np.clip(forecasts, lo, hi)
            x = np.clip(x, lo, hi)
        return cls(spec, lower, upper, forecasts, x, n_out)

    @property
    def n_cases(self) -> int:
        return int(self.observations.shape[0])

    @cached_property
    def member_groups(self) -> np.ndarray:
        """Group index of every forecast column."""
        return self.spec.member_groups()

    def group_columns(self, k: int) -> slice:
        """Column slice of group k."""
        start = int(self.spec.offsets[k])
        return slice(start, start + self.spec.sizes[k])

    def sigma_floor_sq(self) -> float:
        """Lower limit of sigma^2: 1e-8 times the squared bound (or data) range."""
        if math.isfinite(self.lower) and math.isfinite(self.upper):
            width = self.upper - self.lower
        else:
            values = np.concatenate([self.forecasts.ravel(), self.observations])
            width = float(values.max() - values.min()) or 1.0
        return 1e-8 * width * width


# ============================================================================
# EM State
# ============================================================================


@dataclass(frozen=True, eq=False)
class EmState:
    """Parameters and responsibilities between EM steps."""

    weights: np.ndarray
    """Per-member weight of each group, shape (K,)."""

    alpha: np.ndarray
    beta: np.ndarray
    sigma: float

    mu0: np.ndarray
    """Initial regression locations, shape (N, M)."""

    mu: np.ndarray
    """Current component locations, shape (N, M)."""

    z: np.ndarray
    """Responsibilities, shape (N, M); rows sum to 1."""

    log_likelihood: float = -math.inf
    iteration: int = 0
    flags: tuple[str, ...] = field(default_factory=tuple)

    def flagged(self, flag: str) -> tuple[str, ...]:
        return self.flags if flag in self.flags else (*self.flags, flag)


def _ols(f: np.ndarray, y: np.ndarray) -> tuple[float, float, bool]:
    """Intercept and slope of y on f; (mean(y) - mean(f), 1) if f is constant."""
    f_mean = float(f.mean())
    y_mean = float(y.mean())
    df = f - f_mean
    sxx = float(df @ df)
    if sxx <= 1e-12 * max(1.0, f_mean * f_mean) * f.size:
        return y_mean - f_mean, 1.0, True
    slope = float(df @ (y - y_mean)) / sxx
    return y_mean - slope * f_mean, slope, False


def _group_regression(
    data: TrainingData, targets: np.ndarray
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Pooled per-group OLS of ``targets`` (N, M) on the member forecasts."""
    k = data.spec.n_groups
    alpha = np.empty(k)
    beta = np.empty(k)
    degenerate: list[int] = []
    for g in range(k):
        cols = data.group_columns(g)
        a, b, constant = _ols(data.forecasts[:, cols].ravel(), targets[:, cols].ravel())
        alpha[g], beta[g] = a, b
        if constant:
            degenerate.append(g)
    return alpha, beta, degenerate


def bma_init(data: TrainingData) -> EmState:
    """Initial parameters: per-group regression, observation spread, uniform weights.

    Groups with constant forecasts fall back to alpha = mean(x) - mean(f),
    beta = 1 and are flagged.
    """
    n, m = data.forecasts.shape
    x = data.observations
    targets = np.broadcast_to(x[:, None], (n, m))
    alpha, beta, degenerate = _group_regression(data, targets)

    flags: list[str] = []
    for g in degenerate:
        name = data.spec.groups[g].name
        flags.append(f"constant_forecasts:{name}")
        logger.warning("Constant forecasts in group, using bias-only start", group=name)

    sigma_sq = float(np.var(x, ddof=1))
    floor = data.sigma_floor_sq()
    if not sigma_sq >= floor:
        sigma_sq = floor
        flags.append("sigma_floor")

    groups = data.member_groups
    mu0 = alpha[groups] + beta[groups] * data.forecasts
    return EmState(
        weights=np.full(data.spec.n_groups, 1.0 / m),
        alpha=alpha,
        beta=beta,
        sigma=math.sqrt(sigma_sq),
        mu0=mu0,
        mu=mu0.copy(),
        z=np.full((n, m), 1.0 / m),
        flags=tuple(flags),
    )


# ============================================================================
# EM Steps
# ============================================================================


def _log_joint(state: EmState, data: TrainingData) -> np.ndarray:
    """log(omega_k) + log g(x | mu, sigma) for every case and member."""
    member_weights = state.weights[data.member_groups]
    with np.errstate(divide="ignore"):
        log_w = np.log(member_weights)
    log_dens = tn_logpdf_array(
        data.observations[:, None], state.mu, state.sigma, data.lower, data.upper
    )
    return log_dens + log_w[None, :]


def bma_log_likelihood(state: EmState, data: TrainingData) -> float:
    """Observed-data log-likelihood of the mixture over all training cases."""
    per_case = logsumexp(_log_joint(state, data), axis=1)
    return float(np.sum(per_case))


def em_e_step(state: EmState, data: TrainingData) -> EmState:
    """Responsibilities proportional to omega_k * g(x | mu_kl, sigma).

    Also records the log-likelihood of the current parameters. A case where
    every component density vanishes gets uniform responsibilities.
    """
    log_joint = _log_joint(state, data)
    per_case = logsumexp(log_joint, axis=1)
    dead = ~np.isfinite(per_case)
    flags = state.flags
    with np.errstate(invalid="ignore"):
        z = np.exp(log_joint - per_case[:, None])
    if np.any(dead):
        z[dead] = 1.0 / z.shape[1]
        flags = state.flagged("zero_density_cases")
        logger.warning("Cases with zero mixture density", count=int(dead.sum()))
    z /= z.sum(axis=1, keepdims=True)
    return replace(state, z=z, log_likelihood=float(np.sum(per_case[~dead])), flags=flags)


def em_update_weights(state: EmState, data: TrainingData) -> EmState:
    """omega_k = mean responsibility mass of group k, divided by M_k."""
    member_mass = state.z.mean(axis=0)
    group_mass = np.add.reduceat(member_mass, data.spec.offsets)
    group_mass /= group_mass.sum()
    return replace(state, weights=group_mass / np.asarray(data.spec.sizes, dtype=float))


def _std_bounds(data: TrainingData, mu: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    return (data.lower - mu) / sigma, (data.upper - mu) / sigma


def em_update_location(
    state: EmState, data: TrainingData, controls: BmaControls | None = None
) -> EmState:
    """Intercept/slope update followed by the mean correction (pure ML variant).

    The intercept and slope solve the responsibility-weighted normal
    equations for x + sigma * r, with r the boundary density ratio at the
    current locations. The new locations are the anchor minus sigma times
    the mean offset of the component at the updated coefficients.
    """
    controls = controls or BmaControls()
    sigma = state.sigma
    lo_std, hi_std = _std_bounds(data, state.mu, sigma)
    adjusted = data.observations[:, None] - sigma * mean_offset_ratio(lo_std, hi_std)

    alpha = state.alpha.copy()
    beta = state.beta.copy()
    flags = state.flags
    for g in range(data.spec.n_groups):
        cols = data.group_columns(g)
        f = data.forecasts[:, cols]
        z = state.z[:, cols]
        y = adjusted[:, cols]
        s0 = float(z.sum())
        s1 = float((z * f).sum())
        s2 = float((z * f * f).sum())
        t0 = float((z * y).sum())
        t1 = float((z * f * y).sum())

        if controls.location_solver is LocationSolver.SEQUENTIAL:
            if s0 < DENOMINATOR_FLOOR or s2 < DENOMINATOR_FLOOR:
                flags = _flag_location(state, flags, data, g)
                continue
            alpha[g] = (t0 - state.beta[g] * s1) / s0
            beta[g] = (t1 - state.alpha[g] * s1) / s2
        else:
            det = s0 * s2 - s1 * s1
            if s0 < DENOMINATOR_FLOOR or det <= DENOMINATOR_FLOOR * s0 * s2:
                flags = _flag_location(state, flags, data, g)
                continue
            alpha[g] = (s2 * t0 - s1 * t1) / det
            beta[g] = (s0 * t1 - s1 * t0) / det

    groups = data.member_groups
    fitted = alpha[groups] + beta[groups] * data.forecasts
    lo_std, hi_std = _std_bounds(data, fitted, sigma)
    anchor = state.mu0 if controls.anchor is MeanAnchor.INITIAL else fitted
    mu = anchor - sigma * mean_offset_ratio(lo_std, hi_std)
    return replace(state, alpha=alpha, beta=beta, mu=mu, flags=flags)


def _flag_location(
    state: EmState, flags: tuple[str, ...], data: TrainingData, g: int
) -> tuple[str, ...]:
    flag = f"location_denominator:{data.spec.groups[g].name}"
    return flags if flag in flags else (*flags, flag)


def em_update_location_simplified(state: EmState, data: TrainingData) -> EmState:
    """Mean correction at the previous locations, without coefficient updates."""
    lo_std, hi_std = _std_bounds(data, state.mu, state.sigma)
    mu = state.mu0 - state.sigma * mean_offset_ratio(lo_std, hi_std)
    return replace(state, mu=mu)


def em_update_sigma(state: EmState, data: TrainingData) -> EmState:
    """sigma^2 = mean over cases of sum z * [(x - mu)^2 - sigma^2 * boundary ratio].

    Values below the floor 1e-8 * (b - a)^2 are raised to it and flagged.
    """
    sigma = state.sigma
    lo_std, hi_std = _std_bounds(data, state.mu, sigma)
    resid = data.observations[:, None] - state.mu
    terms = resid * resid - sigma * sigma * boundary_ratio(lo_std, hi_std)
    sigma_sq = float(np.sum(state.z * terms)) / data.n_cases
    floor = data.sigma_floor_sq()
    flags = state.flags
    if not sigma_sq >= floor:
        sigma_sq = floor
        flags = state.flagged("sigma_floor")
    return replace(state, sigma=math.sqrt(sigma_sq), flags=flags)


# ============================================================================
# Fitting
# ============================================================================


def _m_step(
    state: EmState, data: TrainingData, variant: BmaVariant, controls: BmaControls
) -> EmState:
    state = em_update_weights(state, data)
    if variant is BmaVariant.PURE_ML:
        state = em_update_location(state, data, controls)
    elif variant is BmaVariant.SIMPLIFIED:
        state = em_update_location_simplified(state, data)
    return em_update_sigma(state, data)


def bma_fit(
    data: TrainingData,
    variant: BmaVariant = BmaVariant.PURE_ML,
    controls: BmaControls | None = None,
) -> BmaModel:
    """Fit a BMA model by EM.

    Iterates until the relative log-likelihood change drops below
    ``controls.tol`` or ``controls.max_iter`` iterations pass. The
    parameters with the highest log-likelihood seen are returned.

    Args:
        data: Stacked training window on the transformed scale.
        variant: Estimation variant.
        controls: EM iteration controls.

    Returns:
        The fitted BmaModel with its diagnostics.

    Example:
        >>> data = TrainingData.from_cases(cases, GroupSpec.kaub(), (a, b))
        >>> model = bma_fit(data, BmaVariant.NAIVE)
        >>> model.group_masses
    """
    controls = controls or BmaControls()
    state = em_e_step(bma_init(data), data)
    trace = [state.log_likelihood]
    best = state
    converged = False

    for iteration in range(1, controls.max_iter + 1):
        previous = state.log_likelihood
        state = em_e_step(_m_step(state, data, variant, controls), data)
        state = replace(state, iteration=iteration)
        current = state.log_likelihood
        trace.append(current)

        if not np.isfinite(current):
            state = replace(state, flags=state.flagged("nonfinite_likelihood"))
            break
        if current > best.log_likelihood:
            best = state
        if abs(current - previous) <= controls.tol * max(abs(previous), 1e-300):
            converged = True
            break

    if not converged:
        logger.warning(
            "BMA EM did not converge",
            variant=variant.value,
            iterations=state.iteration,
            log_likelihood=state.log_likelihood,
        )

    alpha, beta = best.alpha, best.beta
    flags = list(dict.fromkeys([*best.flags, *state.flags]))
    if variant is BmaVariant.SIMPLIFIED:
        alpha, beta, degenerate = _group_regression(data, best.mu)
        flags.extend(f"constant_forecasts:{data.spec.groups[g].name}" for g in degenerate)
        flags = list(dict.fromkeys(flags))

    weights = best.weights / float(np.dot(best.weights, data.spec.sizes))
    return BmaModel(
        group_spec=data.spec,
        variant=variant,
        weights=[float(w) for w in weights],
        alpha=[float(a) for a in alpha],
        beta=[float(b) for b in beta],
        sigma=best.sigma,
        lower=data.lower,
        upper=data.upper,
        diagnostics=EmDiagnostics(
            iterations=state.iteration,
            log_likelihood=best.log_likelihood,
            initial_log_likelihood=trace[0],
            converged=converged,
            trace=trace,
            flags=flags,
        ),
    )


def bma_predict(model: BmaModel, case: ForecastCase) -> TruncatedNormalMixture:
    """Predictive mixture for a transformed forecast case.

    Component (k, l) is N_a^b(alpha_k + beta_k * f_kl, sigma^2) with weight omega_k.

    Raises:
        GroupSpecMismatchError: If the case's member counts differ from the model's.
    """
    case.require_spec(model.group_spec)
    groups = model.group_spec.member_groups()
    alpha = np.asarray(model.alpha)[groups]
    beta = np.asarray(model.beta)[groups]
    weights = np.asarray(model.weights)[groups]
    mus = alpha + beta * case.flat_members()
    return TruncatedNormalMixture.from_arrays(
        mus, model.sigma, weights / weights.sum(), model.lower, model.upper
    )

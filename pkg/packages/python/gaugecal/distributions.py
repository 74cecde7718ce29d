"""Doubly truncated normal distributions and finite mixtures thereof.

This module provides densities, CDFs, quantiles, moments and the CRPS of
the truncated normal N_a^b(mu, sigma^2), in closed form for a single
component and by adaptive quadrature for mixtures. Infinite bounds are
accepted so that one-sided and untruncated limits share one code path.

Scalar functions (``tn_*``, ``mix_*``) take the frozen distribution
objects. The ``*_array`` kernels broadcast over numpy arrays and are the
building blocks of the estimation code.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Protocol

import numpy as np
from numpy.typing import ArrayLike
from scipy import integrate, optimize, special

from gaugecal.types import DomainError

# Normalising constants below this are treated as this value.
NORMALIZER_FLOOR = 1e-300

QUADRATURE_EPSREL = 1e-8
QUANTILE_XTOL = 1e-10

# Tail probability used to trim the integration range of quadrature CRPS.
SUPPORT_TAIL = 1e-14

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_LOG_SQRT_2PI = math.log(_SQRT_2PI)
_SQRT_PI = math.sqrt(math.pi)
_SQRT_2 = math.sqrt(2.0)


# ============================================================================
# Standard Normal Helpers
# ============================================================================


def _log_ndtr_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(Phi(b) - Phi(a)) for a <= b, accurate when a <= 0."""
    log_a = special.log_ndtr(a)
    log_b = special.log_ndtr(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        return log_b + np.log(-np.expm1(log_a - log_b))


def _reflect(alpha: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mirror intervals lying above the location into the lower tail.

    Returns the flip mask and the reflected standardised bounds; the
    reflected lower bound is always <= 0.
    """
    flip = alpha > 0
    return flip, np.where(flip, -beta, alpha), np.where(flip, -alpha, beta)


def log_normalizer(alpha: ArrayLike, beta: ArrayLike) -> np.ndarray:
    """log(Phi(beta) - Phi(alpha)), finite however far into a tail the interval lies."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    _, lo, hi = _reflect(alpha, beta)
    return _log_ndtr_diff(lo, hi)


def normalizer(alpha: ArrayLike, beta: ArrayLike) -> np.ndarray:
    """Probability mass Phi(beta) - Phi(alpha) of the truncation interval.

    Floored at NORMALIZER_FLOOR. Estimation code divides by the mass in log
    space through ``log_normalizer`` instead.
    """
    return np.maximum(np.exp(log_normalizer(alpha, beta)), NORMALIZER_FLOOR)


def _density_ratio(t: np.ndarray, log_mass: np.ndarray) -> np.ndarray:
    """phi(t) / Z; 0 at +-inf."""
    return np.exp(-0.5 * t * t - _LOG_SQRT_2PI - log_mass)


def mean_offset_ratio(alpha: ArrayLike, beta: ArrayLike) -> np.ndarray:
    """(phi(alpha) - phi(beta)) / Z, so that mean = mu + sigma * ratio."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    log_mass = log_normalizer(alpha, beta)
    return _density_ratio(alpha, log_mass) - _density_ratio(beta, log_mass)


def boundary_ratio(alpha: ArrayLike, beta: ArrayLike) -> np.ndarray:
    """(alpha*phi(alpha) - beta*phi(beta)) / Z, the variance correction term."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    log_mass = log_normalizer(alpha, beta)
    with np.errstate(invalid="ignore"):
        lo = np.where(np.isfinite(alpha), alpha * _density_ratio(alpha, log_mass), 0.0)
        hi = np.where(np.isfinite(beta), beta * _density_ratio(beta, log_mass), 0.0)
    return lo - hi


# ============================================================================
# Vectorised Kernels
# ============================================================================


def tn_logpdf_array(
    x: ArrayLike,
    mu: ArrayLike,
    sigma: ArrayLike,
    lower: ArrayLike,
    upper: ArrayLike,
) -> np.ndarray:
    """Log density of N_a^b(mu, sigma^2); -inf outside [lower, upper]."""
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    z = (x - mu) / sigma
    log_mass = log_normalizer((lower - mu) / sigma, (upper - mu) / sigma)
    logpdf = -0.5 * z * z - _LOG_SQRT_2PI - np.log(sigma) - log_mass
    return np.where((x >= lower) & (x <= upper), logpdf, -np.inf)


def tn_cdf_array(
    x: ArrayLike,
    mu: ArrayLike,
    sigma: ArrayLike,
    lower: ArrayLike,
    upper: ArrayLike,
) -> np.ndarray:
    """CDF of N_a^b(mu, sigma^2), 0 below the lower and 1 above the upper bound."""
    x, mu, sigma, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, mu, sigma, lower, upper))
    )
    alpha = (lower - mu) / sigma
    z = (x - mu) / sigma
    flip, lo, hi = _reflect(alpha, (upper - mu) / sigma)
    num = np.where(
        flip,
        _log_ndtr_diff(np.clip(-z, lo, hi), hi),
        _log_ndtr_diff(lo, np.clip(z, lo, hi)),
    )
    with np.errstate(invalid="ignore"):
        cdf = np.exp(num - _log_ndtr_diff(lo, hi))
    cdf = np.where(x <= lower, 0.0, np.where(x >= upper, 1.0, cdf))
    return np.clip(np.nan_to_num(cdf, nan=0.0), 0.0, 1.0)


def tn_ppf_array(
    p: ArrayLike,
    mu: ArrayLike,
    sigma: ArrayLike,
    lower: ArrayLike,
    upper: ArrayLike,
) -> np.ndarray:
    """Quantile function by inversion of the closed-form CDF (no polishing).

    Inverted in log space on the reflected interval, so intervals far into
    either tail still give quantiles inside the bounds.
    """
    p, mu, sigma, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (p, mu, sigma, lower, upper))
    )
    flip, lo, hi = _reflect((lower - mu) / sigma, (upper - mu) / sigma)
    log_lo = special.log_ndtr(lo)
    log_hi = special.log_ndtr(hi)
    log_mass = _log_ndtr_diff(lo, hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        # Phi(t) = Phi(lo) + p Z, or Phi(hi) - p Z on reflected intervals.
        from_lower = np.logaddexp(log_lo, np.log(p) + log_mass)
        from_upper = log_hi + np.log1p(-p * np.exp(log_mass - log_hi))
        t = special.ndtri_exp(np.where(flip, from_upper, from_lower))
    z = np.where(flip, -t, t)
    return np.clip(mu + sigma * z, lower, upper)


def tn_crps_array(
    x: ArrayLike,
    mu: ArrayLike,
    sigma: ArrayLike,
    lower: ArrayLike,
    upper: ArrayLike,
) -> np.ndarray:
    """Closed-form CRPS of N_a^b(mu, sigma^2) at observation x.

    With standardised bounds l, u, observation w and z = clip(w, l, u),
    D = Phi(u) - Phi(l):

        CRPS / sigma = |w - z| + [z (2 Phi(z) - Phi(l) - Phi(u)) + 2 phi(z)] / D
                       - [Phi(sqrt2 u) - Phi(sqrt2 l)] / (sqrt(pi) D^2)

    Distributions whose lower bound lies above the location are reflected
    (x -> -x) first so that Phi(l) is never close to 1. Every Phi and phi
    term is divided by D in log space before the terms are combined, so
    intervals tens of standard deviations from the location stay finite.
    """
    x, mu, sigma, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, mu, sigma, lower, upper))
    )
    flip, l_std, u_std = _reflect((lower - mu) / sigma, (upper - mu) / sigma)
    w = np.where(flip, -1.0, 1.0) * (x - mu) / sigma
    z = np.clip(w, l_std, u_std)

    log_mass = _log_ndtr_diff(l_std, u_std)
    ratio_l = np.exp(special.log_ndtr(l_std) - log_mass)
    ratio_u = np.exp(special.log_ndtr(u_std) - log_mass)
    ratio_z = np.exp(special.log_ndtr(z) - log_mass)

    outside = np.abs(w - z)
    spread = z * (2.0 * ratio_z - ratio_l - ratio_u) + 2.0 * _density_ratio(z, log_mass)
    pair = np.exp(_log_ndtr_diff(_SQRT_2 * l_std, _SQRT_2 * u_std) - 2.0 * log_mass) / _SQRT_PI
    return np.maximum(sigma * (outside + spread - pair), 0.0)


# ============================================================================
# Distribution Types
# ============================================================================


class Moments(NamedTuple):
    """Mean and variance of a distribution."""

    mean: float
    variance: float


class Predictive(Protocol):
    """A predictive distribution on the transformed scale."""

    @property
    def lower(self) -> float: ...

    @property
    def upper(self) -> float: ...

    def cdf(self, x: float) -> float: ...

    def quantile(self, p: float) -> float: ...

    def support(self, tail: float = SUPPORT_TAIL) -> tuple[float, float]: ...


def _require_finite(value: float, name: str = "x") -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value}")
    return value


def _require_probability(p: float) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return p


@dataclass(frozen=True)
class TruncatedNormal:
    """Doubly truncated normal N_a^b(mu, sigma^2).

    ``lower``/``upper`` may be -inf/+inf for one-sided or no truncation.
    """

    mu: float
    sigma: float
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite, got {self.mu}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"sigma must be positive and finite, got {self.sigma}")
        if math.isnan(self.lower) or math.isnan(self.upper) or not self.lower < self.upper:
            raise DomainError(
                f"bounds must satisfy lower < upper, got [{self.lower}, {self.upper}]"
            )

    @property
    def alpha(self) -> float:
        """Standardised lower bound."""
        return (self.lower - self.mu) / self.sigma

    @property
    def beta(self) -> float:
        """Standardised upper bound."""
        return (self.upper - self.mu) / self.sigma

    def pdf(self, x: float) -> float:
        return tn_pdf(self, x)

    def cdf(self, x: float) -> float:
        return tn_cdf(self, x)

    def quantile(self, p: float) -> float:
        return tn_quantile(self, p)

    def crps(self, x: float) -> float:
        return tn_crps(self, x)

    def support(self, tail: float = SUPPORT_TAIL) -> tuple[float, float]:
        """Interval outside which the CDF is within ``tail`` of 0 or 1."""
        lo = float(tn_ppf_array(tail, self.mu, self.sigma, self.lower, self.upper))
        hi = float(tn_ppf_array(1.0 - tail, self.mu, self.sigma, self.lower, self.upper))
        return max(lo, self.lower), min(hi, self.upper)


@dataclass(frozen=True)
class TruncatedNormalMixture:
    """Weighted mixture of truncated normals sharing one truncation interval."""

    components: tuple[TruncatedNormal, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.components:
            raise DomainError("a mixture needs at least one component")
        if len(self.components) != len(self.weights):
            raise DomainError(
                f"{len(self.components)} components but {len(self.weights)} weights"
            )
        if any(not (math.isfinite(w) and w >= 0) for w in self.weights):
            raise DomainError("mixture weights must be finite and nonnegative")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"mixture weights must sum to 1, got {total!r}")
        first = self.components[0]
        for c in self.components[1:]:
            if c.lower != first.lower or c.upper != first.upper:
                raise DomainError("all mixture components must share the same bounds")

    @classmethod
    def from_arrays(
        cls,
        mus: Sequence[float] | np.ndarray,
        sigma: float | Sequence[float] | np.ndarray,
        weights: Sequence[float] | np.ndarray,
        lower: float,
        upper: float,
    ) -> TruncatedNormalMixture:
        """Build a mixture from location, scale and weight vectors."""
        mu_arr = np.asarray(mus, dtype=float)
        sigma_arr = np.broadcast_to(np.asarray(sigma, dtype=float), mu_arr.shape)
        comps = tuple(
            TruncatedNormal(float(m), float(s), lower, upper)
            for m, s in zip(mu_arr, sigma_arr, strict=True)
        )
        return cls(comps, tuple(float(w) for w in weights))

    @property
    def lower(self) -> float:
        return self.components[0].lower

    @property
    def upper(self) -> float:
        return self.components[0].upper

    @cached_property
    def _params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mus = np.array([c.mu for c in self.components])
        sigmas = np.array([c.sigma for c in self.components])
        return mus, sigmas, np.array(self.weights)

    def pdf(self, x: float) -> float:
        return mix_pdf(self, x)

    def cdf(self, x: float) -> float:
        return mix_cdf(self, x)

    def quantile(self, p: float) -> float:
        return mix_quantile(self, p)

    def crps(self, x: float) -> float:
        return mix_crps(self, x)

    def support(self, tail: float = SUPPORT_TAIL) -> tuple[float, float]:
        """Interval outside which the mixture CDF is within ``tail`` of 0 or 1."""
        mus, sigmas, weights = self._params
        live = weights > 0
        lo = tn_ppf_array(tail, mus[live], sigmas[live], self.lower, self.upper)
        hi = tn_ppf_array(1.0 - tail, mus[live], sigmas[live], self.lower, self.upper)
        return max(float(lo.min()), self.lower), min(float(hi.max()), self.upper)


# ============================================================================
# Single Component Operations
# ============================================================================


def tn_pdf(d: TruncatedNormal, x: float) -> float:
    """Density g_{a,b}(x; mu, sigma); 0 outside [a, b].

    Raises:
        DomainError: If x is not finite.
    """
    x = _require_finite(x)
    return float(np.exp(tn_logpdf_array(x, d.mu, d.sigma, d.lower, d.upper)))


def tn_cdf(d: TruncatedNormal, x: float) -> float:
    """CDF, clamped to 0 below the lower and 1 above the upper bound.

    Raises:
        DomainError: If x is not finite.
    """
    x = _require_finite(x)
    return float(tn_cdf_array(x, d.mu, d.sigma, d.lower, d.upper))


def tn_quantile(d: TruncatedNormal, p: float) -> float:
    """Quantile by inverting the closed-form CDF, polished by one Newton step.

    Raises:
        DomainError: If p is outside (0, 1).
    """
    p = _require_probability(p)
    x = float(tn_ppf_array(p, d.mu, d.sigma, d.lower, d.upper))
    if not math.isfinite(x):
        return x
    density = tn_pdf(d, x)
    if density > 0:
        polished = x - (tn_cdf(d, x) - p) / density
        if d.lower <= polished <= d.upper:
            x = polished
    return x


def tn_moments(d: TruncatedNormal) -> Moments:
    """Mean kappa and variance rho^2 of N_a^b(mu, sigma^2)."""
    shift = float(mean_offset_ratio(d.alpha, d.beta))
    spread = float(boundary_ratio(d.alpha, d.beta))
    mean = min(max(d.mu + d.sigma * shift, d.lower), d.upper)
    variance = d.sigma**2 * (1.0 + spread - shift**2)
    return Moments(mean, max(variance, np.finfo(float).tiny))


def tn_crps(d: TruncatedNormal, x: float) -> float:
    """Closed-form CRPS of a truncated normal at observation x.

    Raises:
        DomainError: If x is not finite.
    """
    x = _require_finite(x)
    return float(tn_crps_array(x, d.mu, d.sigma, d.lower, d.upper))


def tn_sample(d: TruncatedNormal, size: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling; used by test oracles and the synthetic generator."""
    u = rng.uniform(np.finfo(float).tiny, 1.0, size=size)
    return tn_ppf_array(u, d.mu, d.sigma, d.lower, d.upper)


# ============================================================================
# Mixture Operations
# ============================================================================


def mix_pdf(m: TruncatedNormalMixture, x: float) -> float:
    """Mixture density."""
    x = _require_finite(x)
    mus, sigmas, weights = m._params
    return float(weights @ np.exp(tn_logpdf_array(x, mus, sigmas, m.lower, m.upper)))


def mix_cdf(m: TruncatedNormalMixture, x: float) -> float:
    """Weighted sum of component CDFs."""
    x = _require_finite(x)
    mus, sigmas, weights = m._params
    cdf = weights @ tn_cdf_array(x, mus, sigmas, m.lower, m.upper)
    return min(max(float(cdf), 0.0), 1.0)


def mix_quantile(m: TruncatedNormalMixture, p: float) -> float:
    """Root of mix_cdf(m, .) = p by bracketed Brent iteration.

    The initial bracket is spanned by the component p-quantiles, between
    which the mixture quantile always lies.

    Raises:
        DomainError: If p is outside (0, 1).
    """
    p = _require_probability(p)
    if len(m.components) == 1:
        return tn_quantile(m.components[0], p)

    mus, sigmas, weights = m._params
    live = weights > 0
    qs = tn_ppf_array(p, mus[live], sigmas[live], m.lower, m.upper)
    lo, hi = float(qs.min()), float(qs.max())

    def excess(x: float) -> float:
        return mix_cdf(m, x) - p

    step = max(hi - lo, 1e-6 * float(sigmas.max()))
    while excess(lo) > 0:
        lo = max(m.lower, lo - step)
        step *= 2.0
    step = max(hi - lo, 1e-6 * float(sigmas.max()))
    while excess(hi) < 0:
        hi = min(m.upper, hi + step)
        step *= 2.0

    if excess(lo) == 0:
        return lo
    if excess(hi) == 0 or hi - lo <= QUANTILE_XTOL:
        return hi
    return float(optimize.brentq(excess, lo, hi, xtol=QUANTILE_XTOL, maxiter=500))


def mix_moments(m: TruncatedNormalMixture) -> Moments:
    """Mean and variance of the mixture."""
    parts = [tn_moments(c) for c in m.components]
    w = np.array(m.weights)
    means = np.array([p.mean for p in parts])
    second = np.array([p.variance + p.mean**2 for p in parts])
    mean = float(w @ means)
    return Moments(mean, max(float(w @ second) - mean**2, np.finfo(float).tiny))


def crps_quadrature(
    cdf: Callable[[float], float],
    lower: float,
    upper: float,
    x: float,
    *,
    epsrel: float = QUADRATURE_EPSREL,
) -> float:
    """CRPS of a CDF supported on [lower, upper] by adaptive quadrature.

    Evaluates int_lower^x F^2 + int_x^upper (1 - F)^2 with both integrals
    split at the observation. An observation outside [lower, upper] adds
    its distance to the interval, where F is identically 0 or 1.

    Raises:
        DomainError: If x is not finite.
    """
    x = _require_finite(x)
    xc = min(max(x, lower), upper)
    total = abs(x - xc)
    if xc > lower:
        total += _quad(lambda t: cdf(t) ** 2, lower, xc, epsrel)
    if upper > xc:
        total += _quad(lambda t: (1.0 - cdf(t)) ** 2, xc, upper, epsrel)
    return total


def _quad(fn: Callable[[float], float], a: float, b: float, epsrel: float) -> float:
    value, _ = integrate.quad(fn, a, b, epsabs=1e-14, epsrel=epsrel, limit=200)
    return float(value)


def mix_crps(m: TruncatedNormalMixture, x: float) -> float:
    """CRPS of a truncated normal mixture by quadrature.

    Raises:
        DomainError: If x is not finite.
    """
    lo, hi = m.support()
    return crps_quadrature(m.cdf, lo, hi, x)

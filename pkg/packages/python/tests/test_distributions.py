"""Tests for the truncated normal distributions module."""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np
import pytest
from scipy import integrate, stats

from gaugecal.distributions import (
    TruncatedNormal,
    TruncatedNormalMixture,
    boundary_ratio,
    crps_quadrature,
    mean_offset_ratio,
    mix_cdf,
    mix_crps,
    mix_moments,
    mix_pdf,
    mix_quantile,
    normalizer,
    tn_cdf,
    tn_crps,
    tn_crps_array,
    tn_logpdf_array,
    tn_moments,
    tn_pdf,
    tn_quantile,
    tn_sample,
)
from gaugecal.types import DomainError


def random_tn(rng: np.random.Generator) -> TruncatedNormal:
    """Random N_a^b with the interval placed anywhere around the location."""
    mu = rng.uniform(-5.0, 5.0)
    sigma = rng.uniform(0.1, 3.0)
    lower = mu + sigma * rng.uniform(-3.0, 1.5)
    upper = lower + sigma * rng.uniform(0.3, 5.0)
    return TruncatedNormal(mu, sigma, lower, upper)


def quad(fn: Callable[[float], float], a: float, b: float) -> float:
    value, _ = integrate.quad(fn, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(value)


# ============================================================================
# Helper Tests
# ============================================================================


class TestNormalizer:
    """Tests for the truncation mass and its ratios."""

    def test_matches_cdf_difference(self) -> None:
        """Mass equals Phi(beta) - Phi(alpha) in the central region."""
        assert float(normalizer(-1.0, 2.0)) == pytest.approx(
            stats.norm.cdf(2.0) - stats.norm.cdf(-1.0), abs=1e-15
        )

    def test_upper_tail_precision(self) -> None:
        """Far upper-tail intervals keep full relative precision."""
        expected = stats.norm.sf(10.0) - stats.norm.sf(11.0)
        assert float(normalizer(10.0, 11.0)) == pytest.approx(expected, rel=1e-10)

    def test_floor(self) -> None:
        """Vanishing mass is floored instead of reaching zero."""
        assert float(normalizer(50.0, 60.0)) > 0.0

    def test_infinite_bounds(self) -> None:
        """No truncation has mass one and zero correction terms."""
        assert float(normalizer(-math.inf, math.inf)) == 1.0
        assert float(mean_offset_ratio(-math.inf, math.inf)) == 0.0
        assert float(boundary_ratio(-math.inf, math.inf)) == 0.0

    def test_mean_offset_sign(self) -> None:
        """mu + sigma * offset is the mean: positive shift for a lower bound at the location."""
        d = TruncatedNormal(2.0, 1.5, 2.0, math.inf)
        mean = quad(lambda x: x * tn_pdf(d, x), 2.0, 2.0 + 40 * 1.5)
        ratio = float(mean_offset_ratio(d.alpha, d.beta))
        assert ratio > 0
        assert d.mu + d.sigma * ratio == pytest.approx(mean, abs=1e-9)


# ============================================================================
# Single Component Tests
# ============================================================================


class TestTruncatedNormal:
    """Tests for the TruncatedNormal type."""

    @pytest.mark.parametrize(
        ("mu", "sigma", "lower", "upper"),
        [
            (0.0, 0.0, -1.0, 1.0),
            (0.0, -1.0, -1.0, 1.0),
            (math.nan, 1.0, -1.0, 1.0),
            (0.0, 1.0, 1.0, 1.0),
            (0.0, 1.0, 2.0, 1.0),
        ],
    )
    def test_rejects_invalid_parameters(
        self, mu: float, sigma: float, lower: float, upper: float
    ) -> None:
        """Invalid location, scale or bounds raise DomainError."""
        with pytest.raises(DomainError):
            TruncatedNormal(mu, sigma, lower, upper)

    def test_untruncated_defaults(self) -> None:
        """Default bounds are infinite and reproduce the normal distribution."""
        d = TruncatedNormal(1.0, 2.0)
        assert tn_cdf(d, 2.0) == pytest.approx(stats.norm.cdf(2.0, 1.0, 2.0), abs=1e-15)
        assert tn_pdf(d, 0.0) == pytest.approx(stats.norm.pdf(0.0, 1.0, 2.0), rel=1e-14)

    def test_pdf_zero_outside(self) -> None:
        """Density vanishes outside the bounds; CDF is 0 and 1 at them."""
        d = TruncatedNormal(0.0, 1.0, -1.0, 2.0)
        assert tn_pdf(d, -1.5) == 0.0
        assert tn_pdf(d, 2.5) == 0.0
        assert tn_cdf(d, -1.0) == 0.0
        assert tn_cdf(d, 2.0) == 1.0

    def test_nonfinite_argument(self) -> None:
        """Density, CDF and CRPS reject non-finite arguments."""
        d = TruncatedNormal(0.0, 1.0)
        for fn in (tn_pdf, tn_cdf, tn_crps):
            with pytest.raises(DomainError):
                fn(d, math.inf)

    def test_pdf_normalization(self) -> None:
        """The density integrates to one over the bounds."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            d = random_tn(rng)
            assert quad(lambda x, d=d: tn_pdf(d, x), d.lower, d.upper) == pytest.approx(
                1.0, abs=1e-8
            )

    def test_moments_against_quadrature(self) -> None:
        """Closed-form mean and variance agree with numerical integration."""
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = random_tn(rng)
            mean = quad(lambda x, d=d: x * tn_pdf(d, x), d.lower, d.upper)
            second = quad(lambda x, d=d: (x - mean) ** 2 * tn_pdf(d, x), d.lower, d.upper)
            m = tn_moments(d)
            assert m.mean == pytest.approx(mean, abs=1e-8)
            assert m.variance == pytest.approx(second, abs=1e-8)

    def test_one_sided_moments(self) -> None:
        """Half-normal moments follow from the one-sided limit."""
        m = tn_moments(TruncatedNormal(0.0, 1.0, 0.0, math.inf))
        assert m.mean == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)
        assert m.variance == pytest.approx(1 - 2 / math.pi, rel=1e-12)

    def test_quantile_round_trip(self) -> None:
        """F(F^-1(p)) = p for random parameters and probabilities."""
        rng = np.random.default_rng(3)
        for _ in range(500):
            d = random_tn(rng)
            p = rng.uniform(1e-6, 1 - 1e-6)
            assert tn_cdf(d, tn_quantile(d, p)) == pytest.approx(p, abs=1e-9)

    def test_quantile_far_upper_tail(self) -> None:
        """Intervals far above the location invert accurately."""
        d = TruncatedNormal(0.0, 1.0, 6.0, 9.0)
        for p in (0.01, 0.5, 0.99):
            x = tn_quantile(d, p)
            assert 6.0 <= x <= 9.0
            assert tn_cdf(d, x) == pytest.approx(p, abs=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_quantile_rejects_invalid_probability(self, p: float) -> None:
        """Probabilities outside (0, 1) raise DomainError."""
        with pytest.raises(DomainError):
            tn_quantile(TruncatedNormal(0.0, 1.0), p)

    def test_sample_within_bounds(self) -> None:
        """Samples respect the bounds and match the closed-form mean."""
        d = TruncatedNormal(1.0, 2.0, 0.0, 3.0)
        draws = tn_sample(d, 20_000, np.random.default_rng(4))
        assert draws.min() >= 0.0
        assert draws.max() <= 3.0
        assert float(draws.mean()) == pytest.approx(tn_moments(d).mean, abs=0.02)

    def test_logpdf_array(self) -> None:
        """The vectorised log density matches the scalar density."""
        d = TruncatedNormal(1.0, 0.5, 0.0, 2.0)
        xs = np.array([-0.1, 0.3, 1.0, 1.9, 2.1])
        logs = tn_logpdf_array(xs, d.mu, d.sigma, d.lower, d.upper)
        for x, lp in zip(xs, logs, strict=True):
            expected = tn_pdf(d, float(x))
            assert (lp == -math.inf) if expected == 0 else (math.exp(lp) == pytest.approx(expected))


# ============================================================================
# CRPS Tests
# ============================================================================


class TestTruncatedNormalCrps:
    """Tests for the closed-form CRPS."""

    def test_matches_normal_formula(self) -> None:
        """Without truncation the CRPS is the Gaussian closed form."""
        mu, sigma, x = 1.0, 2.0, 2.5
        z = (x - mu) / sigma
        expected = sigma * (
            z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z) - 1 / math.sqrt(math.pi)
        )
        assert tn_crps(TruncatedNormal(mu, sigma), x) == pytest.approx(expected, rel=1e-12)

    def test_against_quadrature(self) -> None:
        """Closed form agrees with quadrature for random distributions and observations."""
        rng = np.random.default_rng(5)
        for _ in range(500):
            d = random_tn(rng)
            x = rng.uniform(d.lower - d.sigma, d.upper + d.sigma)
            oracle = crps_quadrature(d.cdf, d.lower, d.upper, x, epsrel=1e-11)
            assert tn_crps(d, x) == pytest.approx(oracle, abs=1e-6)

    def test_reflected_branch(self) -> None:
        """Bounds above the location take the reflected evaluation accurately."""
        d = TruncatedNormal(0.0, 1.0, 5.0, 8.0)
        for x in (4.0, 5.5, 7.9, 9.0):
            oracle = crps_quadrature(d.cdf, d.lower, d.upper, x, epsrel=1e-11)
            assert tn_crps(d, x) == pytest.approx(oracle, abs=1e-8)

    def test_outside_adds_distance(self) -> None:
        """An observation beyond a bound adds its distance to the bound."""
        d = TruncatedNormal(0.0, 1.0, -1.0, 1.0)
        assert tn_crps(d, 3.0) == pytest.approx(tn_crps(d, 1.0) + 2.0, abs=1e-12)

    def test_array_broadcasts(self) -> None:
        """The array kernel broadcasts observations against one distribution."""
        d = TruncatedNormal(0.5, 0.7, 0.0, 3.0)
        xs = np.array([0.1, 0.5, 2.0])
        values = tn_crps_array(xs, d.mu, d.sigma, d.lower, d.upper)
        assert values.shape == (3,)
        for x, v in zip(xs, values, strict=True):
            assert v == pytest.approx(tn_crps(d, float(x)), abs=1e-15)

    def test_expected_score_minimised_by_truth(self) -> None:
        """Averaged over draws from the truth, no misspecified forecast scores lower."""
        truth = TruncatedNormal(1.0, 1.0, 0.0, 5.0)
        y = tn_sample(truth, 20_000, np.random.default_rng(8))

        def mean_score(mu: float, sigma: float) -> float:
            return float(tn_crps_array(y, mu, sigma, 0.0, 5.0).mean())

        best = mean_score(truth.mu, truth.sigma)
        for mu, sigma in ((1.5, 1.0), (0.5, 1.0), (1.0, 1.6), (1.0, 0.6), (2.0, 0.5)):
            assert mean_score(mu, sigma) > best


class TestFarTail:
    """Tests for intervals far from the location."""

    @pytest.mark.parametrize("shift", [10.0, 27.0, 40.0])
    @pytest.mark.parametrize("side", [1.0, -1.0])
    def test_crps_against_quadrature(self, shift: float, side: float) -> None:
        """The closed form stays finite and exact tens of sigmas into either tail."""
        lower = shift if side > 0 else -shift - 1.0
        d = TruncatedNormal(0.0, 1.0, lower, lower + 1.0)
        for x in (lower - 0.5, lower + 0.2, lower + 0.5, lower + 0.9, lower + 2.0):
            oracle = crps_quadrature(d.cdf, d.lower, d.upper, x, epsrel=1e-11)
            value = tn_crps(d, x)
            assert math.isfinite(value)
            assert value == pytest.approx(oracle, abs=1e-7)

    @pytest.mark.parametrize("lower", [40.0, -41.0])
    def test_cdf_and_quantile(self, lower: float) -> None:
        """CDF and quantiles stay inside (0, 1) and the bounds."""
        d = TruncatedNormal(0.0, 1.0, lower, lower + 1.0)
        mid = tn_cdf(d, lower + 0.5)
        assert 0.0 < mid < 1.0
        assert tn_pdf(d, lower + 0.5) > 0.0
        for p in (0.01, 0.5, 0.99):
            x = tn_quantile(d, p)
            assert lower <= x <= lower + 1.0
            assert tn_cdf(d, x) == pytest.approx(p, abs=1e-9)

    def test_small_sigma_past_bound(self) -> None:
        """A location just outside the bounds with a tiny scale still scores."""
        values = tn_crps_array(np.array([-3.0, -2.5]), 2.807, 0.158, -4.35, -2.35)
        assert np.all(np.isfinite(values))
        d = TruncatedNormal(2.807, 0.158, -4.35, -2.35)
        oracle = crps_quadrature(d.cdf, d.lower, d.upper, -3.0, epsrel=1e-11)
        assert float(values[0]) == pytest.approx(oracle, abs=1e-6)

    def test_ratios_finite(self) -> None:
        """Mean and variance corrections survive a vanishing truncation mass."""
        assert math.isfinite(float(mean_offset_ratio(60.0, 61.0)))
        m = tn_moments(TruncatedNormal(0.0, 1.0, 60.0, 61.0))
        assert 60.0 < m.mean < 61.0
        assert 0.0 < m.variance < 1.0


# ============================================================================
# Mixture Tests
# ============================================================================


@pytest.fixture
def mixture() -> TruncatedNormalMixture:
    """A three-component, lower-truncated mixture with unequal weights."""
    return TruncatedNormalMixture.from_arrays(
        [1.0, 2.5, 4.0], [0.6, 0.8, 1.2], [0.2, 0.5, 0.3], lower=0.0, upper=6.0
    )


class TestTruncatedNormalMixture:
    """Tests for the TruncatedNormalMixture type."""

    def test_rejects_unnormalized_weights(self) -> None:
        """Weights must sum to one."""
        with pytest.raises(DomainError, match="sum to 1"):
            TruncatedNormalMixture.from_arrays([0.0, 1.0], 1.0, [0.5, 0.6], 0.0, 2.0)

    def test_rejects_negative_weights(self) -> None:
        """Weights must be nonnegative."""
        with pytest.raises(DomainError, match="nonnegative"):
            TruncatedNormalMixture.from_arrays([0.0, 1.0], 1.0, [-0.5, 1.5], 0.0, 2.0)

    def test_rejects_mixed_bounds(self) -> None:
        """Components must share their bounds."""
        comps = (TruncatedNormal(0.0, 1.0, 0.0, 2.0), TruncatedNormal(0.0, 1.0, 0.0, 3.0))
        with pytest.raises(DomainError, match="same bounds"):
            TruncatedNormalMixture(comps, (0.5, 0.5))

    def test_single_component_reduces(self) -> None:
        """A one-component mixture is the component itself."""
        d = TruncatedNormal(1.0, 0.5, 0.0, 3.0)
        m = TruncatedNormalMixture((d,), (1.0,))
        assert mix_cdf(m, 1.3) == pytest.approx(tn_cdf(d, 1.3), abs=1e-15)
        assert mix_quantile(m, 0.3) == pytest.approx(tn_quantile(d, 0.3), abs=1e-12)
        assert mix_crps(m, 0.7) == pytest.approx(tn_crps(d, 0.7), abs=1e-7)

    def test_pdf_normalization(self, mixture: TruncatedNormalMixture) -> None:
        """The mixture density integrates to one."""
        assert quad(lambda x: mix_pdf(mixture, x), 0.0, 6.0) == pytest.approx(1.0, abs=1e-9)

    def test_cdf_is_weighted_sum(self, mixture: TruncatedNormalMixture) -> None:
        """The mixture CDF is the weighted sum of component CDFs."""
        for x in (0.5, 2.0, 3.7, 5.9):
            expected = sum(
                w * tn_cdf(c, x) for c, w in zip(mixture.components, mixture.weights, strict=True)
            )
            assert mix_cdf(mixture, x) == pytest.approx(expected, abs=1e-14)

    def test_quantile_round_trip(self, mixture: TruncatedNormalMixture) -> None:
        """Mixture quantiles invert the CDF."""
        for p in (1e-6, 0.05, 0.2, 0.5, 0.8, 0.975, 1 - 1e-6):
            assert mix_cdf(mixture, mix_quantile(mixture, p)) == pytest.approx(p, abs=1e-9)

    def test_quantile_identical_components(self) -> None:
        """Coinciding components bracket the root at a single point."""
        m = TruncatedNormalMixture.from_arrays([2.0, 2.0], 1.0, [0.5, 0.5], 0.0, 5.0)
        assert mix_quantile(m, 0.5) == pytest.approx(
            tn_quantile(TruncatedNormal(2.0, 1.0, 0.0, 5.0), 0.5), abs=1e-9
        )

    def test_moments(self, mixture: TruncatedNormalMixture) -> None:
        """Mixture mean and variance agree with quadrature."""
        mean = quad(lambda x: x * mix_pdf(mixture, x), 0.0, 6.0)
        var = quad(lambda x: (x - mean) ** 2 * mix_pdf(mixture, x), 0.0, 6.0)
        moments = mix_moments(mixture)
        assert moments.mean == pytest.approx(mean, abs=1e-8)
        assert moments.variance == pytest.approx(var, abs=1e-8)

    def test_crps_against_trapezoid(self, mixture: TruncatedNormalMixture) -> None:
        """Quadrature CRPS agrees with a dense trapezoid rule split at the observation."""
        for x in (0.3, 2.2, 4.4, 7.0):
            xc = min(x, 6.0)
            left = np.linspace(0.0, xc, 10_001)
            right = np.linspace(xc, 6.0, 10_001)
            f_left = np.array([mix_cdf(mixture, t) for t in left])
            f_right = np.array([mix_cdf(mixture, t) for t in right])
            oracle = (
                float(integrate.trapezoid(f_left**2, left))
                + float(integrate.trapezoid((1 - f_right) ** 2, right))
                + (x - xc)
            )
            assert mix_crps(mixture, x) == pytest.approx(oracle, abs=1e-5)

    def test_crps_untruncated_mixture(self) -> None:
        """Infinite bounds integrate over the effective support."""
        m = TruncatedNormalMixture.from_arrays([-1.0, 1.0], 1.0, [0.5, 0.5], -math.inf, math.inf)
        # E|X - x| - E|X - X'| / 2 for a two-component normal mixture
        def pair(d: float, s: float) -> float:
            return s * 2 * stats.norm.pdf(d / s) + d * (2 * stats.norm.cdf(d / s) - 1)

        x = 0.4
        e_abs = 0.5 * (pair(x + 1.0, 1.0) + pair(x - 1.0, 1.0))
        s2 = math.sqrt(2.0)
        e_pair = 0.25 * (pair(0.0, s2) * 2 + pair(2.0, s2) * 2)
        assert mix_crps(m, x) == pytest.approx(e_abs - 0.5 * e_pair, abs=1e-6)

    def test_support_covers_mass(self, mixture: TruncatedNormalMixture) -> None:
        """The effective support leaves only tail mass outside."""
        lo, hi = mixture.support(1e-10)
        assert mix_cdf(mixture, lo) <= 1e-9
        assert mix_cdf(mixture, hi) >= 1 - 1e-9

    @pytest.mark.parametrize("sigma", [1e-1, 1e-2, 1e-3])
    def test_crps_collapses_to_absolute_error(self, sigma: float) -> None:
        """As the scale vanishes the CRPS approaches the weighted absolute errors."""
        m = TruncatedNormalMixture.from_arrays([2.0, 2.5], sigma, [0.5, 0.5], 0.0, 5.0)
        x = 3.1
        # sum_k w_k |x - mu_k| - 1/2 sum_jk w_j w_k |mu_j - mu_k|
        point_mass = 0.5 * 1.1 + 0.5 * 0.6 - 0.5 * 2 * 0.25 * 0.5
        assert abs(mix_crps(m, x) - point_mass) <= sigma

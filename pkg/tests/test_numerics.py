import math

import numpy as np
import pytest

from qregions.numerics import (
    Rng,
    chi_squared_cdf,
    dqr_theoretical_coverage,
    empirical_quantile,
    std_normal_cdf,
    std_normal_inv_cdf,
)


def normal_cdf_quadrature(z: float, steps: int = 20_000) -> float:
    """Simpson integration of the standard normal density on [0, |z|]."""
    a, b = 0.0, abs(z)
    if b == 0.0:
        return 0.5
    t = np.linspace(a, b, 2 * steps + 1)
    f = np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    h = (b - a) / (2 * steps)
    integral = h / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum())
    return 0.5 + integral if z > 0 else 0.5 - integral


def inverse_normal_bisection(p: float) -> float:
    lo, hi = -10.0, 10.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if normal_cdf_quadrature(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi2_cdf_quadrature(x: float, r: int, steps: int = 40_000) -> float:
    """Simpson integration of the chi-squared density on [0, x].

    Substituting t = s^2 removes the endpoint singularity for r < 2, so
    the integrand 2 s^(r-1) exp(-s^2/2) is smooth for every r >= 1.
    """
    s = np.linspace(0.0, math.sqrt(x), 2 * steps + 1)
    f = 2.0 * s ** (r - 1) * np.exp(-0.5 * s * s)
    f /= 2.0 ** (r / 2.0) * math.exp(math.lgamma(r / 2.0))
    h = math.sqrt(x) / (2 * steps)
    return float(h / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum()))


class TestEmpiricalQuantile:
    def test_small_cases(self):
        assert empirical_quantile([3, 1, 2], 2) == 2
        assert empirical_quantile([5], 1) == 5

    def test_matches_full_sort_oracle(self):
        draws = Rng(7).uniform(size=100)
        oracle = sorted(draws.tolist())
        assert empirical_quantile(draws, 90) == oracle[89]

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            empirical_quantile([], 1)
        with pytest.raises(ValueError):
            empirical_quantile([1.0, 2.0], 0)
        with pytest.raises(ValueError):
            empirical_quantile([1.0, 2.0], 3)

    def test_ties_are_kept(self):
        assert empirical_quantile([2.0, 1.0, 2.0, 1.0], 2) == 1.0
        assert empirical_quantile([2.0, 1.0, 2.0, 1.0], 3) == 2.0


class TestInverseNormal:
    def test_median_is_zero(self):
        assert std_normal_inv_cdf(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_extreme_directional_level(self):
        # The 99.38% point sits near 2.50.
        assert std_normal_inv_cdf(0.9938) == pytest.approx(2.50, abs=0.005)

    def test_against_bisection_oracle(self):
        for p in (0.05, 0.01, 0.3, 0.9, 0.975):
            assert std_normal_inv_cdf(p) == pytest.approx(
                inverse_normal_bisection(p), abs=1e-6
            )
        assert std_normal_inv_cdf(0.05) == pytest.approx(-1.6449, abs=1e-4)

    def test_roundtrip_accuracy(self):
        for p in np.linspace(1e-6, 1 - 1e-6, 101):
            assert abs(std_normal_cdf(std_normal_inv_cdf(p)) - p) <= 1e-8

    def test_domain_errors(self):
        for p in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                std_normal_inv_cdf(p)


class TestChiSquaredCdf:
    def test_zero_mass_at_origin(self):
        for r in (1, 2, 3, 7):
            assert chi_squared_cdf(0.0, r) == 0.0

    def test_two_dof_closed_form(self):
        # For r=2 the CDF is 1 - exp(-x/2).
        assert chi_squared_cdf(2 * math.log(2), 2) == pytest.approx(0.5, abs=1e-12)
        for x in (0.3, 1.0, 5.0):
            assert chi_squared_cdf(x, 2) == pytest.approx(1 - math.exp(-x / 2), abs=1e-12)

    def test_against_quadrature_oracle(self):
        assert chi_squared_cdf(6.2514, 3) == pytest.approx(
            chi2_cdf_quadrature(6.2514, 3), abs=1e-8
        )
        assert chi_squared_cdf(6.2514, 3) == pytest.approx(0.90, abs=0.001)
        for x, r in ((1.2, 1), (4.5, 4), (10.0, 6)):
            assert chi_squared_cdf(x, r) == pytest.approx(
                chi2_cdf_quadrature(x, r), abs=1e-7
            )

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            chi_squared_cdf(-1.0, 3)
        with pytest.raises(ValueError):
            chi_squared_cdf(1.0, 0)


class TestTheoreticalCoverage:
    def test_alpha_half_gives_zero(self):
        assert dqr_theoretical_coverage(0.5, 3) == 0.0

    def test_extreme_level_reaches_ninety_percent(self):
        assert dqr_theoretical_coverage(0.0062, 3) == pytest.approx(0.90, abs=0.005)

    def test_one_dimension_is_two_sided_interval(self):
        # r=1 reduces to P(|Z| <= -Phi^-1(alpha)) = 1 - 2 alpha.
        assert dqr_theoretical_coverage(0.1, 1) == pytest.approx(0.80, abs=1e-9)

    def test_two_dimension_closed_form(self):
        for alpha in (0.01, 0.05, 0.1, 0.25):
            z = std_normal_inv_cdf(alpha)
            assert abs(
                dqr_theoretical_coverage(alpha, 2) - (1 - math.exp(-z * z / 2))
            ) <= 1e-7

    def test_monotone_in_alpha_and_dimension(self):
        alphas = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5]
        for r in (1, 2, 3, 4):
            covs = [dqr_theoretical_coverage(a, r) for a in alphas]
            assert all(c1 > c2 for c1, c2 in zip(covs, covs[1:]))
        for alpha in (0.05, 0.1, 0.25):
            covs = [dqr_theoretical_coverage(alpha, r) for r in (1, 2, 3, 4)]
            assert all(c1 > c2 for c1, c2 in zip(covs, covs[1:]))

    def test_matches_monte_carlo_oracle(self):
        rng = Rng(20240)
        for r in (1, 2, 3, 4):
            z = rng.standard_normal(size=(1_000_000 // 4, r))
            norms = np.linalg.norm(z, axis=1)
            for alpha in (0.05, 0.1):
                radius = -std_normal_inv_cdf(alpha)
                mc = float(np.mean(norms <= radius))
                assert mc == pytest.approx(
                    dqr_theoretical_coverage(alpha, r), abs=0.003
                )


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = Rng(123), Rng(123)
        assert np.array_equal(a.uniform(size=10_000), b.uniform(size=10_000))
        assert np.array_equal(a.standard_normal(size=101), b.standard_normal(size=101))
        assert np.array_equal(a.permutation(500), b.permutation(500))

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).uniform(size=100), Rng(2).uniform(size=100))

    def test_spawn_is_order_independent(self):
        parent = Rng(9)
        child_a = parent.spawn(3).uniform(size=5)
        parent.uniform(size=100)  # consume parent state
        child_b = Rng(9).spawn(3).uniform(size=5)
        assert np.array_equal(child_a, child_b)
        assert not np.array_equal(child_a, Rng(9).spawn(4).uniform(size=5))

    def test_normal_moments(self):
        z = Rng(5).standard_normal(size=200_000)
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01

    def test_subset_distinct(self):
        idx = Rng(11).subset(50, 32)
        assert len(set(idx.tolist())) == 32
        assert idx.min() >= 0 and idx.max() < 50

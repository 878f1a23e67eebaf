"""Kernel tests: each numeric routine is checked against an independent
oracle (exact combinatorics, literal enumeration, brute-force scans, or
Bernoulli simulation) before its frozen worked values are asserted."""

import itertools
import math
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tarsim.errors import (
    NoKneeError,
    ParameterError,
    UndefinedCorrelationError,
    UndefinedEstimateError,
    UndefinedVarianceError,
)
from tarsim.estimators import (
    hypergeometric_cdf,
    knee_point,
    pearson_corr,
    quant_ci,
    quant_counts,
    quant_recall,
    quant_variance,
)

# ----------------------------------------------------------------------
# Oracles (independent of the implementations they check)
# ----------------------------------------------------------------------


def exact_hypergeom_cdf(N, K, n, k):
    """CDF by exact integer counting of favorable draws."""
    lo = max(0, n + K - N)
    hi = min(n, K)
    if k < lo:
        return 0.0
    if k >= hi:
        return 1.0
    favorable = sum(comb(K, x) * comb(N - K, n - x) for x in range(lo, k + 1))
    return favorable / comb(N, n)


def enumerated_hypergeom_cdf(N, K, n, k):
    """CDF by literally enumerating every size-n draw (small N only)."""
    population = [1] * K + [0] * (N - K)
    hits = 0
    total = 0
    for draw in itertools.combinations(range(N), n):
        total += 1
        if sum(population[i] for i in draw) <= k:
            hits += 1
    return hits / total


def brute_force_knee(points):
    """Scan every interior point with exact integer distance numerators."""
    s, rel_s = points[-1]
    best = None
    best_num = -1
    for x, y in points[1:-1]:
        num = abs(rel_s * x - s * y)
        if num > best_num:
            best_num = num
            best = (x, y)
    i, rel_i = best
    rho = (rel_i / i) * ((s - i) / (rel_s - rel_i + 1))
    return i, rho


def variance_bound_fraction(reviewed, unreviewed):
    """Closed-form bound evaluated in exact rational arithmetic."""
    rev = [Fraction(p) for p in reviewed]
    unrev = [Fraction(p) for p in unreviewed]
    r_hat = sum(rev)
    u_hat = sum(unrev)
    total = r_hat + u_hat
    var_r = sum(p * (1 - p) for p in rev)
    var_u = sum(p * (1 - p) for p in unrev)
    return var_r / total**2 + r_hat**2 * (var_r + var_u) / total**4


def bernoulli_recall_draws(rng, reviewed_p, unreviewed_p, n_draws):
    """Simulated recall D_R / (D_R + D_U) under independent Bernoulli labels."""
    rev = np.asarray(reviewed_p)
    unrev = np.asarray(unreviewed_p)
    d_r = (rng.random((n_draws, rev.size)) < rev).sum(axis=1)
    d_u = (rng.random((n_draws, unrev.size)) < unrev).sum(axis=1)
    total = d_r + d_u
    assert np.all(total > 0), "degenerate draw: all labels zero"
    return d_r / total


# ----------------------------------------------------------------------
# quant_counts
# ----------------------------------------------------------------------


class TestQuantCounts:
    def test_worked_sums(self):
        assert quant_counts([0.9, 0.8], [0.3, 0.1]) == pytest.approx((1.7, 0.4))

    def test_empty_unreviewed(self):
        r_hat, u_hat = quant_counts([0.5, 0.5], [])
        assert u_hat == 0.0
        assert r_hat == 1.0

    def test_uniform_half(self):
        r_hat, u_hat = quant_counts([0.5] * 6, [0.5] * 10)
        assert (r_hat, u_hat) == (3.0, 5.0)

    @pytest.mark.parametrize("bad", [[1.2], [-0.1], [float("nan")], [float("inf")]])
    def test_out_of_domain(self, bad):
        with pytest.raises(ParameterError):
            quant_counts(bad, [0.5])
        with pytest.raises(ParameterError):
            quant_counts([0.5], bad)


# ----------------------------------------------------------------------
# quant_recall
# ----------------------------------------------------------------------


class TestQuantRecall:
    def test_worked_estimate(self):
        est = quant_recall([0.9, 0.8], [0.3, 0.1])
        assert est == pytest.approx(1.7 / 2.1)

    def test_confident_limit(self):
        eps = 1e-9
        est = quant_recall([1 - eps, 1 - eps], [eps, eps])
        assert est == pytest.approx(1.0, abs=1e-8)

    def test_true_numerator_mode(self):
        est = quant_recall([0.9, 0.8], [0.3, 0.1], reviewed_relevant_count=2,
                           mode="true-numerator")
        assert est == pytest.approx(2.0 / 2.4)

    def test_undefined_when_all_zero(self):
        with pytest.raises(UndefinedEstimateError):
            quant_recall([0.0], [0.0])
        with pytest.raises(UndefinedEstimateError):
            quant_recall([0.5], [0.0], reviewed_relevant_count=0,
                         mode="true-numerator")

    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            quant_recall([0.5], [0.5], mode="bogus")

    def test_monte_carlo_mean_matches_point(self):
        # 500-doc instance; the simulated mean recall and the ratio-of-sums
        # point estimate must agree within 3 standard errors of the mean.
        rng = np.random.default_rng(2024)
        reviewed = rng.uniform(0.1, 0.9, size=300)
        unreviewed = rng.uniform(0.1, 0.9, size=200)
        draws = bernoulli_recall_draws(rng, reviewed, unreviewed, 10_000)
        point = quant_recall(reviewed, unreviewed)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - point) <= 3 * se

    @given(
        st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30),
        st.lists(st.floats(0.0, 1.0), min_size=0, max_size=30),
    )
    def test_always_within_unit_interval(self, reviewed, unreviewed):
        try:
            est = quant_recall(reviewed, unreviewed)
        except UndefinedEstimateError:
            return
        assert 0.0 <= est <= 1.0


# ----------------------------------------------------------------------
# quant_variance
# ----------------------------------------------------------------------


class TestQuantVariance:
    def test_worked_bound_matches_exact_arithmetic(self):
        reviewed = [Fraction(9, 10), Fraction(8, 10)]
        unreviewed = [Fraction(3, 10), Fraction(1, 10)]
        oracle = float(variance_bound_fraction(reviewed, unreviewed))
        got = quant_variance([0.9, 0.8], [0.3, 0.1])
        assert got == pytest.approx(oracle, rel=1e-14)
        # components the closed form is built from
        assert oracle == pytest.approx(0.25 / 4.41 + (2.89 / 19.4481) * 0.55)

    def test_zero_at_degenerate_probabilities(self):
        assert quant_variance([1.0, 1.0], [0.0, 1.0]) == 0.0

    def test_undefined_when_all_zero(self):
        with pytest.raises(UndefinedVarianceError):
            quant_variance([0.0, 0.0], [0.0])

    def test_upper_bounds_monte_carlo_variance(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            reviewed = rng.uniform(0.1, 0.9, size=120)
            unreviewed = rng.uniform(0.1, 0.9, size=80)
            draws = bernoulli_recall_draws(rng, reviewed, unreviewed, 20_000)
            mc_var = draws.var(ddof=1)
            centered = (draws - draws.mean()) ** 2
            se_var = math.sqrt(
                max(centered.var(ddof=1), 0.0) / draws.size
            )
            assert quant_variance(reviewed, unreviewed) >= mc_var - 3 * se_var

    @given(
        st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30),
        st.lists(st.floats(0.0, 1.0), min_size=0, max_size=30),
    )
    def test_nonnegative(self, reviewed, unreviewed):
        try:
            assert quant_variance(reviewed, unreviewed) >= 0.0
        except UndefinedVarianceError:
            pass


# ----------------------------------------------------------------------
# quant_ci
# ----------------------------------------------------------------------


class TestQuantCI:
    def test_degenerate_interval(self):
        est = quant_ci([1.0, 1.0], [0.0])
        assert est.variance_bound == 0.0
        assert est.ci_lower == est.ci_upper == est.point

    def test_worked_interval(self):
        est = quant_ci([0.9, 0.8], [0.3, 0.1])
        assert est.point == pytest.approx(0.8095238095238095)
        assert est.ci_upper - est.ci_lower == pytest.approx(2 * 0.7440959383943286)
        assert est.ci_lower == pytest.approx(0.0654278711294809)
        assert est.ci_lower_clamped == pytest.approx(est.ci_lower)
        assert est.ci_upper_clamped == 1.0

    def test_lower_bound_approaches_point_with_confident_mass(self):
        # Growing numbers of near-certain reviewed documents shrink the
        # interval toward the point estimate.
        gaps = []
        for n in (10, 100, 1000):
            reviewed = [0.999] * n
            unreviewed = [0.001] * 5
            est = quant_ci(reviewed, unreviewed)
            gaps.append(est.point - est.ci_lower)
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-2

    @given(
        st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30),
        st.lists(st.floats(0.0, 1.0), min_size=0, max_size=30),
    )
    def test_lower_never_exceeds_point(self, reviewed, unreviewed):
        try:
            est = quant_ci(reviewed, unreviewed)
        except (UndefinedEstimateError, UndefinedVarianceError):
            return
        assert est.ci_lower <= est.point <= est.ci_upper


# ----------------------------------------------------------------------
# knee_point
# ----------------------------------------------------------------------


def _random_gain_curve(rng):
    n_rounds = int(rng.integers(2, 40))
    batch = int(rng.integers(1, 300))
    xs = [0, 1] + [1 + k * batch for k in range(1, n_rounds + 1)]
    gains = [0, 1]
    for k in range(1, n_rounds + 1):
        gains.append(gains[-1] + int(rng.integers(0, batch + 1)))
    if gains[-1] == gains[1]:  # ensure a usable chord beyond the seed
        gains[-1] += 1
    return list(zip(xs, gains))


class TestKneePoint:
    def test_worked_example(self):
        geometry = knee_point([(0, 0), (200, 180), (400, 260), (600, 300)], 600)
        oracle_i, oracle_rho = brute_force_knee(
            [(0, 0), (200, 180), (400, 260), (600, 300)]
        )
        assert (oracle_i, geometry.knee_index) == (200, 200)
        assert geometry.rho == pytest.approx(oracle_rho)
        assert geometry.rho == pytest.approx(0.9 * 400 / 121)

    def test_collinear_curve_picks_first_interior(self):
        points = [(0, 0), (100, 50), (200, 100), (300, 150)]
        geometry = knee_point(points, 300)
        assert geometry.knee_index == 100
        # slope ratio stays near 1 apart from the +1 smoothing
        assert geometry.rho == pytest.approx(0.5 * 200 / 101)

    def test_requires_origin(self):
        with pytest.raises(ParameterError):
            knee_point([(0, 5), (100, 50), (200, 80)], 200)

    def test_no_knee_for_flat_curve(self):
        with pytest.raises(NoKneeError):
            knee_point([(0, 0), (100, 0), (200, 0)], 200)

    def test_requires_three_points(self):
        with pytest.raises(ParameterError):
            knee_point([(0, 0), (200, 80)], 200)

    def test_matches_brute_force_on_random_curves(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            points = _random_gain_curve(rng)
            geometry = knee_point(points, points[-1][0])
            oracle_i, oracle_rho = brute_force_knee(points)
            assert geometry.knee_index == oracle_i
            assert geometry.rho == pytest.approx(oracle_rho, rel=1e-12)


# ----------------------------------------------------------------------
# hypergeometric_cdf
# ----------------------------------------------------------------------


class TestHypergeometricCdf:
    def test_enumerated_case(self):
        # 80 of the 120 possible 3-draws from a 10-item urn with 4 successes
        # contain at most one success.
        assert enumerated_hypergeom_cdf(10, 4, 3, 1) == pytest.approx(2 / 3)
        assert hypergeometric_cdf(10, 4, 3, 1) == pytest.approx(2 / 3, abs=1e-14)

    def test_full_support_is_one(self):
        assert hypergeometric_cdf(10, 4, 3, 3) == 1.0
        assert hypergeometric_cdf(10, 4, 3, 99) == 1.0

    def test_no_successes(self):
        assert hypergeometric_cdf(10, 0, 3, 0) == 1.0

    def test_below_support_is_zero(self):
        # drawing 8 from 10 with 4 successes forces at least 2 successes
        assert hypergeometric_cdf(10, 4, 8, 1) == 0.0

    def test_domain_errors(self):
        with pytest.raises(ParameterError):
            hypergeometric_cdf(10, 11, 3, 1)
        with pytest.raises(ParameterError):
            hypergeometric_cdf(10, 4, 11, 1)
        with pytest.raises(ParameterError):
            hypergeometric_cdf(-1, 0, 0, 0)

    def test_matches_exact_counting_small_grid(self):
        for N in (1, 5, 9, 13):
            for K in range(N + 1):
                for n in range(N + 1):
                    for k in range(-1, min(n, K) + 2):
                        got = hypergeometric_cdf(N, K, n, k)
                        want = exact_hypergeom_cdf(N, K, n, k)
                        assert got == pytest.approx(want, abs=1e-13), (N, K, n, k)

    def test_large_parameters_stay_stable(self):
        # exact counting is intractable here; cross-check against an
        # independent library implementation instead
        from scipy.stats import hypergeom

        got = hypergeometric_cdf(800_000, 1_200, 40_000, 60)
        assert 0.0 <= got <= 1.0
        assert got == pytest.approx(
            float(hypergeom.cdf(60, 800_000, 1_200, 40_000)), abs=1e-9
        )

    @given(st.integers(0, 25), st.data())
    @settings(max_examples=200)
    def test_monotone_in_k(self, N, data):
        K = data.draw(st.integers(0, N))
        n = data.draw(st.integers(0, N))
        values = [hypergeometric_cdf(N, K, n, k) for k in range(-1, min(n, K) + 1)]
        assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))


# ----------------------------------------------------------------------
# pearson_corr
# ----------------------------------------------------------------------


class TestPearsonCorr:
    def test_identity(self):
        assert pearson_corr([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_reflection(self):
        assert pearson_corr([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)

    def test_worked_value(self):
        got = pearson_corr([1, 2, 3, 5], [1, 2, 3, 4])
        assert got == pytest.approx(6.5 / math.sqrt(8.75 * 5.0))
        assert got == pytest.approx(0.9827076298239908)

    def test_zero_variance_rejected(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson_corr([1, 1, 1], [1, 2, 3])

    def test_shape_checks(self):
        with pytest.raises(ParameterError):
            pearson_corr([1, 2], [1, 2, 3])
        with pytest.raises(ParameterError):
            pearson_corr([1], [1])

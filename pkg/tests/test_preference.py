import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duel_evolve.preference import (
    ComparisonRecord,
    PosteriorSummary,
    Prior,
    fit_map,
    fit_posterior,
    gradient,
    hessian_diagonal,
    laplace_diagonal,
    neg_log_posterior,
    win_probability,
)

# Frozen from a 30-digit mpmath bisection of t = 1 - sigmoid(2t).
T_STAR = 0.337415807171199675
H_STAR = 1.223566380242207473
SIGMOID_1 = 0.731058578630004879

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)


def random_instance(rng, max_n=20, max_records=200):
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(0, max_records + 1))
    theta = rng.normal(0, 2, n)
    log = []
    for _ in range(m):
        i, j = rng.choice(n, 2, replace=False)
        log.append(ComparisonRecord(int(i), int(j), int(rng.choice([-1, 1]))))
    return theta, log


def straight_line_nlp(theta, log, sigma0):
    total = 0.0
    for r in log:
        z = r.outcome * (theta[r.first] - theta[r.second])
        total -= math.log(1.0 / (1.0 + math.exp(-z)))
    return total + sum(t * t for t in theta) / (2 * sigma0**2)


class TestWinProbability:
    def test_symmetric_inputs(self):
        assert win_probability(0.0, 0.0) == 0.5

    def test_unit_gap(self):
        assert win_probability(1.0, 0.0) == pytest.approx(SIGMOID_1, abs=1e-10)

    @given(finite, finite)
    def test_antisymmetry(self, a, b):
        assert win_probability(a, b) + win_probability(b, a) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
    def test_non_finite(self, bad):
        with pytest.raises(ValueError):
            win_probability(bad, 0.0)


class TestRecordsAndPrior:
    def test_self_comparison_rejected(self):
        with pytest.raises(ValueError):
            ComparisonRecord(1, 1, 1)

    def test_outcome_must_be_signed_unit(self):
        with pytest.raises(ValueError):
            ComparisonRecord(0, 1, 0)

    def test_winner_loser(self):
        r = ComparisonRecord(3, 5, -1)
        assert (r.winner, r.loser) == (5, 3)

    @pytest.mark.parametrize("s", [0.0, -1.0, math.inf, math.nan])
    def test_prior_validation(self, s):
        with pytest.raises(ValueError):
            Prior(s)


class TestObjective:
    def test_empty_log_at_zero(self):
        assert neg_log_posterior(np.zeros(4), [], Prior()) == 0.0

    def test_n_records_at_zero(self):
        log = [ComparisonRecord(0, 1, 1), ComparisonRecord(2, 1, -1), ComparisonRecord(0, 2, 1)]
        assert neg_log_posterior(np.zeros(3), log, Prior(2.0)) == pytest.approx(3 * math.log(2), abs=1e-12)

    def test_matches_straight_line_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            theta, log = random_instance(rng)
            sigma0 = float(rng.uniform(0.3, 3))
            got = neg_log_posterior(theta, log, Prior(sigma0))
            assert got == pytest.approx(straight_line_nlp(theta, log, sigma0), rel=1e-10)

    def test_large_gaps_do_not_overflow(self):
        log = [ComparisonRecord(0, 1, -1)]
        val = neg_log_posterior(np.array([800.0, -800.0]), log, Prior())
        assert math.isfinite(val) and val == pytest.approx(1600 + 640000, rel=1e-12)

    def test_unknown_id(self):
        with pytest.raises(IndexError):
            neg_log_posterior(np.zeros(2), [ComparisonRecord(0, 5, 1)], Prior())

    def test_likelihood_shift_invariant(self):
        rng = np.random.default_rng(2)
        theta, log = random_instance(rng)
        flat = Prior(1e12)  # prior term negligible
        a = neg_log_posterior(theta, log, flat)
        b = neg_log_posterior(theta + 3.7, log, flat)
        assert a == pytest.approx(b, abs=1e-9)


class TestGradient:
    def test_zero_at_prior_mode(self):
        assert np.array_equal(gradient(np.zeros(5), [], Prior()), np.zeros(5))

    def test_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-5
        for _ in range(20):
            theta, log = random_instance(rng)
            prior = Prior(float(rng.uniform(0.5, 2)))
            g = gradient(theta, log, prior)
            fd = np.empty_like(theta)
            for k in range(len(theta)):
                e = np.zeros_like(theta)
                e[k] = h
                fd[k] = (neg_log_posterior(theta + e, log, prior) - neg_log_posterior(theta - e, log, prior)) / (2 * h)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))

    def test_likelihood_part_sums_to_zero(self):
        rng = np.random.default_rng(4)
        theta, log = random_instance(rng)
        prior = Prior(1.3)
        lik = gradient(theta, log, prior) - theta / 1.3**2
        assert abs(lik.sum()) < 1e-10


class TestFitMap:
    def test_empty_log(self):
        est = fit_map([], Prior(), 4)
        assert np.array_equal(est.theta, np.zeros(4)) and est.converged

    def test_single_duel_matches_bisection(self):
        est = fit_map([ComparisonRecord(0, 1, 1)], Prior(1.0))
        assert est.theta[0] == pytest.approx(T_STAR, abs=1e-8)
        assert est.theta[1] == pytest.approx(-T_STAR, abs=1e-8)

    def test_converges_and_centers(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            theta, log = random_instance(rng, max_records=300)
            est = fit_map(log, Prior(), len(theta))
            assert est.converged and est.grad_norm <= 1e-8
            assert abs(est.theta.sum()) <= 1e-6 * (1 + np.linalg.norm(est.theta))
            assert neg_log_posterior(est.theta, log, Prior()) <= neg_log_posterior(np.zeros(len(theta)), log, Prior())

    def test_warm_start_matches_cold_start(self):
        rng = np.random.default_rng(6)
        theta, log = random_instance(rng, max_records=300)
        cold = fit_map(log, Prior(), len(theta)).theta
        warm = fit_map(log, Prior(), len(theta), theta0=rng.normal(0, 3, len(theta) - 1)).theta
        np.testing.assert_allclose(warm, cold, atol=1e-7)

    def test_unregistered_candidates_sit_at_zero(self):
        est = fit_map([ComparisonRecord(0, 1, 1)], Prior(), 4)
        assert est.theta[2] == 0.0 and est.theta[3] == 0.0

    def test_n_smaller_than_log(self):
        with pytest.raises(IndexError):
            fit_map([ComparisonRecord(0, 3, 1)], Prior(), 2)

    def test_tol_positive(self):
        with pytest.raises(ValueError):
            fit_map([], Prior(), 2, tol=0.0)

    def test_max_iters_reports_non_convergence(self):
        rng = np.random.default_rng(7)
        theta, log = random_instance(rng, max_records=200)
        est = fit_map(log, Prior(), len(theta), tol=1e-300, max_iters=1)
        assert not est.converged
        assert np.all(np.isfinite(est.theta))


class TestLaplace:
    def test_zero_comparison_sigma_is_prior(self):
        s = fit_posterior([ComparisonRecord(0, 1, 1)], Prior(0.7), 3)
        assert s.sigma[2] == 0.7

    def test_single_duel_closed_form(self):
        s = fit_posterior([ComparisonRecord(0, 1, 1)], Prior(1.0))
        assert s.sigma[0] == pytest.approx(H_STAR**-0.5, abs=1e-8)
        assert s.sigma[1] == pytest.approx(H_STAR**-0.5, abs=1e-8)
        assert s.mu[0] == pytest.approx(T_STAR, abs=1e-8)

    def test_sigma_bounded_by_prior(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            theta, log = random_instance(rng)
            s = fit_posterior(log, Prior(1.5), len(theta))
            assert np.all(s.sigma > 0) and np.all(s.sigma <= 1.5)

    def test_monotone_evidence(self):
        rng = np.random.default_rng(9)
        theta, log = random_instance(rng)
        h0 = hessian_diagonal(theta, log, Prior())
        for i in range(len(theta)):
            j = (i + 1) % len(theta)
            h1 = hessian_diagonal(theta, log + [ComparisonRecord(i, j, 1)], Prior())
            assert h1[i] >= h0[i]

    def test_summary_from_prior(self):
        s = PosteriorSummary.from_prior(3, Prior(2.0))
        assert list(s.mu) == [0, 0, 0] and list(s.sigma) == [2, 2, 2]

    def test_laplace_uses_theta_as_mean(self):
        theta = np.array([0.3, -0.3])
        s = laplace_diagonal(theta, [ComparisonRecord(0, 1, 1)], Prior())
        np.testing.assert_array_equal(s.mu, theta)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_sum_zero_property(seed):
    rng = np.random.default_rng(seed)
    theta, log = random_instance(rng, max_n=12, max_records=80)
    est = fit_map(log, Prior(), len(theta))
    assert abs(est.theta.sum()) <= 1e-6 * (1 + np.linalg.norm(est.theta))
